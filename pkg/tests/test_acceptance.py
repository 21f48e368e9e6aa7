"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import dataclasses
import time

import numpy as np
import pytest

from aggregates.connectivity import REST_FACTOR, build_connectivity_graph, contact_components
from aggregates.elements import make_instance, reparameterize_rotation, rooted_height, select_root, world_sample_positions
from aggregates.fem import Elasticity, MaterialModel, compliance, compliance_density_gradient, compliance_sum_form
from aggregates.mma import MmaState, mma_step
from aggregates.optimizer import continuation_loop, domain_constraint, initialize_layout
from aggregates.problem import Problem
from aggregates.rotations import rotation_expmap_derivative, rotation_from_expmap
from aggregates.scene import load_scene
from aggregates.sensitivity import deformable_backprop, finite_difference_check, sample_jacobian_dense
from conftest import ACCEPTANCE_LINES, SCENES, random_tree_edges, tree_prototype
from test_fem import cantilever


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_c1_end_to_end_gradient():
    t0 = time.perf_counter()
    pb = Problem(load_scene(SCENES / "two-rods.json"), solver="dense")
    prm = pb.density_params(1.5, 2.0, use_indicator=False)
    inst = initialize_layout(pb)
    lay = pb.layout(inst)
    assert lay.size == 12 and all(pb.prototypes[i.prototype].n_samples == 5 for i in inst)
    g = pb.full_gradient(inst, prm)
    rep = finite_difference_check(lambda x: pb.compliance(lay.unpack(x, inst), prm), g, lay.pack(inst),
                                  1e-5 * pb.bbox_diagonal(), kinds=pb.kind_labels(lay))
    err = max(v["max_rel"] for v in rep.groups.values())
    dt = time.perf_counter() - t0
    report(1, err <= 1e-4 and dt <= 60, f"max rel err {err:.2e} (<= 1e-4), {dt:.1f} s (<= 60 s)")


def test_c2_deformable_backprop_oracle():
    rng = np.random.default_rng(2024)
    worst, adds_ok = 0.0, True
    for _ in range(200):
        m = int(rng.integers(2, 21))
        E = random_tree_edges(m, rng)
        root = int(rng.integers(m))
        p = tree_prototype(rng.normal(size=(m, 3)), E, root)
        inst = make_instance(p, t=rng.normal(size=3), gamma=rng.normal(size=3), omega=rng.uniform(-1, 1, (m, 3)))
        G = rng.normal(size=(m, 3))
        stats = {}
        out = deformable_backprop(G, inst, p, stats)
        ref = np.einsum("sa,san->n", G, sample_jacobian_dense(inst, p))[6:]
        om = [s for s in range(m) if s != root]
        worst = max(worst, float(np.max(np.abs(out[om].ravel() - ref))))
        adds_ok &= stats["additions"] == m - 1
    report(2, worst <= 1e-10 and adds_ok, f"200 trees, max abs err {worst:.1e} (<= 1e-10), additions = m-1: {adds_ok}")


def test_c3_adjoint_check():
    mesh, f, fixed = cantilever(4)
    rho = np.random.default_rng(3).uniform(0.2, 1.0, mesh.n_cells)
    el = Elasticity(mesh, MaterialModel(), fixed)
    g = compliance_density_gradient(el.solve(rho, f, method="dense"))
    step, worst = 1e-6, 0.0
    for i in range(mesh.n_cells):
        rp, rm = rho.copy(), rho.copy()
        rp[i] += step
        rm[i] -= step
        fd = (compliance(el.solve(rp, f, method="dense")) - compliance(el.solve(rm, f, method="dense"))) / (2 * step)
        worst = max(worst, abs(g[i] - fd) / abs(fd))
    report(3, worst <= 1e-4, f"64 cells, max rel err {worst:.2e} (<= 1e-4)")


def test_c4_fem_correctness():
    mesh, f, fixed = cantilever(8)
    assert mesh.n_dofs <= 3000
    rho = np.random.default_rng(4).uniform(0.05, 1.0, mesh.n_cells)
    el = Elasticity(mesh, MaterialModel(), fixed)
    ref = el.solve(rho, f, method="dense")
    cg = el.solve(rho, f, 1e-12, "cg")
    e_u = np.linalg.norm(cg.u - ref.u) / np.linalg.norm(ref.u)
    e_c = abs(compliance(cg) - compliance_sum_form(cg)) / compliance(cg)
    report(4, e_u <= 1e-7 and e_c <= 1e-8,
           f"{mesh.n_dofs} dofs, CG vs dense {e_u:.1e} (<= 1e-7), u^T f vs energy sum {e_c:.1e} (<= 1e-8)")


def test_c5_schedule_arithmetic():
    pb = Problem(load_scene(SCENES / "two-rods.json"))
    start = initialize_layout(pb)
    counts = []
    for a0 in (3.0, 4.0):
        sched = dataclasses.replace(pb.scene.schedule, alpha0=a0, alpha_min=0.9, beta0=1.0, beta_max=2.0,
                                    inner_iters=30)
        trace = continuation_loop(pb, start, sched)
        its = [r["iteration"] for r in trace.records]
        assert its == list(range(1, len(its) + 1))
        counts.append(len(its))
    report(5, counts == [420, 510], f"recorded iterations alpha0=3.0: {counts[0]} (420), alpha0=4.0: {counts[1]} (510)")


def test_c6_root_selection():
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(100):
        m = int(rng.integers(1, 101))
        E = random_tree_edges(m, rng)
        best = min(rooted_height(E, m, r) for r in range(m))
        bad += rooted_height(E, m, select_root(E, m)) != best
    report(6, bad == 0, f"100 random trees, {bad} roots above the minimal height")


def test_c7_connectivity_graph():
    pb = Problem(load_scene(SCENES / "two-rods.json"))
    p = pb.prototypes["rod"]
    rng = np.random.default_rng(7)
    ok = True
    for _ in range(50):
        n = int(rng.integers(3, 11))
        inst = [make_instance(p, t=rng.uniform(0, 8, 3), gamma=rng.normal(size=3)) for _ in range(n)]
        ws = world_sample_positions(inst, pb.prototypes)
        g = build_connectivity_graph(ws.positions, ws.radius, ws.element)
        w = REST_FACTOR * (ws.radius[g.edges[:, 0]] + ws.radius[g.edges[:, 1]])
        ok &= g.spans() and np.array_equal(g.rest, w)
        ok &= bool(np.all(ws.element[g.edges[:, 0]] != ws.element[g.edges[:, 1]]))
    report(7, ok, "50 random scenes: union-find spans and W = 0.9 (r_i + r_j) exactly")


@pytest.mark.slow
def test_c8_mini_table():
    t0 = time.perf_counter()
    pb = Problem(load_scene(SCENES / "mini-table.json"))
    trace = continuation_loop(pb, initialize_layout(pb))
    dt = time.perf_counter() - t0
    ws = world_sample_positions(trace.instances, pb.prototypes)
    f = domain_constraint(ws.positions, ws.radius, pb.scene.domain)[0]
    comps = contact_components(ws.positions, ws.radius, ws.element)
    C0, C1 = trace.baseline_compliance, trace.final_compliance
    ok = C1 < C0 and f <= 1e-6 and comps == 1 and dt <= 600
    report(8, ok, f"C {C0:.4g} -> {C1:.4g} (decrease factor {C0 / C1:.3g}), f_domain {f:.1e} (<= 1e-6), "
                  f"contact components {comps} (1), {dt:.0f} s (<= 600 s)")


def test_c9_mma_sanity():
    x = np.array([0.1])
    st = MmaState(np.zeros(1), np.full(1, 2.0))
    hit = None
    for k in range(1, 51):
        x = mma_step(st, x, float((x[0] - 1) ** 2), 2 * (x - 1))
        if hit is None and abs(x[0] - 1) <= 1e-3:
            hit = k
    err = abs(x[0] - 1)
    report(9, err <= 1e-3, f"|x - 1| = {err:.1e} after 50 iterations (<= 1e-3), first within tolerance at {hit}")


def test_c10_rotation_identities():
    rng = np.random.default_rng(10)
    V = rng.normal(size=(1000, 3)) * rng.uniform(0, 3, size=(1000, 1))
    orth = max(float(np.max(np.abs(rotation_from_expmap(v).T @ rotation_from_expmap(v) - np.eye(3)))) for v in V)
    h, deriv = 1e-6, 0.0
    for v in V[:200]:
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd = (rotation_from_expmap(v + e) - rotation_from_expmap(v - e)) / (2 * h)
            d = rotation_expmap_derivative(v, i)
            deriv = max(deriv, float(np.linalg.norm(d - fd) / np.linalg.norm(d)))

    pb = Problem(load_scene(SCENES / "two-rods.json"), solver="dense")
    prm = pb.density_params(1.5, 2.0, False)
    p = pb.prototypes["rod"]
    u = np.array([0.3, -0.5, 0.7]) / np.linalg.norm([0.3, -0.5, 0.7])
    inst = [make_instance(p, t=(3.5, 4, 4), gamma=3.3 * u), make_instance(p, t=(4.5, 4, 3), gamma=(0.1, 0.2, 0.3))]
    re = [reparameterize_rotation(i) for i in inst]
    c0, c1 = pb.compliance(inst, prm), pb.compliance(re, prm)
    rep = abs(c1 - c0) / abs(c0)
    ok = orth <= 1e-12 and deriv <= 1e-6 and rep <= 1e-10 and not np.allclose(re[0].gamma, inst[0].gamma)
    report(10, ok, f"|R^T R - I| {orth:.1e} (<= 1e-12), dR FD rel {deriv:.1e} (<= 1e-6), "
                   f"reparameterization {rep:.1e} (<= 1e-10)")
