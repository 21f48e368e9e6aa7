"""Layout initialization, the continuation loop and final export."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .connectivity import build_connectivity_graph, optimize_connectivity
from .elements import (ElementInstance, element_positions, make_instance, radius_scale,
                       reparameterize_rotation, world_sample_positions)
from .rotations import rotation_from_expmap
from .fem import SolverError
from .mma import MmaState, mma_step
from .problem import Problem
from .sensitivity import params_gradient, rigid_param_gradient

log = logging.getLogger(__name__)

MAX_DRAWS = 1_000_000


class InitializationError(RuntimeError):
    pass


class OptimizationAborted(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# --------------------------------------------------------------------------
# domain constraint


def domain_constraint(P, radii, domain, forbidden=()):
    """Sum of max(0, d(x_s) + r_s) over samples, plus max(0, r_s - d_k(x_s))
    for every forbidden region k, with its gradient w.r.t. P (N, 3)."""
    P = np.asarray(P, dtype=float)
    radii = np.asarray(radii, dtype=float)
    G = np.zeros_like(P)
    viol = domain.signed_distance(P) + radii
    act = viol > 0
    value = float(viol[act].sum())
    if np.any(act):
        G[act] = domain.gradient(P[act])
    for region in forbidden:
        v = radii - region.signed_distance(P)
        a = v > 0
        if np.any(a):
            value += float(v[a].sum())
            G[a] -= region.gradient(P[a])
    return value, G


def _element_violation(inst, proto, domain, forbidden, margin):
    P = element_positions(inst, proto)
    r = proto.radii * radius_scale(inst.A, proto.deformable)
    return domain_constraint(P, r + margin, domain, forbidden)


def restore_feasibility(instances, prototypes, domain, forbidden=(), margin: float = 0.0,
                        lower=None, upper=None, layout=None, max_iter: int = 500):
    """Move each violating element back inside the domain.

    Projection by Newton steps on the (piecewise linear) violation of each
    element, over its translation and rotation.
    """
    out = []
    for e, inst in enumerate(instances):
        proto = prototypes[inst.prototype]
        for _ in range(max_iter):
            f, G = _element_violation(inst, proto, domain, forbidden, margin)
            if f <= 0:
                break
            gt, gg = rigid_param_gradient(G, inst, proto)
            g = np.concatenate([gt, gg])
            nrm = float(g @ g)
            if nrm == 0:
                break
            # overshoot slightly so kinks in the violation do not stall progress
            x = np.concatenate([inst.t, inst.gamma]) - 1.05 * (f / nrm) * g
            if lower is not None and layout is not None:
                o = layout.offsets[e]
                x = np.clip(x, lower[o:o + 6], upper[o:o + 6])
            inst = inst.copy(t=x[:3], gamma=x[3:])
        else:
            f, _ = _element_violation(inst, proto, domain, forbidden, margin)
        if f > 0:
            raise InitializationError(f"element {e} cannot be placed inside the domain")
        out.append(inst)
    return out


# --------------------------------------------------------------------------
# initialization


def _domain_points(domain, forbidden, n, rng):
    lo, hi = domain.bounds()
    pts = np.empty((0, 3))
    draws = 0
    while len(pts) < n:
        if draws >= MAX_DRAWS:
            raise InitializationError("domain too small: rejection sampling failed")
        batch = rng.uniform(lo, hi, size=(min(max(4 * n, 4096), MAX_DRAWS - draws), 3))
        draws += len(batch)
        ok = domain.signed_distance(batch) < 0
        for region in forbidden:
            ok &= region.signed_distance(batch) > 0
        pts = np.vstack([pts, batch[ok]])
    return pts[:n]


def _lloyd(points, candidates, iterations):
    points = points.copy()
    for _ in range(iterations):
        _, owner = cKDTree(points).query(candidates)
        for k in range(len(points)):
            mine = candidates[owner == k]
            if len(mine):
                points[k] = mine.mean(axis=0)
    return points


def initialize_layout(problem: Problem, seed: int | None = None, lloyd_iters: int = 20, cvt_steps: int = 30):
    """Random centers spread by Lloyd relaxation, random orientations, then
    projected CVT steps on the samples so every ball lies in the domain."""
    scene = problem.scene
    seed = scene.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    protos = problem.prototypes
    ids = [it.id for it in scene.inventory for _ in range(it.count)]
    n = len(ids)
    if n == 0:
        raise InitializationError("empty inventory")
    domain, forbidden = scene.domain, scene.forbidden_regions
    n_samples = sum(protos[i].n_samples for i in ids)
    cand = _domain_points(domain, forbidden, max(4000, 60 * n_samples), rng)
    centers = _lloyd(cand[:n], cand, lloyd_iters)
    rot = Rotation.random(n, random_state=rng).as_rotvec().reshape(n, 3)
    instances = [make_instance(protos[pid], t=c, gamma=g) for pid, c, g in zip(ids, centers, rot)]

    layout = problem.layout(instances)
    lower, upper = problem.parameter_bounds(instances, layout)
    margin = 1e-7 * problem.bbox_diagonal()
    instances = restore_feasibility(instances, protos, domain, forbidden, margin, lower, upper, layout)
    for _ in range(cvt_steps):
        ws = world_sample_positions(instances, protos)
        _, owner = cKDTree(ws.positions).query(cand)
        target = ws.positions.copy()
        for s in range(len(ws)):
            mine = cand[owner == s]
            if len(mine):
                target[s] = mine.mean(axis=0)
        G = ws.positions - target
        moved = []
        for e, inst in enumerate(instances):
            sel = ws.element == e
            proto = protos[inst.prototype]
            gt, gg = rigid_param_gradient(G[sel], inst, proto)
            arm = ws.positions[sel] - inst.t
            t = inst.t - gt / sel.sum()
            gamma = inst.gamma - gg / max(float(np.sum(arm * arm)), 1e-12)
            o = layout.offsets[e]
            x = np.clip(np.concatenate([t, gamma]), lower[o:o + 6], upper[o:o + 6])
            moved.append(inst.copy(t=x[:3], gamma=x[3:]))
        instances = restore_feasibility(moved, protos, domain, forbidden, margin, lower, upper, layout)
    return instances


# --------------------------------------------------------------------------
# continuation


def schedule_stages(schedule):
    """List of (label, alpha, beta) continuation stages."""
    alpha, beta = schedule.alpha0, schedule.beta0
    stages = [("init", alpha, beta)]
    while alpha > schedule.alpha_min:
        alpha = max(schedule.alpha_min, alpha * schedule.alpha_factor)
        stages.append(("alpha", alpha, beta))
    while beta < schedule.beta_max:
        beta = min(schedule.beta_max, beta * schedule.beta_factor)
        stages.append(("beta", alpha, beta))
    return stages


def expected_iterations(schedule) -> int:
    return len(schedule_stages(schedule)) * schedule.inner_iters


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    stage_times: list = field(default_factory=list)
    instances: list | None = None
    final_compliance: float | None = None
    final_constraint: float | None = None
    initial_compliance: float | None = None
    # compliance of the starting layout under the last stage's kernel, the
    # like-for-like reference for final_compliance
    baseline_compliance: float | None = None

    def record(self, **rec):
        rec = {"iteration": len(self.records) + 1, **rec}
        self.records.append(rec)
        return rec

    def write_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


def continuation_loop(problem: Problem, instances, schedule=None, callback=None, connectivity: bool = True):
    """Run the full continuation schedule of MMA updates.

    ``callback(record, instances, evaluation)`` is invoked after every
    update. Returns an OptimizationTrace whose ``instances`` hold the final
    feasible layout.
    """
    schedule = schedule or problem.scene.schedule
    scene = problem.scene
    protos = problem.prototypes
    trace = OptimizationTrace()
    instances = start = list(instances)
    h = problem.mesh.h
    diag = problem.bbox_diagonal()
    params = None
    for label, alpha, beta in schedule_stages(schedule):
        t0 = time.perf_counter()
        if label != "init":
            instances = [reparameterize_rotation(inst) for inst in instances]
        params = problem.density_params(alpha, beta)
        layout = problem.layout(instances)
        lower, upper = problem.parameter_bounds(instances, layout)
        state = MmaState(lower, upper)
        x = np.clip(layout.pack(instances), lower, upper)
        scale = None
        for _ in range(schedule.inner_iters):
            try:
                ev = problem.evaluate(instances, params)
            except SolverError as exc:
                raise OptimizationAborted(str(exc), trace) from exc
            if scale is None:
                scale = max(abs(ev.compliance), 1e-300)
                if trace.initial_compliance is None:
                    trace.initial_compliance = ev.compliance
            g, Gs = domain_constraint(ev.samples.positions, ev.samples.radius, scene.domain,
                                      scene.forbidden_regions)
            dg = params_gradient(Gs, ev.samples, instances, protos, layout)
            x = mma_step(state, x, ev.compliance / scale, ev.gradient / scale, g / h, dg / h)
            instances = layout.unpack(x, instances)
            rec = trace.record(stage=label, alpha=alpha, beta=beta, compliance=ev.compliance,
                               f_domain=g, fallback=bool(state.last_fallback))
            if callback is not None:
                callback(rec, instances, ev)
        if connectivity and label != "init" and alpha < schedule.connectivity_threshold:
            ws = world_sample_positions(instances, protos)
            graph = build_connectivity_graph(ws.positions, ws.radius, ws.element, scene.seed)
            instances, e0, e1 = optimize_connectivity(graph, instances, protos, lower, upper,
                                                      schedule.sub_solver_steps)
            log.debug("connectivity: %d edges, energy %.4g -> %.4g", len(graph.edges), e0, e1)
        trace.stage_times.append({"stage": label, "alpha": alpha, "beta": beta,
                                  "seconds": time.perf_counter() - t0})
        log.info("stage %s alpha=%.4f beta=%.3f C=%.6g", label, alpha, beta, trace.records[-1]["compliance"])

    trace.baseline_compliance = problem.compliance(start, params)
    layout = problem.layout(instances)
    lower, upper = problem.parameter_bounds(instances, layout)
    instances = restore_feasibility(instances, protos, scene.domain, scene.forbidden_regions,
                                    1e-7 * diag, lower, upper, layout)
    ev = problem.evaluate(instances, params, gradient=False)
    trace.final_compliance = ev.compliance
    trace.final_constraint = domain_constraint(ev.samples.positions, ev.samples.radius, scene.domain,
                                               scene.forbidden_regions)[0]
    trace.instances = instances
    return trace


# --------------------------------------------------------------------------
# export


def layout_to_dict(instances) -> dict:
    return {"elements": [{"prototype": inst.prototype, "t": inst.t.tolist(), "gamma": inst.gamma.tolist(),
                          "omega": inst.omega.tolist(), "A": inst.A.tolist()} for inst in instances]}


def layout_from_dict(doc) -> list:
    return [ElementInstance(e["prototype"], np.array(e["t"], float), np.array(e["gamma"], float),
                            np.array(e["omega"], float).reshape(-1, 3), np.array(e["A"], float))
            for e in doc["elements"]]


def export_final(instances, prototypes):
    """World-space meshes of all elements and skeleton polylines of the
    deformable ones: (vertices, faces, polylines)."""
    verts, faces, lines = [], [], []
    off = 0
    for inst in instances:
        proto = prototypes[inst.prototype]
        M = rotation_from_expmap(inst.gamma) @ inst.A
        verts.append(proto.mesh.vertices @ M.T + inst.t)
        faces.append(proto.mesh.faces + off)
        off += len(proto.mesh.vertices)
        if proto.skeleton is not None:
            P = element_positions(inst, proto)
            sk = proto.skeleton
            lines.append((P, [(int(sk.parent[s]), int(s)) for s in sk.order[1:]]))
    return np.vstack(verts), np.vstack(faces), lines
