"""Command-line entry points.

    aggregates init <scene.json> [--out dir]
    aggregates run <scene.json> --out dir [--snapshot-every N]
    aggregates check-grad <scene.json> [--rtol 1e-4]
    aggregates export <dir>

Exit status: 0 success, 1 check failure, 2 usage or input error. The
number of BLAS/solver threads is taken from AGGREGATES_NUM_THREADS.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .elements import ElementError, world_sample_positions
from .fem import SolverError
from .geometry import GeometryError
from .io import write_density_vtk, write_displacement_vtk, write_obj
from .optimizer import (InitializationError, OptimizationAborted, continuation_loop, domain_constraint,
                        expected_iterations, export_final, initialize_layout, layout_from_dict, layout_to_dict)
from .problem import Problem
from .scene import BoundaryConditionError, SceneError, load_scene, parse_scene
from .sensitivity import finite_difference_check

log = logging.getLogger("aggregates")

THREADS_ENV = "AGGREGATES_NUM_THREADS"
INPUT_ERRORS = (SceneError, GeometryError, BoundaryConditionError, ElementError, InitializationError,
                FileNotFoundError, IsADirectoryError, json.JSONDecodeError)


class UsageError(Exception):
    pass


def _dump_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _write_density(path, problem, grid):
    origin, h, dims = problem.scene.grid_geometry()
    write_density_vtk(path, grid.rho, dims, h, tuple(origin))


def _setup(scene_path):
    scene = load_scene(scene_path)
    return scene, Problem(scene)


def cmd_init(args) -> int:
    scene, problem = _setup(args.scene)
    instances = initialize_layout(problem)
    ws = world_sample_positions(instances, problem.prototypes)
    f, _ = domain_constraint(ws.positions, ws.radius, scene.domain, scene.forbidden_regions)
    print(f"{len(instances)} elements, {len(ws)} samples, f_domain={f:.3e}, "
          f"expected iterations {expected_iterations(scene.schedule)}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "layout.json", layout_to_dict(instances))
        s = scene.schedule
        _, grid = problem.densities(instances, problem.density_params(s.alpha0, s.beta0))
        _write_density(out / "density_init.vtk", problem, grid)
    return 0


def cmd_run(args) -> int:
    if args.snapshot_every is not None and args.snapshot_every < 1:
        raise UsageError("--snapshot-every must be >= 1")
    scene, problem = _setup(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scene.json").write_text(scene.to_json() + "\n", encoding="utf-8")
    trace_path = out / "trace.jsonl"
    t_start = time.perf_counter()
    instances = initialize_layout(problem)
    fh = open(trace_path, "w", encoding="utf-8")

    def on_iteration(rec, inst, ev):
        if args.snapshot_every and rec["iteration"] % args.snapshot_every == 0:
            name = f"density_{rec['iteration']:04d}.vtk"
            _write_density(out / name, problem, ev.density)
            _dump_json(out / f"layout_{rec['iteration']:04d}.json", layout_to_dict(inst))
            rec["snapshot"] = name
        fh.write(json.dumps(rec) + "\n")
        fh.flush()

    try:
        trace = continuation_loop(problem, instances, callback=on_iteration)
    except OptimizationAborted as exc:
        print(f"error: optimization aborted after {len(exc.trace.records)} iterations: {exc}", file=sys.stderr)
        return 1
    finally:
        fh.close()

    final = trace.instances
    _dump_json(out / "layout.json", layout_to_dict(final))
    _export(out, problem, final)
    manifest = {
        "tool": "aggregates", "version": __version__,
        "scene_hash": scene.content_hash(), "seed": scene.seed,
        "schedule": json.loads(scene.to_json())["schedule"],
        "iterations": len(trace.records),
        "initial_compliance": trace.initial_compliance,
        "baseline_compliance": trace.baseline_compliance,
        "final_compliance": trace.final_compliance,
        "final_f_domain": trace.final_constraint,
        "stages": trace.stage_times,
        "wall_seconds": time.perf_counter() - t_start,
    }
    _dump_json(out / "manifest.json", manifest)
    print(f"{len(trace.records)} iterations, C {trace.initial_compliance:.6g} -> {trace.final_compliance:.6g}")
    return 0


def _export(out, problem, instances):
    s = problem.scene.schedule
    # kernel parameters of the last continuation stage
    params = problem.density_params(min(s.alpha0, s.alpha_min), max(s.beta0, s.beta_max))
    ws, grid = problem.densities(instances, params)
    _write_density(out / "density.vtk", problem, grid)
    state = problem.solve(grid.rho)
    write_displacement_vtk(out / "displacement.vtk", problem.mesh.node_positions(), state.u, problem.mesh.dims)
    write_obj(out / "aggregate.obj", *export_final(instances, problem.prototypes))


def cmd_export(args) -> int:
    out = Path(args.dir)
    scene_file, layout_file = out / "scene.json", out / "layout.json"
    for p in (scene_file, layout_file):
        if not p.is_file():
            raise FileNotFoundError(f"{p}: missing")
    scene = parse_scene(scene_file.read_text(encoding="utf-8"), base_dir=out)
    problem = Problem(scene)
    instances = layout_from_dict(json.loads(layout_file.read_text(encoding="utf-8")))
    unknown = {i.prototype for i in instances} - set(problem.prototypes)
    if unknown:
        raise SceneError(f"$.elements: unknown prototypes {sorted(unknown)}")
    _export(out, problem, instances)
    print(f"wrote {out / 'aggregate.obj'} and {out / 'density.vtk'}")
    return 0


def cmd_check_grad(args) -> int:
    scene, problem = _setup(args.scene)
    s = scene.schedule
    # the indicator is not differentiable, so it is always off here
    params = problem.density_params(s.alpha0, s.beta0, use_indicator=False)
    instances = initialize_layout(problem)
    layout = problem.layout(instances)
    x0 = layout.pack(instances)
    problem.solver = "dense" if 3 * len(problem.mesh.node_positions()) <= 3000 else "direct"

    def func(x):
        return problem.compliance(layout.unpack(x, instances), params)

    grad = problem.full_gradient(instances, params)
    step = args.step * problem.bbox_diagonal()
    rep = finite_difference_check(func, grad, x0, step, kinds=problem.kind_labels(layout))
    print(rep.table())
    if rep.passed(args.rtol):
        print(f"PASS: all groups <= {args.rtol:g}")
        return 0
    kind, worst = rep.worst()
    i = worst["worst"]
    k = list(rep.indices).index(i)
    print(f"FAIL: worst parameter {i} ({kind}, element {layout.element[i]}): analytic {rep.analytic[k]:.9g} "
          f"numeric {rep.numeric[k]:.9g} rel err {worst['max_rel']:.3e}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aggregates", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    q = sub.add_parser("init", help="parse a scene and build the initial layout")
    q.add_argument("scene")
    q.add_argument("--out")
    q.set_defaults(func=cmd_init)
    q = sub.add_parser("run", help="run the full optimization")
    q.add_argument("scene")
    q.add_argument("--out", required=True)
    q.add_argument("--snapshot-every", type=int, default=None)
    q.set_defaults(func=cmd_run)
    q = sub.add_parser("check-grad", help="compare the gradient with finite differences")
    q.add_argument("scene")
    q.add_argument("--rtol", type=float, default=1e-4)
    q.add_argument("--step", type=float, default=1e-5, help="central step as a fraction of the domain diagonal")
    q.set_defaults(func=cmd_check_grad)
    q = sub.add_parser("export", help="write OBJ/VTK from a run directory")
    q.add_argument("dir")
    q.set_defaults(func=cmd_export)
    return p


def _threads():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"error: linear solve failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
