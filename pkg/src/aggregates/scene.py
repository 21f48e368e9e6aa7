"""Problem definition: domain, loads, anchors, element inventory, settings.

A scene is a single JSON document::

    {
      "domain": {"type": "box", "min": [0, 0, 0], "max": [16, 8, 12]},
      "forbidden_regions": [],
      "loads": [{"region": {...}, "force": [0, 0, -1]}],
      "anchors": [{"region": {...}}],
      "inventory": [{"id": "ball", "shape": {"type": "sphere", ...}, "samples": 1, "count": 8}],
      "grid": {"dims": [16, 8, 12]},
      "material": {"young": 1.0, "poisson": 0.3, "ersatz": 1e-6},
      "schedule": {"alpha0": 3.0, ...},
      "seed": 0
    }
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GeometryError, Shape, shape_from_dict


class SceneError(ValueError):
    """Invalid scene document; the message starts with the offending path."""


@dataclass(frozen=True)
class Material:
    young: float = 1.0
    poisson: float = 0.3
    ersatz: float = 1e-6


@dataclass(frozen=True)
class ContinuationSchedule:
    alpha0: float = 3.0
    alpha_min: float = 0.9
    alpha_factor: float = 0.9
    beta0: float = 1.0
    beta_max: float = 2.0
    beta_factor: float = 2.0
    inner_iters: int = 30
    connectivity_threshold: float = 2.0
    sub_solver_steps: int = 10
    use_indicator: bool = True


@dataclass(frozen=True)
class LoadSpec:
    region: Shape
    force: tuple


@dataclass(frozen=True)
class AnchorSpec:
    region: Shape


@dataclass(frozen=True)
class InventoryItem:
    id: str
    shape: dict
    count: int
    samples: int = 1
    deformable: bool = False
    omega_limit: float = 0.3 * np.pi
    transform: tuple | None = None


@dataclass(frozen=True)
class GridSpec:
    dims: tuple
    origin: tuple | None = None
    cell_size: float | None = None


@dataclass(frozen=True)
class SceneConfig:
    domain: Shape
    loads: tuple
    anchors: tuple
    inventory: tuple
    grid: GridSpec
    material: Material = Material()
    schedule: ContinuationSchedule = ContinuationSchedule()
    seed: int = 0
    forbidden_regions: tuple = ()
    base_dir: str | None = field(default=None, compare=False)

    @property
    def grid_dims(self) -> tuple:
        return self.grid.dims

    def grid_geometry(self) -> tuple[np.ndarray, float, tuple]:
        """(origin, cubic cell size, dims) of the analysis grid.

        Defaults place the grid at the domain's lower bounding corner with the
        smallest cubic cell that covers the domain box.
        """
        lo, hi = self.domain.bounds()
        dims = tuple(int(n) for n in self.grid.dims)
        origin = np.asarray(self.grid.origin, float) if self.grid.origin is not None else lo
        h = self.grid.cell_size
        if h is None:
            h = float(np.max((hi - lo) / np.asarray(dims)))
        return origin, float(h), dims

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "forbidden_regions": [r.to_dict() for r in self.forbidden_regions],
            "loads": [{"region": l.region.to_dict(), "force": list(l.force)} for l in self.loads],
            "anchors": [{"region": a.region.to_dict()} for a in self.anchors],
            "inventory": [_item_to_dict(it) for it in self.inventory],
            "grid": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self.grid).items()
                     if v is not None},
            "material": asdict(self.material),
            "schedule": asdict(self.schedule),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _item_to_dict(it: InventoryItem) -> dict:
    d = {"id": it.id, "shape": it.shape, "count": it.count, "samples": it.samples,
         "deformable": it.deformable, "omega_limit": it.omega_limit}
    if it.transform is not None:
        d["transform"] = [list(r) for r in it.transform]
    return d


# --------------------------------------------------------------------------
# parsing

_TOP_KEYS = {"domain", "forbidden_regions", "loads", "anchors", "inventory", "grid", "material",
             "schedule", "seed"}


def _vec3(value, path):
    try:
        v = tuple(float(c) for c in value)
    except (TypeError, ValueError):
        raise SceneError(f"{path}: expected 3 numbers") from None
    if len(v) != 3 or not all(np.isfinite(v)):
        raise SceneError(f"{path}: expected 3 finite numbers")
    return v


def _number(d, key, default, path, cast=float):
    if key not in d:
        return default
    try:
        return cast(d[key])
    except (TypeError, ValueError):
        raise SceneError(f"{path}.{key}: expected a number") from None


def _shape(d, path, base_dir):
    if not isinstance(d, dict):
        raise SceneError(f"{path}: expected an object")
    try:
        return shape_from_dict(d, base_dir)
    except SceneError:
        raise
    except (KeyError, TypeError, ValueError, GeometryError, OSError) as exc:
        raise SceneError(f"{path}: {exc}") from None


def parse_scene(text: str, base_dir=None) -> SceneConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"$: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SceneError("$: expected an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise SceneError(f"$.{sorted(unknown)[0]}: unknown key")
    for key in ("domain", "inventory", "grid"):
        if key not in doc:
            raise SceneError(f"$.{key}: missing")

    domain = _shape(doc["domain"], "$.domain", base_dir)
    forbidden = tuple(_shape(r, f"$.forbidden_regions[{i}]", base_dir)
                      for i, r in enumerate(doc.get("forbidden_regions", [])))

    loads = []
    for i, l in enumerate(doc.get("loads", [])):
        p = f"$.loads[{i}]"
        if not isinstance(l, dict) or "region" not in l or "force" not in l:
            raise SceneError(f"{p}: expected an object with 'region' and 'force'")
        loads.append(LoadSpec(_shape(l["region"], p + ".region", base_dir), _vec3(l["force"], p + ".force")))
    anchors = []
    for i, a in enumerate(doc.get("anchors", [])):
        p = f"$.anchors[{i}]"
        if not isinstance(a, dict) or "region" not in a:
            raise SceneError(f"{p}: expected an object with 'region'")
        anchors.append(AnchorSpec(_shape(a["region"], p + ".region", base_dir)))

    inv = doc["inventory"]
    if not isinstance(inv, list):
        raise SceneError("$.inventory: expected a list")
    items = []
    for i, it in enumerate(inv):
        p = f"$.inventory[{i}]"
        if not isinstance(it, dict) or "shape" not in it:
            raise SceneError(f"{p}: expected an object with 'shape'")
        if not isinstance(it["shape"], dict):
            raise SceneError(f"{p}.shape: expected an object")
        count = _number(it, "count", 1, p, int)
        samples = _number(it, "samples", 1, p, int)
        if count < 1:
            raise SceneError(f"{p}.count: must be >= 1")
        if samples < 1:
            raise SceneError(f"{p}.samples: must be >= 1")
        transform = None
        if "transform" in it:
            try:
                m = np.asarray(it["transform"], dtype=float)
            except (TypeError, ValueError):
                raise SceneError(f"{p}.transform: expected a 3x3 matrix") from None
            if m.shape != (3, 3) or abs(np.linalg.det(m)) < 1e-12:
                raise SceneError(f"{p}.transform: expected a non-singular 3x3 matrix")
            transform = tuple(tuple(r) for r in m.tolist())
        elif "scale" in it:
            s = _number(it, "scale", 1.0, p)
            if s <= 0:
                raise SceneError(f"{p}.scale: must be positive")
            transform = tuple(tuple(r) for r in (s * np.eye(3)).tolist())
        omega = _number(it, "omega_limit", 0.3 * np.pi, p)
        if omega <= 0:
            raise SceneError(f"{p}.omega_limit: must be positive")
        items.append(InventoryItem(str(it.get("id", f"proto{i}")), it["shape"], count, samples,
                                   bool(it.get("deformable", False)), omega, transform))
    if not items:
        raise SceneError("$.inventory: empty inventory")
    ids = [it.id for it in items]
    if len(set(ids)) != len(ids):
        raise SceneError("$.inventory: duplicate prototype id")

    g = doc["grid"]
    if not isinstance(g, dict) or "dims" not in g:
        raise SceneError("$.grid.dims: missing")
    try:
        dims = tuple(int(n) for n in g["dims"])
    except (TypeError, ValueError):
        raise SceneError("$.grid.dims: expected 3 integers") from None
    if len(dims) != 3 or min(dims) < 2:
        raise SceneError("$.grid.dims: expected 3 integers >= 2")
    origin = _vec3(g["origin"], "$.grid.origin") if "origin" in g else None
    cell = _number(g, "cell_size", None, "$.grid")
    if cell is not None and cell <= 0:
        raise SceneError("$.grid.cell_size: must be positive")
    grid = GridSpec(dims, origin, cell)

    md = doc.get("material", {})
    material = Material(_number(md, "young", 1.0, "$.material"), _number(md, "poisson", 0.3, "$.material"),
                        _number(md, "ersatz", 1e-6, "$.material"))
    if material.young <= 0:
        raise SceneError("$.material.young: must be positive")
    if not 0 < material.poisson < 0.5:
        raise SceneError("$.material.poisson: must lie in (0, 0.5)")
    if not 0 < material.ersatz < 1:
        raise SceneError("$.material.ersatz: must lie in (0, 1)")

    sd = doc.get("schedule", {})
    if not isinstance(sd, dict):
        raise SceneError("$.schedule: expected an object")
    dflt = ContinuationSchedule()
    sched_kwargs = {}
    for name, val in asdict(dflt).items():
        if name == "use_indicator":
            sched_kwargs[name] = bool(sd.get(name, val))
        elif name in ("inner_iters", "sub_solver_steps"):
            sched_kwargs[name] = _number(sd, name, val, "$.schedule", int)
        else:
            sched_kwargs[name] = _number(sd, name, val, "$.schedule")
    unknown = set(sd) - set(sched_kwargs)
    if unknown:
        raise SceneError(f"$.schedule.{sorted(unknown)[0]}: unknown key")
    schedule = ContinuationSchedule(**sched_kwargs)
    if not 0 < schedule.alpha_factor < 1:
        raise SceneError("$.schedule.alpha_factor: must lie in (0, 1)")
    if schedule.beta_factor <= 1:
        raise SceneError("$.schedule.beta_factor: must be > 1")
    if schedule.inner_iters < 1:
        raise SceneError("$.schedule.inner_iters: must be >= 1")
    if schedule.alpha0 <= 0 or schedule.alpha_min <= 0 or schedule.beta0 <= 0 or schedule.beta_max <= 0:
        raise SceneError("$.schedule: alpha and beta values must be positive")

    seed = _number(doc, "seed", 0, "$", int)

    scene = SceneConfig(domain, tuple(loads), tuple(anchors), tuple(items), grid, material, schedule,
                        seed, forbidden, None if base_dir is None else str(base_dir))
    dlo, dhi = domain.bounds()
    for kind, specs in (("loads", scene.loads), ("anchors", scene.anchors)):
        for i, spec in enumerate(specs):
            lo, hi = spec.region.bounds()
            if np.any(lo > dhi) or np.any(hi < dlo):
                raise SceneError(f"$.{kind}[{i}].region: does not intersect the domain")
    return scene


def load_scene(path) -> SceneConfig:
    path = Path(path)
    return parse_scene(path.read_text(encoding="utf-8"), base_dir=path.parent)


def signed_distance(domain: Shape, x) -> np.ndarray:
    return domain.signed_distance(x)


# --------------------------------------------------------------------------
# boundary conditions


class BoundaryConditionError(ValueError):
    pass


def apply_boundary_conditions(scene: SceneConfig, mesh) -> tuple[np.ndarray, np.ndarray]:
    """Nodal load vector and sorted array of fixed dof indices.

    Each load's total force is split equally over the grid nodes inside its
    region; every dof of a node inside an anchor region is fixed.
    """
    nodes = mesh.node_positions()
    tol = 1e-9 * mesh.h
    f = np.zeros(mesh.n_dofs)
    for i, load in enumerate(scene.loads):
        hit = np.flatnonzero(load.region.contains(nodes, tol))
        if len(hit) == 0:
            raise BoundaryConditionError(f"load {i} captures no grid node")
        share = np.asarray(load.force) / len(hit)
        for a in range(3):
            np.add.at(f, 3 * hit + a, share[a])
    if not scene.anchors:
        raise BoundaryConditionError("no anchors: the stiffness system would be singular")
    fixed_nodes = set()
    for i, anchor in enumerate(scene.anchors):
        hit = np.flatnonzero(anchor.region.contains(nodes, tol))
        if len(hit) == 0:
            raise BoundaryConditionError(f"anchor {i} captures no grid node")
        fixed_nodes.update(hit.tolist())
    fn = np.array(sorted(fixed_nodes), dtype=np.int64)
    fixed = (3 * fn[:, None] + np.arange(3)).ravel()
    return f, fixed
