"""Element prototypes and instances.

A prototype approximates a user shape by ``m`` balls (local centers ``Y0``
and radii). An instance places a prototype in the world::

    P = R(gamma) @ A @ Y(omega) + t

where ``A`` is a fixed linear map (rotation and uniform scale), ``gamma`` an
exponential-map rotation and, for deformable prototypes, ``Y(omega)`` follows
a skeleton tree whose bones keep their length.

Point sets are stored row-wise, shape (m, 3).
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import Delaunay, QhullError, cKDTree

from .geometry import GeometryError, Shape, TriangleMesh, VoxelSDF, load_obj, shape_from_dict, \
    surface_distance, winding_number
from .rotations import rotation_expmap_derivatives, rotation_from_expmap, uniform_scale


class ElementError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SkeletonTree:
    parent: np.ndarray      # (m,), -1 at the root
    offsets: np.ndarray     # (m, 3) bone vectors Y0[s] - Y0[parent[s]], zero at the root
    root: int
    children: tuple
    order: np.ndarray       # root first, every parent before its children

    @property
    def size(self) -> int:
        return len(self.parent)

    def height(self) -> int:
        depth = np.zeros(self.size, dtype=int)
        for s in self.order[1:]:
            depth[s] = depth[self.parent[s]] + 1
        return int(depth.max())


@dataclass(frozen=True, eq=False)
class ElementPrototype:
    id: str
    mesh: TriangleMesh
    local_samples: np.ndarray
    radii: np.ndarray
    fixed_transform: np.ndarray
    occupancy: Shape
    skeleton: SkeletonTree | None = None
    omega_limit: float = 0.3 * np.pi

    @property
    def deformable(self) -> bool:
        return self.skeleton is not None

    @property
    def n_samples(self) -> int:
        return len(self.local_samples)


@dataclass(frozen=True, eq=False)
class ElementInstance:
    prototype: str
    t: np.ndarray
    gamma: np.ndarray
    omega: np.ndarray       # (m, 3); all zero for rigid prototypes
    A: np.ndarray

    def copy(self, **changes) -> "ElementInstance":
        fields = {"t": self.t.copy(), "gamma": self.gamma.copy(), "omega": self.omega.copy(),
                  "A": self.A.copy()}
        fields.update(changes)
        return replace(self, **fields)


def make_instance(proto: ElementPrototype, t=(0.0, 0.0, 0.0), gamma=(0.0, 0.0, 0.0), omega=None) -> ElementInstance:
    om = np.zeros((proto.n_samples, 3)) if omega is None else np.array(omega, dtype=float).reshape(-1, 3)
    return ElementInstance(proto.id, np.array(t, dtype=float), np.array(gamma, dtype=float), om,
                           np.array(proto.fixed_transform, dtype=float))


@dataclass(frozen=True, eq=False)
class WorldSamples:
    positions: np.ndarray   # (N, 3)
    element: np.ndarray     # (N,) instance index
    local_index: np.ndarray # (N,) sample index inside the prototype
    radius: np.ndarray      # (N,) world radius

    def __len__(self):
        return len(self.positions)


# --------------------------------------------------------------------------
# sampling


def _inside_and_distance(geometry):
    """Return (inside(points) -> bool array, surface_distance(points))."""
    if isinstance(geometry, TriangleMesh):
        if not geometry.is_closed():
            raise GeometryError("prototype mesh is not closed")
        return (lambda p: winding_number(p, geometry) > 0.5), (lambda p: surface_distance(p, geometry))
    return (lambda p: geometry.signed_distance(p) < 0), (lambda p: np.abs(geometry.signed_distance(p)))


def sample_prototype(geometry, m: int, seed=0, iterations: int = 20, oversample: int = 50):
    """Lloyd-relaxed interior samples and their radii.

    ``geometry`` is a closed TriangleMesh or a Shape. Radii are half the
    distance to the nearest other sample, clamped to the distance to the
    surface.
    """
    if m < 1:
        raise ElementError("need at least one sample")
    inside, dist = _inside_and_distance(geometry)
    lo, hi = geometry.bounds()
    rng = np.random.default_rng(seed)
    need = oversample * m
    cand = np.empty((0, 3))
    drawn = 0
    max_draws = 200 * need
    while len(cand) < need:
        if drawn >= max_draws:
            raise ElementError(f"only {len(cand)} interior candidates found for {m} samples")
        batch = rng.uniform(lo, hi, size=(max(need, 1024), 3))
        drawn += len(batch)
        cand = np.vstack([cand, batch[inside(batch)]])
    cand = cand[:need]

    Y = cand[:m].copy()
    for _ in range(iterations):
        _, owner = cKDTree(Y).query(cand)
        for s in range(m):
            mine = cand[owner == s]
            if len(mine):
                Y[s] = mine.mean(axis=0)
    # centroids of non-convex cells can fall outside: snap to the nearest candidate
    out = ~inside(Y)
    if np.any(out):
        _, owner = cKDTree(Y).query(cand)
        for s in np.flatnonzero(out):
            mine = cand[owner == s] if np.any(owner == s) else cand
            Y[s] = mine[np.argmin(np.linalg.norm(mine - Y[s], axis=1))]

    radii = dist(Y)
    if m > 1:
        nn, _ = cKDTree(Y).query(Y, k=2)
        radii = np.minimum(radii, 0.5 * nn[:, 1])
    if np.any(radii <= 0):
        raise ElementError("a sample landed on the surface")
    return Y, radii


# --------------------------------------------------------------------------
# skeleton


def delaunay_edges(points, seed=0) -> np.ndarray:
    """Unique undirected edges of the Delaunay triangulation, shape (k, 2).

    Small or degenerate point sets fall back to the complete graph or to a
    tiny seeded perturbation; either way the edge set contains the
    Euclidean minimum spanning tree.
    """
    pts = np.asarray(points, dtype=float)
    n, d = pts.shape
    if n <= d + 1:
        i, j = np.triu_indices(n, 1)
        return np.stack([i, j], axis=1)
    try:
        simplices = Delaunay(pts).simplices
    except QhullError:
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0
        rng = np.random.default_rng(seed)
        try:
            simplices = Delaunay(pts + 1e-9 * diag * rng.standard_normal(pts.shape)).simplices
        except QhullError:
            i, j = np.triu_indices(n, 1)
            return np.stack([i, j], axis=1)
    k = simplices.shape[1]
    edges = np.concatenate([simplices[:, [a, b]] for a in range(k) for b in range(a + 1, k)])
    edges.sort(axis=1)
    return np.unique(edges, axis=0)


def build_skeleton(Y, seed=0) -> np.ndarray:
    """Minimum spanning tree of the Delaunay edges of ``Y`` (Euclidean
    weights), as an (m-1, 2) edge array."""
    Y = np.asarray(Y, dtype=float)
    m = len(Y)
    if m < 2:
        raise ElementError("a skeleton needs at least two samples")
    e = delaunay_edges(Y, seed)
    w = np.linalg.norm(Y[e[:, 0]] - Y[e[:, 1]], axis=1)
    mst = minimum_spanning_tree(coo_matrix((w, (e[:, 0], e[:, 1])), shape=(m, m))).tocoo()
    out = np.stack([mst.row, mst.col], axis=1)
    out.sort(axis=1)
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def _adjacency(edges, m):
    adj = [[] for _ in range(m)]
    for a, b in np.asarray(edges, dtype=int).reshape(-1, 2):
        adj[a].append(b)
        adj[b].append(a)
    return adj


def _bfs(adj, start):
    dist = np.full(len(adj), -1)
    prev = np.full(len(adj), -1)
    dist[start] = 0
    q = deque([start])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                prev[v] = u
                q.append(v)
    return dist, prev


def select_root(edges, m: int, start: int = 0) -> int:
    """Vertex at half the diameter of the tree (minimal rooted height)."""
    if m == 1:
        return 0
    adj = _adjacency(edges, m)
    d, _ = _bfs(adj, start)
    if np.any(d < 0):
        raise ElementError("skeleton is not connected")
    y = int(np.argmax(d))
    d, prev = _bfs(adj, y)
    z = int(np.argmax(d))
    v = z
    for _ in range(int(d[z]) // 2):
        v = int(prev[v])
    return v


def rooted_height(edges, m: int, root: int) -> int:
    d, _ = _bfs(_adjacency(edges, m), root)
    return int(d.max())


def root_tree(Y, edges, root: int) -> SkeletonTree:
    Y = np.asarray(Y, dtype=float)
    m = len(Y)
    adj = _adjacency(edges, m)
    parent = np.full(m, -1)
    order = [root]
    seen = np.zeros(m, bool)
    seen[root] = True
    q = deque([root])
    while q:
        u = q.popleft()
        for v in sorted(adj[u]):
            if not seen[v]:
                seen[v] = True
                parent[v] = u
                order.append(v)
                q.append(v)
    if not seen.all():
        raise ElementError("skeleton is not connected")
    offsets = np.zeros_like(Y)
    nr = parent >= 0
    offsets[nr] = Y[nr] - Y[parent[nr]]
    children = tuple(tuple(int(c) for c in np.flatnonzero(parent == s)) for s in range(m))
    return SkeletonTree(parent, offsets, int(root), children, np.array(order))


def make_skeleton(Y, seed=0) -> SkeletonTree:
    edges = build_skeleton(Y, seed)
    return root_tree(Y, edges, select_root(edges, len(Y)))


# --------------------------------------------------------------------------
# positions


def local_sample_positions(inst: ElementInstance, proto: ElementPrototype) -> np.ndarray:
    if proto.skeleton is None:
        return proto.local_samples
    sk = proto.skeleton
    Y = np.empty_like(proto.local_samples)
    Y[sk.root] = proto.local_samples[sk.root]
    for s in sk.order[1:]:
        Y[s] = rotation_from_expmap(inst.omega[s]) @ sk.offsets[s] + Y[sk.parent[s]]
    return Y


def radius_scale(A, deformable: bool) -> float:
    s = uniform_scale(A)
    if s is None:
        if deformable:
            raise ElementError("non-uniform scale is not supported for deformable elements")
        s = abs(float(np.linalg.det(A))) ** (1.0 / 3.0)
    return s


def element_positions(inst: ElementInstance, proto: ElementPrototype) -> np.ndarray:
    Y = local_sample_positions(inst, proto)
    return Y @ (rotation_from_expmap(inst.gamma) @ inst.A).T + inst.t


def world_sample_positions(instances, prototypes) -> WorldSamples:
    P, el, li, rad = [], [], [], []
    for e, inst in enumerate(instances):
        proto = prototypes[inst.prototype]
        P.append(element_positions(inst, proto))
        m = proto.n_samples
        el.append(np.full(m, e))
        li.append(np.arange(m))
        rad.append(proto.radii * radius_scale(inst.A, proto.deformable))
    if not P:
        z = np.zeros(0)
        return WorldSamples(np.zeros((0, 3)), z.astype(int), z.astype(int), z)
    return WorldSamples(np.vstack(P), np.concatenate(el), np.concatenate(li), np.concatenate(rad))


def reparameterize_rotation(inst: ElementInstance, threshold: float = np.pi) -> ElementInstance:
    """Fold a large rotation into the fixed transform (A <- R A, gamma <- 0)."""
    if np.linalg.norm(inst.gamma) < threshold:
        return inst
    return inst.copy(A=rotation_from_expmap(inst.gamma) @ inst.A, gamma=np.zeros(3))


def occupancy_query(inst: ElementInstance, proto: ElementPrototype, x) -> np.ndarray:
    """Whether world points lie inside the element."""
    x = np.asarray(x, dtype=float)
    M = rotation_from_expmap(inst.gamma) @ inst.A
    local = np.linalg.solve(M, (x.reshape(-1, 3) - inst.t).T).T
    if proto.skeleton is None:
        inside = proto.occupancy.signed_distance(local) < 0
    else:
        Y = local_sample_positions(inst, proto)
        inside = np.zeros(len(local), bool)
        for c, r in zip(Y, proto.radii):
            inside |= np.einsum("ij,ij->i", local - c, local - c) < r * r
    return inside.reshape(x.shape[:-1])


def rotation_jacobians(inst: ElementInstance) -> np.ndarray:
    """d(R(gamma) A)/d gamma_i for i = 0..2, shape (3, 3, 3)."""
    return rotation_expmap_derivatives(inst.gamma) @ inst.A


# --------------------------------------------------------------------------
# prototype construction


_ANALYTIC = {"sphere", "box", "cylinder"}


def _prototype_key(item, seed, mesh_bytes) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"shape": item.shape, "samples": item.samples, "deformable": item.deformable,
                         "seed": seed}, sort_keys=True).encode())
    h.update(mesh_bytes)
    return h.hexdigest()[:32]


def build_prototype(item, seed=0, base_dir=None, cache_dir=None) -> ElementPrototype:
    """Build a prototype from a scene inventory item.

    Analytic shapes keep their exact signed distance as occupancy; OBJ meshes
    are recentred on their volume centroid and voxelized. With ``cache_dir``
    the sampling and voxelization results are stored in a binary sidecar
    keyed by content hash.
    """
    spec = dict(item.shape)
    kind = spec.get("type")
    A = np.eye(3) if item.transform is None else np.array(item.transform, dtype=float)
    if kind in _ANALYTIC:
        shape = shape_from_dict(spec)
        if kind == "box":
            lo, hi = shape.bounds()
            c = 0.5 * (lo + hi)
            shape = shape_from_dict({"type": "box", "min": list(lo - c), "max": list(hi - c)})
        else:
            shape = shape_from_dict({**spec, "center": [0.0, 0.0, 0.0]})
        mesh = shape.mesh()
        mesh_bytes = b""
        occupancy, geometry = shape, shape
    elif kind == "mesh":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        raw = load_obj(path)
        if not raw.is_closed():
            raise ElementError(f"{path}: prototype mesh is not closed")
        vol = raw.volume()
        if vol < 0:
            raw = TriangleMesh(raw.vertices, raw.faces[:, ::-1])
            vol = -vol
        t = raw.triangles
        w = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2]))
        centroid = (w[:, None] * t.sum(axis=1)).sum(axis=0) / (24.0 * vol)
        mesh = TriangleMesh(raw.vertices - centroid, raw.faces)
        mesh_bytes = mesh.vertices.tobytes() + mesh.faces.tobytes()
        occupancy, geometry = None, mesh
    else:
        raise ElementError(f"prototype {item.id}: unsupported shape type {kind!r}")

    cached = None
    path_npz = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        path_npz = cache_dir / f"{item.id}-{_prototype_key(item, seed, mesh_bytes)}.npz"
        if path_npz.exists():
            cached = np.load(path_npz)

    if cached is not None:
        Y, radii = cached["samples"], cached["radii"]
        if occupancy is None:
            occupancy = VoxelSDF(cached["sdf_origin"], cached["sdf_spacing"], cached["sdf_values"], spec)
    else:
        Y, radii = sample_prototype(geometry, item.samples, seed)
        if occupancy is None:
            occupancy = VoxelSDF.from_mesh(mesh, int(spec.get("resolution", 64)), source=spec)
        if path_npz is not None:
            extra = {}
            if isinstance(occupancy, VoxelSDF):
                extra = {"sdf_origin": occupancy.origin, "sdf_spacing": occupancy.spacing,
                         "sdf_values": occupancy.values}
            np.savez(path_npz, samples=Y, radii=radii, **extra)

    skeleton = None
    if item.deformable and item.samples >= 2:
        if uniform_scale(A) is None:
            raise ElementError(f"prototype {item.id}: deformable elements need a uniform scale")
        skeleton = make_skeleton(Y, seed)
    return ElementPrototype(item.id, mesh, np.asarray(Y, float), np.asarray(radii, float), A, occupancy,
                            skeleton, float(item.omega_limit))


def build_prototypes(scene, cache_dir=None) -> dict:
    out = {}
    for k, item in enumerate(scene.inventory):
        out[item.id] = build_prototype(item, seed=scene.seed * 1009 + k, base_dir=scene.base_dir,
                                       cache_dir=cache_dir)
    return out
