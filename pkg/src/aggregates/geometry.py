"""Shapes, triangle meshes and signed distance fields.

All signed distances use the convention negative inside, positive outside.
Point arguments are arrays of shape (..., 3).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# max point x triangle pairs evaluated at once by the brute-force kernels
_PAIR_BUDGET = 2_000_000


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def is_closed(self) -> bool:
        """Every undirected edge is shared by exactly two faces."""
        if len(self.faces) == 0:
            return False
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def transformed(self, linear: np.ndarray, offset=None) -> "TriangleMesh":
        v = self.vertices @ np.asarray(linear, dtype=float).T
        if offset is not None:
            v = v + np.asarray(offset, dtype=float)
        return TriangleMesh(v, self.faces)


def load_obj(path) -> TriangleMesh:
    """Read vertices and faces from a Wavefront OBJ file.

    Polygons with more than three corners are fan-triangulated; texture and
    normal indices are ignored.
    """
    verts, faces = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "v":
                    verts.append([float(c) for c in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
            except ValueError:
                raise GeometryError(f"{path}:{lineno}: malformed '{parts[0]}' record") from None
    if not verts or not faces:
        raise GeometryError(f"{path}: no triangles found")
    return TriangleMesh(np.array(verts), np.array(faces))


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = f
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = nf
    return TriangleMesh(np.array(verts) * radius + np.asarray(center, float), np.array(faces))


def box_mesh(lo, hi) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[(hi if (k >> a) & 1 else lo)[a] for a in range(3)] for k in range(8)])
    # outward-oriented quads on the 8 binary-indexed corners
    quads = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]]
    faces = []
    for a, b, c, d in quads:
        faces += [[a, b, c], [a, c, d]]
    return TriangleMesh(corners, np.array(faces))


def cylinder_mesh(center, axis, radius, half_height, segments: int = 32) -> TriangleMesh:
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    u = np.cross(axis, [1.0, 0, 0] if abs(axis[0]) < 0.9 else [0, 1.0, 0])
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    ang = np.linspace(0, 2 * np.pi, segments, endpoint=False)
    ring = radius * (np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w)
    c = np.asarray(center, float)
    bottom = c - half_height * axis + ring
    top = c + half_height * axis + ring
    verts = np.vstack([bottom, top, c - half_height * axis, c + half_height * axis])
    nb, nt = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [[i, j, segments + j], [i, segments + j, segments + i]]
        faces += [[nb, j, i], [nt, segments + i, segments + j]]
    return TriangleMesh(verts, np.array(faces))


def winding_number(points, mesh: TriangleMesh) -> np.ndarray:
    """Generalized winding number of ``mesh`` at each point (1 inside a closed,
    outward-oriented surface, 0 outside)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = mesh.triangles
    out = np.empty(len(pts))
    chunk = max(1, _PAIR_BUDGET // max(len(tri), 1))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        a, b, c = tri[None, :, 0] - p, tri[None, :, 1] - p, tri[None, :, 2] - p
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("...i,...i->...", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("...i,...i->...", a, b) * lc
               + np.einsum("...i,...i->...", b, c) * la + np.einsum("...i,...i->...", c, a) * lb)
        out[s:s + chunk] = np.arctan2(num, den).sum(axis=1) / (2 * np.pi)
    return out.reshape(np.shape(points)[:-1])


def _segment_distance2(p, a, b):
    ab = b - a
    t = np.einsum("...i,...i->...", p - a, ab) / np.maximum(np.einsum("...i,...i->...", ab, ab), 1e-300)
    t = np.clip(t, 0.0, 1.0)
    d = p - (a + t[..., None] * ab)
    return np.einsum("...i,...i->...", d, d)


def surface_distance(points, mesh: TriangleMesh) -> np.ndarray:
    """Exact unsigned distance from each point to the closest triangle."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = mesh.triangles
    A, B, C = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(B - A, C - A)
    nn = np.einsum("ij,ij->i", n, n)
    nn_safe = np.where(nn > 0, nn, 1.0)
    out = np.empty(len(pts))
    chunk = max(1, _PAIR_BUDGET // max(len(tri), 1))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk, None, :]
        ap = p - A
        h = np.einsum("...i,...i->...", ap, n) / nn_safe
        proj = p - h[..., None] * n
        # inside test via signs of sub-triangle normals
        c0 = np.einsum("...i,...i->...", np.cross(B - A, proj - A), n)
        c1 = np.einsum("...i,...i->...", np.cross(C - B, proj - B), n)
        c2 = np.einsum("...i,...i->...", np.cross(A - C, proj - C), n)
        inside = (c0 >= 0) & (c1 >= 0) & (c2 >= 0) & (nn > 0)
        d2_plane = h * h * nn
        d2_edge = np.minimum(np.minimum(_segment_distance2(p, A, B), _segment_distance2(p, B, C)),
                             _segment_distance2(p, C, A))
        d2 = np.where(inside, d2_plane, d2_edge)
        out[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return out.reshape(np.shape(points)[:-1])


# --------------------------------------------------------------------------
# shapes


class Shape:
    """Region of space with a signed distance function."""

    kind = "shape"

    def signed_distance(self, x) -> np.ndarray:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return self.signed_distance(x) <= tol

    def gradient(self, x, step: float | None = None) -> np.ndarray:
        """Spatial gradient of the signed distance by central differences."""
        x = np.asarray(x, dtype=float)
        if step is None:
            lo, hi = self.bounds()
            step = 1e-6 * float(np.linalg.norm(hi - lo))
        g = np.empty(x.shape)
        for a in range(3):
            e = np.zeros(3)
            e[a] = step
            g[..., a] = (self.signed_distance(x + e) - self.signed_distance(x - e)) / (2 * step)
        return g

    def to_dict(self) -> dict:
        raise NotImplementedError

    def mesh(self) -> TriangleMesh:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(Shape):
    center: tuple
    radius: float
    kind = "sphere"

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) - self.radius

    def gradient(self, x, step=None):
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        return np.where(n > 0, d / np.where(n > 0, n, 1.0), 0.0)

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"type": "sphere", "center": list(self.center), "radius": self.radius}

    def mesh(self, subdivisions: int = 3):
        return icosphere(self.radius, subdivisions, self.center)


@dataclass(frozen=True)
class Box(Shape):
    lo: tuple
    hi: tuple
    kind = "box"

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        q = np.abs(x - 0.5 * (lo + hi)) - 0.5 * (hi - lo)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        return outside + np.minimum(q.max(axis=-1), 0.0)

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def to_dict(self):
        return {"type": "box", "min": list(self.lo), "max": list(self.hi)}

    def mesh(self):
        return box_mesh(self.lo, self.hi)


@dataclass(frozen=True)
class Cylinder(Shape):
    center: tuple
    axis: tuple
    radius: float
    half_height: float
    kind = "cylinder"

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float) - np.asarray(self.center)
        ax = np.asarray(self.axis, float)
        ax = ax / np.linalg.norm(ax)
        h = x @ ax
        radial = np.linalg.norm(x - h[..., None] * ax, axis=-1)
        dr, dh = radial - self.radius, np.abs(h) - self.half_height
        outside = np.hypot(np.maximum(dr, 0.0), np.maximum(dh, 0.0))
        return outside + np.minimum(np.maximum(dr, dh), 0.0)

    def bounds(self):
        ax = np.asarray(self.axis, float)
        ax = ax / np.linalg.norm(ax)
        c = np.asarray(self.center, float)
        ext = np.abs(ax) * self.half_height + self.radius * np.sqrt(np.clip(1 - ax ** 2, 0, 1))
        return c - ext, c + ext

    def to_dict(self):
        return {"type": "cylinder", "center": list(self.center), "axis": list(self.axis),
                "radius": self.radius, "half_height": self.half_height}

    def mesh(self):
        return cylinder_mesh(self.center, self.axis, self.radius, self.half_height)


@dataclass(frozen=True)
class HalfSpaces(Shape):
    """Convex polytope {x : n_k . x <= c_k for all k}.

    The distance is the max over plane distances: exact inside and on faces,
    a lower bound near edges and corners outside (sign always correct).
    """

    normals: tuple
    offsets: tuple
    kind = "halfspaces"

    def _unit(self):
        n = np.asarray(self.normals, float).reshape(-1, 3)
        norm = np.linalg.norm(n, axis=1)
        return n / norm[:, None], np.asarray(self.offsets, float) / norm

    def signed_distance(self, x):
        n, c = self._unit()
        return (np.asarray(x, dtype=float) @ n.T - c).max(axis=-1)

    def bounds(self):
        from scipy.optimize import linprog

        n, c = self._unit()
        lo, hi = np.empty(3), np.empty(3)
        for a in range(3):
            e = np.zeros(3)
            e[a] = 1.0
            r0 = linprog(e, A_ub=n, b_ub=c, bounds=[(None, None)] * 3)
            r1 = linprog(-e, A_ub=n, b_ub=c, bounds=[(None, None)] * 3)
            if r0.status != 0 or r1.status != 0:
                raise GeometryError("half-space intersection is unbounded or empty")
            lo[a], hi[a] = r0.x[a], r1.x[a]
        return lo, hi

    def to_dict(self):
        return {"type": "halfspaces",
                "planes": [{"normal": list(n), "offset": o} for n, o in zip(self.normals, self.offsets)]}


@dataclass(frozen=True, eq=False)
class VoxelSDF(Shape):
    """Signed distance of a closed triangle mesh sampled on a regular lattice
    and trilinearly interpolated."""

    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray
    source: dict = field(default_factory=dict)
    kind = "mesh"

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh, resolution: int = 64, padding: float = 0.05, source=None):
        if not mesh.is_closed():
            raise GeometryError("mesh is not closed")
        lo, hi = mesh.bounds()
        pad = padding * float(np.max(hi - lo))
        lo, hi = lo - pad, hi + pad
        axes = [np.linspace(lo[a], hi[a], resolution) for a in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        dist = surface_distance(grid, mesh)
        inside = winding_number(grid, mesh) > 0.5
        values = np.where(inside, -dist, dist).reshape(resolution, resolution, resolution)
        return cls(lo, (hi - lo) / (resolution - 1), values, dict(source or {}))

    def signed_distance(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        p = (x.reshape(-1, 3) - self.origin) / self.spacing
        n = np.array(self.values.shape)
        far = np.any((p < 0) | (p > n - 1), axis=1)
        pc = np.clip(p, 0, n - 1 - 1e-9)
        i0 = np.floor(pc).astype(int)
        f = pc - i0
        v = self.values
        out = np.zeros(len(p))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1 - f[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1 - f[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1 - f[:, 2]
                    out += wx * wy * wz * v[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        if np.any(far):
            # outside the lattice: lower bound from distance to the lattice box
            lo = self.origin
            hi = self.origin + self.spacing * (n - 1)
            q = np.maximum(np.maximum(lo - x.reshape(-1, 3), x.reshape(-1, 3) - hi), 0.0)
            out[far] = np.maximum(out[far], 0.0) + np.linalg.norm(q[far], axis=1)
        return out.reshape(shape)

    def bounds(self):
        return self.origin.copy(), self.origin + self.spacing * (np.array(self.values.shape) - 1)

    def to_dict(self):
        return dict(self.source)


def shape_from_dict(d: dict, base_dir: Path | None = None) -> Shape:
    kind = d.get("type")
    if kind == "sphere":
        return Sphere(tuple(float(c) for c in d["center"]), float(d["radius"]))
    if kind == "box":
        return Box(tuple(float(c) for c in d["min"]), tuple(float(c) for c in d["max"]))
    if kind == "cylinder":
        return Cylinder(tuple(float(c) for c in d["center"]), tuple(float(c) for c in d.get("axis", (0, 0, 1))),
                        float(d["radius"]), float(d["half_height"]))
    if kind == "halfspaces":
        planes = d["planes"]
        return HalfSpaces(tuple(tuple(float(c) for c in p["normal"]) for p in planes),
                          tuple(float(p["offset"]) for p in planes))
    if kind == "mesh":
        path = Path(d["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return VoxelSDF.from_mesh(load_obj(path), int(d.get("resolution", 64)), source=d)
    raise GeometryError(f"unknown shape type {kind!r}")
