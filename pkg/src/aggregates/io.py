"""Legacy-VTK and OBJ writers."""
from __future__ import annotations

from pathlib import Path

import numpy as np


def write_density_vtk(path, rho, dims, h, origin=(0.0, 0.0, 0.0), name: str = "density"):
    """Cell densities on a regular grid as STRUCTURED_POINTS cell data."""
    nx, ny, nz = dims
    rho = np.asarray(rho, dtype=float).ravel()
    if rho.size != nx * ny * nz:
        raise ValueError(f"expected {nx * ny * nz} cell values, got {rho.size}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{name}\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx + 1} {ny + 1} {nz + 1}\n")
        fh.write("ORIGIN {:.9g} {:.9g} {:.9g}\n".format(*origin))
        fh.write(f"SPACING {h:.9g} {h:.9g} {h:.9g}\n")
        fh.write(f"CELL_DATA {rho.size}\nSCALARS {name} double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, rho, fmt="%.9g")


def write_displacement_vtk(path, nodes, u, dims):
    """Nodal displacement vectors on the grid nodes (STRUCTURED_GRID)."""
    nx, ny, nz = (d + 1 for d in dims)
    nodes = np.asarray(nodes, dtype=float).reshape(-1, 3)
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# vtk DataFile Version 3.0\ndisplacement\nASCII\nDATASET STRUCTURED_GRID\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\nPOINTS {len(nodes)} double\n")
        np.savetxt(fh, nodes, fmt="%.9g")
        fh.write(f"POINT_DATA {len(u)}\nVECTORS u double\n")
        np.savetxt(fh, u, fmt="%.9g")


def read_vtk_scalars(path) -> np.ndarray:
    """Scalar block of a file written by write_density_vtk."""
    lines = Path(path).read_text().splitlines()
    k = next(i for i, ln in enumerate(lines) if ln.startswith("LOOKUP_TABLE"))
    return np.array([float(v) for v in lines[k + 1:] if v.strip()])


def write_obj(path, vertices, faces, polylines=()):
    """Triangles plus optional polylines given as (points, [(i, j), ...])."""
    with open(path, "w", encoding="ascii") as fh:
        np.savetxt(fh, np.asarray(vertices), fmt="v %.9g %.9g %.9g")
        np.savetxt(fh, np.asarray(faces, dtype=int) + 1, fmt="f %d %d %d")
        base = len(vertices)
        for pts, edges in polylines:
            np.savetxt(fh, np.asarray(pts), fmt="v %.9g %.9g %.9g")
            for i, j in edges:
                fh.write(f"l {base + i + 1} {base + j + 1}\n")
            base += len(pts)
