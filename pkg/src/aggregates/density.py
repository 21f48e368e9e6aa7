"""Material density from world samples and its grid discretization.

Each sample carries a smoothed Heaviside kernel

    phi_s(x) = chi_e(x) * (1/2 + 1/2 tanh(beta (r_s^2 - |x - x_s|^2 / alpha^2)))

cut off to exactly zero at |x - x_s| >= 3 alpha r_s. The field is the max over
samples; cell densities average it with the 2x2x2 Gauss rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .elements import occupancy_query

CUTOFF = 3.0
_GAUSS = 1.0 / (2.0 * np.sqrt(3.0))   # abscissa offset from the cell center, in cell units


@dataclass(frozen=True)
class DensityParams:
    alpha: float
    beta: float
    use_indicator: bool = False

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


@dataclass(frozen=True)
class GridGeometry:
    origin: np.ndarray
    h: float
    dims: tuple

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.dims))

    def quadrature_coords(self, axis: int) -> np.ndarray:
        """Coordinates of the 2*n Gauss abscissae along one axis."""
        n = self.dims[axis]
        c = np.arange(2 * n)
        return self.origin[axis] + self.h * (c // 2 + 0.5 + np.where(c % 2, _GAUSS, -_GAUSS))


@dataclass(frozen=True, eq=False)
class DensityGrid:
    geometry: GridGeometry
    rho: np.ndarray             # (n_cells,)
    qp_index: np.ndarray        # flat quadrature-point ids with positive density
    qp_sample: np.ndarray       # argmax sample per listed quadrature point
    qp_value: np.ndarray        # phi at the listed quadrature points
    params: DensityParams

    def argmax(self, qp: int):
        k = np.searchsorted(self.qp_index, qp)
        if k < len(self.qp_index) and self.qp_index[k] == qp:
            return int(self.qp_sample[k])
        return None


# --------------------------------------------------------------------------
# kernel


def heaviside_kernel(d2, radius, params: DensityParams) -> np.ndarray:
    """Kernel value from squared distance, including the hard cutoff."""
    d2 = np.asarray(d2, dtype=float)
    radius = np.asarray(radius, dtype=float)
    val = 0.5 + 0.5 * np.tanh(params.beta * (radius ** 2 - d2 / params.alpha ** 2))
    return np.where(d2 >= (CUTOFF * params.alpha * radius) ** 2, 0.0, val)


def kernel_du(d2, radius, params: DensityParams) -> np.ndarray:
    """d phi / d u with u = |x - x_s|^2 (zero beyond the cutoff)."""
    d2 = np.asarray(d2, dtype=float)
    radius = np.asarray(radius, dtype=float)
    th = np.tanh(params.beta * (radius ** 2 - d2 / params.alpha ** 2))
    val = -params.beta / (2.0 * params.alpha ** 2) * (1.0 - th * th)
    return np.where(d2 >= (CUTOFF * params.alpha * radius) ** 2, 0.0, val)


def sample_density(center, radius, x, params: DensityParams, indicator=None) -> np.ndarray:
    """phi_s at points ``x``; ``indicator`` is an optional callable chi(x)."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(center, dtype=float)
    val = heaviside_kernel(np.einsum("...i,...i->...", d, d), radius, params)
    if params.use_indicator and indicator is not None:
        val = val * indicator(x)
    return val


def sample_density_gradient(center, radius, x, params: DensityParams) -> np.ndarray:
    """d phi_s / d x_s (the sample position), indicator held constant."""
    x = np.asarray(x, dtype=float)
    d = x - np.asarray(center, dtype=float)
    du = kernel_du(np.einsum("...i,...i->...", d, d), radius, params)
    return -2.0 * d * du[..., None]


# --------------------------------------------------------------------------
# spatial hash


class SampleIndex:
    """Uniform hash of world samples; bucket size is the largest support."""

    def __init__(self, positions, radii, params: DensityParams):
        self.positions = np.asarray(positions, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        self.params = params
        self.cell = CUTOFF * params.alpha * float(self.radii.max()) if len(self.radii) else 1.0
        self.buckets: dict[tuple, list[int]] = {}
        for s, p in enumerate(self.positions):
            self.buckets.setdefault(tuple(np.floor(p / self.cell).astype(int)), []).append(s)

    def query(self, x) -> np.ndarray:
        key = np.floor(np.asarray(x, dtype=float) / self.cell).astype(int)
        out = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    out += self.buckets.get((key[0] + dx, key[1] + dy, key[2] + dz), [])
        return np.array(sorted(out), dtype=int)


def total_density(x, index: SampleIndex, params: DensityParams, indicators=None):
    """(phi(x), argmax sample id or None); ties go to the lowest id.

    ``indicators`` maps a sample id to its element's chi callable.
    """
    x = np.asarray(x, dtype=float)
    best, arg = 0.0, None
    for s in index.query(x):
        chi = indicators(s) if (indicators is not None and params.use_indicator) else None
        v = float(sample_density(index.positions[s], index.radii[s], x, params, chi))
        if v > best:
            best, arg = v, int(s)
    return best, arg


# --------------------------------------------------------------------------
# rasterization


def _indicator_mask(samples, instances, prototypes, qp_pos, pair_sample):
    chi = np.ones(len(pair_sample), bool)
    el = samples.element[pair_sample]
    for e in np.unique(el):
        sel = el == e
        inst = instances[e]
        chi[sel] = occupancy_query(inst, prototypes[inst.prototype], qp_pos[sel])
    return chi


def _pairs(samples, geom: GridGeometry, params: DensityParams):
    """All (quadrature point, sample) pairs inside the kernel support."""
    coords = [geom.quadrature_coords(a) for a in range(3)]
    nq = [2 * n for n in geom.dims]
    qp_all, s_all, d2_all = [], [], []
    for s, (p, r) in enumerate(zip(samples.positions, samples.radius)):
        reach = CUTOFF * params.alpha * r
        idx = []
        for a in range(3):
            lo = np.searchsorted(coords[a], p[a] - reach, side="left")
            hi = np.searchsorted(coords[a], p[a] + reach, side="right")
            idx.append(np.arange(lo, hi))
        if any(len(i) == 0 for i in idx):
            continue
        dx = (coords[0][idx[0]] - p[0]) ** 2
        dy = (coords[1][idx[1]] - p[1]) ** 2
        dz = (coords[2][idx[2]] - p[2]) ** 2
        d2 = dz[:, None, None] + dy[None, :, None] + dx[None, None, :]
        keep = d2 < reach * reach
        kk, jj, ii = np.nonzero(keep)
        qp = idx[0][ii] + nq[0] * (idx[1][jj] + nq[1] * idx[2][kk])
        qp_all.append(qp)
        s_all.append(np.full(len(qp), s))
        d2_all.append(d2[keep])
    if not qp_all:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0)
    return np.concatenate(qp_all), np.concatenate(s_all), np.concatenate(d2_all)


def qp_positions(qp, geom: GridGeometry) -> np.ndarray:
    nq = [2 * n for n in geom.dims]
    i = qp % nq[0]
    j = (qp // nq[0]) % nq[1]
    k = qp // (nq[0] * nq[1])
    return np.stack([geom.quadrature_coords(0)[i], geom.quadrature_coords(1)[j],
                     geom.quadrature_coords(2)[k]], axis=-1)


def qp_cell(qp, geom: GridGeometry) -> np.ndarray:
    nx, ny, _ = geom.dims
    nq = [2 * n for n in geom.dims]
    i = (qp % nq[0]) // 2
    j = ((qp // nq[0]) % nq[1]) // 2
    k = (qp // (nq[0] * nq[1])) // 2
    return i + nx * (j + ny * k)


def rasterize_densities(samples, geom: GridGeometry, params: DensityParams, instances=None,
                        prototypes=None) -> DensityGrid:
    """Cell densities by 8-point Gauss quadrature of the max field.

    Cells are visited by scattering from samples; the indicator is applied
    only when ``params.use_indicator`` and the instances are supplied.
    """
    qp, s, d2 = _pairs(samples, geom, params)
    phi = heaviside_kernel(d2, samples.radius[s], params)
    if params.use_indicator and instances is not None and len(qp):
        phi = phi * _indicator_mask(samples, instances, prototypes, qp_positions(qp, geom), s)
    pos = phi > 0
    qp, s, phi = qp[pos], s[pos], phi[pos]
    # per quadrature point: max value, lowest sample id on ties
    order = np.lexsort((s, -phi, qp))
    qp, s, phi = qp[order], s[order], phi[order]
    first = np.ones(len(qp), bool)
    first[1:] = qp[1:] != qp[:-1]
    qp, s, phi = qp[first], s[first], phi[first]
    rho = np.bincount(qp_cell(qp, geom), weights=phi, minlength=geom.n_cells) / 8.0
    return DensityGrid(geom, np.clip(rho, 0.0, 1.0), qp, s, phi, params)


def density_position_jacobian(grid: DensityGrid, samples) -> sp.csr_matrix:
    """Sparse d rho_i / d p_{s,j}, shape (n_cells, 3 * n_samples), column 3s+j.

    Each quadrature point contributes only through its argmax sample; the
    indicator factor is held constant.
    """
    geom = grid.geometry
    qp, s = grid.qp_index, grid.qp_sample
    n = len(samples)
    if len(qp) == 0:
        return sp.csr_matrix((geom.n_cells, 3 * n))
    x = qp_positions(qp, geom)
    g = sample_density_gradient(samples.positions[s], samples.radius[s], x, grid.params)
    # the indicator multiplies the kernel; chi = 1 wherever phi > 0 was recorded
    rows = np.repeat(qp_cell(qp, geom), 3)
    cols = (3 * s[:, None] + np.arange(3)).ravel()
    J = sp.coo_matrix((g.ravel() / 8.0, (rows, cols)), shape=(geom.n_cells, 3 * n)).tocsr()
    J.sum_duplicates()
    J.eliminate_zeros()
    return J
