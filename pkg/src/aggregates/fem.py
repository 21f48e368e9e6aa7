"""Linear elasticity on a regular grid of trilinear hexahedra (H8)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solveh_banded
from scipy.sparse.linalg import splu

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000
DIRECT_LIMIT = 200_000
BAND_LIMIT = 30_000_000   # stored band entries (8 bytes each)


class SolverError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class HexMesh:
    """Cells indexed i + nx*(j + ny*k); nodes likewise with nx+1, ny+1.

    Local node order inside a cell is binary: corner (a, b, c) in {0,1}^3 is
    local node a + 2b + 4c. Dofs are 3*node + axis.
    """

    dims: tuple
    h: float
    origin: tuple = (0.0, 0.0, 0.0)

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def node_dims(self) -> tuple:
        return tuple(n + 1 for n in self.dims)

    @property
    def n_nodes(self) -> int:
        a, b, c = self.node_dims
        return a * b * c

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_nodes

    def node_positions(self) -> np.ndarray:
        a, b, c = self.node_dims
        k, j, i = np.meshgrid(np.arange(c), np.arange(b), np.arange(a), indexing="ij")
        ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        return np.asarray(self.origin) + self.h * ijk

    def cell_centers(self) -> np.ndarray:
        nx, ny, nz = self.dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        ijk = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
        return np.asarray(self.origin) + self.h * (ijk + 0.5)

    @cached_property
    def cell_nodes(self) -> np.ndarray:
        nx, ny, nz = self.dims
        a, b, _ = self.node_dims
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        base = (i + a * (j + b * k)).ravel()
        offs = [dx + a * (dy + b * dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]
        return base[:, None] + np.array(offs)[None, :]

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        return (3 * self.cell_nodes[:, :, None] + np.arange(3)).reshape(self.n_cells, 24)


def base_stiffness_k0(h: float, young: float = 1.0, poisson: float = 0.3) -> np.ndarray:
    """24x24 stiffness of a solid cube of side ``h``.

    Exact integration: the shape functions are products of 1D linear
    functions, so every entry factors into 1D integrals.
    """
    lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = young / (2 * (1 + poisson))
    M = h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])       # int phi_a phi_b
    S = 1.0 / h * np.array([[1.0, -1.0], [-1.0, 1.0]])     # int phi_a' phi_b'
    G = np.array([[-0.5, -0.5], [0.5, 0.5]])               # int phi_a' phi_b
    corners = [(a & 1, (a >> 1) & 1, (a >> 2) & 1) for a in range(8)]

    def grad_grad(ca, cb, i, j):
        # int d_i N_a d_j N_b over the cube
        out = 1.0
        for ax in range(3):
            p, q = ca[ax], cb[ax]
            if ax == i and ax == j:
                out *= S[p, q]
            elif ax == i:
                out *= G[p, q]
            elif ax == j:
                out *= G[q, p]
            else:
                out *= M[p, q]
        return out

    K = np.zeros((24, 24))
    for a, ca in enumerate(corners):
        for b, cb in enumerate(corners):
            lap = sum(grad_grad(ca, cb, k, k) for k in range(3))
            for i in range(3):
                for j in range(3):
                    v = lam * grad_grad(ca, cb, i, j) + mu * grad_grad(ca, cb, j, i)
                    if i == j:
                        v += mu * lap
                    K[3 * a + i, 3 * b + j] = v
    return K


@dataclass(frozen=True)
class MaterialModel:
    young: float = 1.0
    poisson: float = 0.3
    ersatz: float = 1e-6

    def stiffness_scale(self, rho) -> np.ndarray:
        """E(rho)/E0 = eps + rho (1 - eps)."""
        return self.ersatz + np.asarray(rho) * (1.0 - self.ersatz)


@dataclass(frozen=True, eq=False)
class FemState:
    mesh: HexMesh
    rho: np.ndarray
    u: np.ndarray
    f_ext: np.ndarray
    fixed: np.ndarray
    K0: np.ndarray
    material: MaterialModel
    residual: float
    iterations: int = 0

    @property
    def compliance(self) -> float:
        return compliance(self)


class Elasticity:
    """Reusable per-grid data: K0, sparsity pattern, free dof map."""

    def __init__(self, mesh: HexMesh, material: MaterialModel, fixed):
        self.mesh = mesh
        self.material = material
        self.K0 = base_stiffness_k0(mesh.h, material.young, material.poisson)
        self.fixed = np.unique(np.asarray(fixed, dtype=np.int64))
        mask = np.ones(mesh.n_dofs, bool)
        mask[self.fixed] = False
        self.free = np.flatnonzero(mask)
        self._free_mask = mask
        cd = mesh.cell_dofs
        self._rows = np.repeat(cd, 24, axis=1).ravel()
        self._cols = np.tile(cd, (1, 24)).ravel()
        self._band = None

    def _band_layout(self):
        """Free-dof renumbering with the longest grid axis slowest, so K has a
        narrow band; returns (position of free dofs, half bandwidth, entry
        selector, flat index into the upper band storage)."""
        if self._band is None:
            shape = tuple(d + 1 for d in self.mesh.dims)
            nn = int(np.prod(shape))
            ijk = np.stack(np.unravel_index(np.arange(nn), shape[::-1])[::-1], axis=1)
            key = np.zeros(nn, dtype=np.int64)
            mul = 1
            for a in np.argsort(shape, kind="stable"):
                key += ijk[:, a] * mul
                mul *= shape[a]
            dof_key = (3 * key[:, None] + np.arange(3)).ravel()
            new = np.argsort(np.argsort(dof_key[self.free]))
            pos = np.full(self.mesh.n_dofs, -1, dtype=np.int64)
            pos[self.free] = new
            r, c = pos[self._rows], pos[self._cols]
            sel = np.flatnonzero((r >= 0) & (c >= 0) & (r <= c))
            b = int(np.max(c[sel] - r[sel]))
            flat = (b + r[sel] - c[sel]) * len(self.free) + c[sel]
            self._band = (new, b, sel, flat)
        return self._band

    def bandwidth(self) -> int:
        return self._band_layout()[1]

    def stiffness_matrix(self, rho) -> sp.csr_matrix:
        E = self.material.stiffness_scale(rho)
        data = (E[:, None] * self.K0.ravel()[None, :]).ravel()
        n = self.mesh.n_dofs
        return sp.csr_matrix((data, (self._rows, self._cols)), shape=(n, n))

    def apply(self, rho, u) -> np.ndarray:
        """Matrix-free K(rho) @ u by a loop over cells (vectorized)."""
        E = self.material.stiffness_scale(rho)
        ue = u[self.mesh.cell_dofs]
        fe = E[:, None] * (ue @ self.K0)
        return np.bincount(self.mesh.cell_dofs.ravel(), weights=fe.ravel(), minlength=self.mesh.n_dofs)

    def diagonal(self, rho) -> np.ndarray:
        E = self.material.stiffness_scale(rho)
        d = E[:, None] * np.diag(self.K0)[None, :]
        return np.bincount(self.mesh.cell_dofs.ravel(), weights=d.ravel(), minlength=self.mesh.n_dofs)

    def solve(self, rho, f_ext, tol: float = 1e-8, method: str = "auto", maxiter: int | None = None,
              x0=None) -> FemState:
        rho = np.asarray(rho, dtype=float)
        f = np.asarray(f_ext, dtype=float)
        u = np.zeros(self.mesh.n_dofs)
        ff = f[self.free]
        its = 0
        if not np.any(ff):
            return FemState(self.mesh, rho, u, f, self.fixed, self.K0, self.material, 0.0)
        nfree = len(self.free)
        if method == "auto":
            if nfree * (self.bandwidth() + 1) <= BAND_LIMIT:
                method = "banded"
            else:
                method = "direct" if nfree <= DIRECT_LIMIT else "cg"
        if method == "dense":
            if nfree > DENSE_LIMIT:
                raise ValueError(f"dense solve limited to {DENSE_LIMIT} dofs")
            K = self.stiffness_matrix(rho)[self.free][:, self.free].toarray()
            u[self.free] = np.linalg.solve(K, ff)
        elif method == "banded":
            new, b, sel, flat = self._band_layout()
            E = self.material.stiffness_scale(rho)
            data = (E[:, None] * self.K0.ravel()[None, :]).ravel()[sel]
            ab = np.bincount(flat, weights=data, minlength=(b + 1) * nfree).reshape(b + 1, nfree)
            rhs = np.empty(nfree)
            rhs[new] = ff
            u[self.free] = solveh_banded(ab, rhs, check_finite=False)[new]
        elif method == "direct":
            K = self.stiffness_matrix(rho)[self.free][:, self.free].tocsc()
            u[self.free] = splu(K, permc_spec="MMD_AT_PLUS_A").solve(ff)
        elif method == "cg":
            u0 = None if x0 is None else np.asarray(x0)[self.free]
            u[self.free], its = self._pcg(rho, ff, tol, maxiter or 20 * nfree, u0)
        else:
            raise ValueError(f"unknown solver {method!r}")
        r = self.apply(rho, u)[self.free] - ff
        res = float(np.linalg.norm(r) / np.linalg.norm(ff))
        return FemState(self.mesh, rho, u, f, self.fixed, self.K0, self.material, res, its)

    def _pcg(self, rho, b, tol, maxiter, x0):
        full = np.zeros(self.mesh.n_dofs)

        def K(x):
            full[self.free] = x
            return self.apply(rho, full)[self.free]

        dinv = 1.0 / self.diagonal(rho)[self.free]
        x = np.zeros_like(b) if x0 is None else x0.copy()
        r = b - K(x)
        z = dinv * r
        p = z.copy()
        rz = r @ z
        bnorm = np.linalg.norm(b)
        for it in range(1, maxiter + 1):
            Kp = K(p)
            a = rz / (p @ Kp)
            x += a * p
            r -= a * Kp
            res = np.linalg.norm(r) / bnorm
            if res <= tol:
                return x, it
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise SolverError(f"CG did not converge in {maxiter} iterations (residual {res:.3e})", res)


def assemble_and_solve(rho, f_ext, fixed, mesh: HexMesh, material: MaterialModel, tol=1e-8,
                       method="auto") -> FemState:
    return Elasticity(mesh, material, fixed).solve(rho, f_ext, tol, method)


def cell_energies(state: FemState) -> np.ndarray:
    """u_i^T K0 u_i for every cell."""
    ue = state.u[state.mesh.cell_dofs]
    return np.einsum("ci,ij,cj->c", ue, state.K0, ue)


def compliance(state: FemState) -> float:
    return float(state.u @ state.f_ext)


def compliance_sum_form(state: FemState) -> float:
    """sum_i E(rho_i)/E0 * u_i^T K0 u_i."""
    return float(state.material.stiffness_scale(state.rho) @ cell_energies(state))


def compliance_density_gradient(state: FemState) -> np.ndarray:
    """dC/drho_i = -(1 - eps) u_i^T K0 u_i (adjoint of the self-adjoint load case)."""
    return -(1.0 - state.material.ersatz) * cell_energies(state)
