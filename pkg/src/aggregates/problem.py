"""Compliance evaluation from element parameters: Theta -> P -> rho -> C."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityGrid, DensityParams, GridGeometry, density_position_jacobian, rasterize_densities
from .elements import WorldSamples, build_prototypes, world_sample_positions
from .fem import Elasticity, FemState, HexMesh, MaterialModel, compliance, compliance_density_gradient
from .scene import SceneConfig, apply_boundary_conditions
from .sensitivity import KINDS, ParamLayout, backpropagate_to_samples, params_gradient


@dataclass(frozen=True, eq=False)
class Evaluation:
    compliance: float
    gradient: np.ndarray | None
    sample_gradient: np.ndarray | None
    samples: WorldSamples
    density: DensityGrid
    state: FemState
    layout: ParamLayout


class Problem:
    """Per-scene data shared by every evaluation (grid, loads, stiffness)."""

    def __init__(self, scene: SceneConfig, prototypes=None, solver: str = "auto", tol: float = 1e-8,
                 cache_dir=None):
        self.scene = scene
        self.prototypes = prototypes if prototypes is not None else build_prototypes(scene, cache_dir)
        origin, h, dims = scene.grid_geometry()
        self.mesh = HexMesh(dims, h, tuple(float(c) for c in origin))
        self.geometry = GridGeometry(np.asarray(origin, float), h, dims)
        self.f_ext, self.fixed = apply_boundary_conditions(scene, self.mesh)
        m = scene.material
        self.material = MaterialModel(m.young, m.poisson, m.ersatz)
        self.elasticity = Elasticity(self.mesh, self.material, self.fixed)
        self.solver = solver
        self.tol = tol
        self._u_prev = None

    def density_params(self, alpha: float, beta: float, use_indicator: bool | None = None) -> DensityParams:
        if use_indicator is None:
            use_indicator = self.scene.schedule.use_indicator
        return DensityParams(alpha, beta, use_indicator)

    def layout(self, instances) -> ParamLayout:
        return ParamLayout.build(instances, self.prototypes)

    def densities(self, instances, params: DensityParams) -> tuple[WorldSamples, DensityGrid]:
        ws = world_sample_positions(instances, self.prototypes)
        return ws, rasterize_densities(ws, self.geometry, params, instances, self.prototypes)

    def solve(self, rho) -> FemState:
        state = self.elasticity.solve(rho, self.f_ext, self.tol, self.solver, x0=self._u_prev)
        self._u_prev = state.u
        return state

    def evaluate(self, instances, params: DensityParams, gradient: bool = True) -> Evaluation:
        layout = self.layout(instances)
        ws, grid = self.densities(instances, params)
        state = self.solve(grid.rho)
        C = compliance(state)
        grad = G = None
        if gradient:
            J = density_position_jacobian(grid, ws)
            G = backpropagate_to_samples(compliance_density_gradient(state), J)
            grad = params_gradient(G, ws, instances, self.prototypes, layout)
        return Evaluation(C, grad, G, ws, grid, state, layout)

    def compliance(self, instances, params: DensityParams) -> float:
        return self.evaluate(instances, params, gradient=False).compliance

    def full_gradient(self, instances, params: DensityParams) -> np.ndarray:
        return self.evaluate(instances, params).gradient

    def parameter_bounds(self, instances, layout: ParamLayout | None = None):
        """Box bounds: centroids in the domain box, |gamma_i| <= pi, |omega| <= limit."""
        layout = layout or self.layout(instances)
        lo, hi = self.scene.domain.bounds()
        lower, upper = np.empty(layout.size), np.empty(layout.size)
        for e, inst in enumerate(instances):
            o, n = layout.offsets[e], layout.sizes[e]
            lower[o:o + 3], upper[o:o + 3] = lo, hi
            lower[o + 3:o + 6], upper[o + 3:o + 6] = -np.pi, np.pi
            lim = self.prototypes[inst.prototype].omega_limit
            lower[o + 6:o + n], upper[o + 6:o + n] = -lim, lim
        return lower, upper

    def kind_labels(self, layout: ParamLayout) -> list:
        return [KINDS[k] for k in layout.kind]

    def bbox_diagonal(self) -> float:
        lo, hi = self.scene.domain.bounds()
        return float(np.linalg.norm(hi - lo))
