"""Connectivity improvement: inter-element spring graph and its relaxation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .elements import delaunay_edges, world_sample_positions
from .sensitivity import ParamLayout, params_gradient

REST_FACTOR = 0.9


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:
            self.parent[a], a = root, self.parent[a]
        return root

    def merge(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True

    def n_components(self) -> int:
        return len({self.find(a) for a in range(len(self.parent))})


@dataclass(frozen=True, eq=False)
class ConnectivityGraph:
    edges: np.ndarray       # (k, 2) sample ids, distinct elements
    rest: np.ndarray        # (k,) target lengths
    length: np.ndarray      # (k,) sample distance when the graph was built
    element_sets: UnionFind
    n_elements: int

    def spans(self) -> bool:
        return self.element_sets.n_components() == 1


def build_connectivity_graph(P, radii, element_ids, seed=0) -> ConnectivityGraph:
    """Kruskal-like pass over Delaunay edges by increasing length.

    An inter-element edge is kept when its elements are in different
    union-find sets or either element has at most one neighbour so far.
    """
    P = np.asarray(P, dtype=float)
    radii = np.asarray(radii, dtype=float)
    el = np.asarray(element_ids, dtype=int)
    n_el = int(el.max()) + 1 if len(el) else 0
    H = UnionFind(n_el)
    if len(np.unique(el)) < 2:
        z = np.zeros(0)
        return ConnectivityGraph(np.zeros((0, 2), dtype=int), z, z, H, n_el)
    cand = delaunay_edges(P, seed)
    w = np.linalg.norm(P[cand[:, 0]] - P[cand[:, 1]], axis=1)
    order = np.lexsort((cand[:, 1], cand[:, 0], w))
    neighbours = [set() for _ in range(n_el)]
    kept = []
    for k in order:
        i, j = cand[k]
        ei, ej = el[i], el[j]
        if ei == ej:
            continue
        if H.find(ei) != H.find(ej) or len(neighbours[ei]) <= 1 or len(neighbours[ej]) <= 1:
            kept.append(k)
            H.merge(ei, ej)
            neighbours[ei].add(ej)
            neighbours[ej].add(ei)
    kept = np.array(kept, dtype=int)
    edges = cand[kept].reshape(-1, 2)
    rest = REST_FACTOR * (radii[edges[:, 0]] + radii[edges[:, 1]])
    return ConnectivityGraph(edges, rest, w[kept], H, n_el)


def spring_energy(P, graph: ConnectivityGraph):
    """Energy sum 1/2 (|x_i - x_j| - W_ij)^2 and its gradient w.r.t. P."""
    P = np.asarray(P, dtype=float)
    G = np.zeros_like(P)
    if len(graph.edges) == 0:
        return 0.0, G
    d = P[graph.edges[:, 0]] - P[graph.edges[:, 1]]
    L = np.linalg.norm(d, axis=1)
    stretch = L - graph.rest
    unit = d / np.maximum(L, 1e-300)[:, None]
    np.add.at(G, graph.edges[:, 0], stretch[:, None] * unit)
    np.add.at(G, graph.edges[:, 1], -stretch[:, None] * unit)
    return float(0.5 * np.sum(stretch ** 2)), G


def optimize_connectivity(graph: ConnectivityGraph, instances, prototypes, lower=None, upper=None,
                          steps: int = 10):
    """Relax the spring network over element parameters with L-BFGS-B.

    Returns (instances, energy before, energy after); never increases the
    energy.
    """
    layout = ParamLayout.build(instances, prototypes)
    x0 = layout.pack(instances)

    def fun(x):
        inst = layout.unpack(x, instances)
        ws = world_sample_positions(inst, prototypes)
        E, G = spring_energy(ws.positions, graph)
        return E, params_gradient(G, ws, inst, prototypes, layout)

    e0, g0 = fun(x0)
    if len(graph.edges) == 0 or np.linalg.norm(g0) < 1e-10:
        return list(instances), e0, e0
    bounds = None
    if lower is not None:
        bounds = list(zip(lower, upper))
        x0 = np.clip(x0, lower, upper)
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": steps, "gtol": 1e-10})
    if not res.fun <= e0:
        return list(instances), e0, e0
    return layout.unpack(res.x, instances), e0, float(res.fun)


def contact_components(P, radii, element_ids, slack: float = 1.0) -> int:
    """Number of element clusters when samples with |x_i - x_j| <= slack (r_i + r_j) touch."""
    P = np.asarray(P, dtype=float)
    radii = np.asarray(radii, dtype=float)
    el = np.asarray(element_ids, dtype=int)
    n_el = int(el.max()) + 1
    H = UnionFind(n_el)
    d = np.linalg.norm(P[:, None] - P[None, :], axis=-1)
    touch = d <= slack * (radii[:, None] + radii[None, :])
    for i, j in zip(*np.nonzero(np.triu(touch, 1))):
        H.merge(el[i], el[j])
    return H.n_components()
