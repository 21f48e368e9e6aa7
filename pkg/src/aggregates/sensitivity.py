"""Chain rule from grid-cell sensitivities to element parameters.

Per element the parameter block is ``t`` (3), ``gamma`` (3) and, for
deformable elements, one exponential map per non-root sample (3 each, in
sample order). Sample gradients are arrays of shape (N, 3).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import ElementInstance, local_sample_positions, rotation_jacobians
from .rotations import rotation_expmap_derivatives, rotation_from_expmap

KINDS = ("t", "gamma", "omega")


@dataclass(frozen=True, eq=False)
class ParamLayout:
    offsets: np.ndarray     # (E,) start of each element block
    sizes: np.ndarray       # (E,)
    omega_samples: tuple    # per element: sample ids carrying an omega (non-root)
    kind: np.ndarray        # (n,) 0=t, 1=gamma, 2=omega
    element: np.ndarray     # (n,)
    index: np.ndarray       # (n,) component within the block kind (omega: 3*k + axis)

    @property
    def size(self) -> int:
        return int(self.sizes.sum())

    @classmethod
    def build(cls, instances, prototypes) -> "ParamLayout":
        offsets, sizes, oms, kind, el, idx = [], [], [], [], [], []
        off = 0
        for e, inst in enumerate(instances):
            proto = prototypes[inst.prototype]
            om = ()
            if proto.skeleton is not None:
                om = tuple(int(s) for s in range(proto.n_samples) if s != proto.skeleton.root)
            n = 6 + 3 * len(om)
            offsets.append(off)
            sizes.append(n)
            oms.append(om)
            kind += [0] * 3 + [1] * 3 + [2] * (3 * len(om))
            el += [e] * n
            idx += [0, 1, 2, 0, 1, 2] + list(range(3 * len(om)))
            off += n
        return cls(np.array(offsets, dtype=int), np.array(sizes, dtype=int), tuple(oms),
                   np.array(kind, dtype=int), np.array(el, dtype=int), np.array(idx, dtype=int))

    def pack(self, instances) -> np.ndarray:
        x = np.empty(self.size)
        for e, inst in enumerate(instances):
            o = self.offsets[e]
            x[o:o + 3] = inst.t
            x[o + 3:o + 6] = inst.gamma
            om = self.omega_samples[e]
            if om:
                x[o + 6:o + 6 + 3 * len(om)] = inst.omega[list(om)].ravel()
        return x

    def unpack(self, x, instances) -> list:
        out = []
        for e, inst in enumerate(instances):
            o = self.offsets[e]
            omega = inst.omega.copy()
            om = self.omega_samples[e]
            if om:
                omega[list(om)] = np.asarray(x[o + 6:o + 6 + 3 * len(om)]).reshape(-1, 3)
            out.append(inst.copy(t=np.array(x[o:o + 3], dtype=float), gamma=np.array(x[o + 3:o + 6], dtype=float),
                                 omega=omega))
        return out


def backpropagate_to_samples(cell_gradient, J) -> np.ndarray:
    """Row vector times sparse Jacobian, reshaped to (N, 3)."""
    g = J.T @ np.asarray(cell_gradient, dtype=float)
    return np.asarray(g).reshape(-1, 3)


def rigid_param_gradient(G, inst: ElementInstance, proto) -> tuple[np.ndarray, np.ndarray]:
    """(d/dt, d/dgamma) for one element from its sample gradients (m, 3)."""
    G = np.asarray(G, dtype=float)
    Y = local_sample_positions(inst, proto)
    dRA = rotation_jacobians(inst)
    dg = np.array([np.sum(G * (Y @ dRA[i].T)) for i in range(3)])
    return G.sum(axis=0), dg


def deformable_backprop(G, inst: ElementInstance, proto, stats: dict | None = None) -> np.ndarray:
    """Gradient w.r.t. the per-sample exponential maps, shape (m, 3).

    Subtree sums of (R A)^T G are accumulated leaf to root in one pass; the
    root row stays zero. ``stats['additions']`` receives the number of
    subtree additions (m - 1).
    """
    sk = proto.skeleton
    m = proto.n_samples
    out = np.zeros((m, 3))
    if sk is None:
        return out
    RA = rotation_from_expmap(inst.gamma) @ inst.A
    S = np.asarray(G, dtype=float) @ RA
    adds = 0
    for s in sk.order[:0:-1]:
        S[sk.parent[s]] += S[s]
        adds += 1
    for s in sk.order[1:]:
        dR = rotation_expmap_derivatives(inst.omega[s])
        out[s] = dR @ sk.offsets[s] @ S[s]
    if stats is not None:
        stats["additions"] = stats.get("additions", 0) + adds
    return out


def params_gradient(G, samples, instances, prototypes, layout: ParamLayout) -> np.ndarray:
    """Pull a sample-position gradient (N, 3) back to the parameter vector."""
    G = np.asarray(G, dtype=float)
    grad = np.zeros(layout.size)
    for e, inst in enumerate(instances):
        proto = prototypes[inst.prototype]
        Ge = G[samples.element == e]
        o = layout.offsets[e]
        grad[o:o + 3], grad[o + 3:o + 6] = rigid_param_gradient(Ge, inst, proto)
        om = layout.omega_samples[e]
        if om:
            grad[o + 6:o + 6 + 3 * len(om)] = deformable_backprop(Ge, inst, proto)[list(om)].ravel()
    return grad


def sample_jacobian_dense(inst: ElementInstance, proto) -> np.ndarray:
    """Dense d(world sample positions)/d(element params), shape (m, 3, n_e).

    Built by walking each sample's ancestor chain, for verification only.
    """
    m = proto.n_samples
    sk = proto.skeleton
    om = [] if sk is None else [s for s in range(m) if s != sk.root]
    n = 6 + 3 * len(om)
    J = np.zeros((m, 3, n))
    Y = local_sample_positions(inst, proto)
    RA = rotation_from_expmap(inst.gamma) @ inst.A
    dRA = rotation_jacobians(inst)
    for s in range(m):
        J[s, :, 0:3] = np.eye(3)
        for i in range(3):
            J[s, :, 3 + i] = dRA[i] @ Y[s]
    for k, sp_ in enumerate(om):
        dR = rotation_expmap_derivatives(inst.omega[sp_])
        for s in range(m):
            # dy_s/domega_{s'} = [s == s'] dR(omega_s) dy_s + dy_{p(s)}/domega_{s'}
            v, dy = s, np.zeros((3, 3))
            while v != sk.root:
                if v == sp_:
                    dy += (dR @ sk.offsets[v]).T
                v = sk.parent[v]
            J[s, :, 6 + 3 * k:9 + 3 * k] = RA @ dy
    return J


# --------------------------------------------------------------------------
# finite differences


@dataclass
class FDReport:
    groups: dict            # kind -> {"count", "max_abs", "max_rel", "worst"}
    analytic: np.ndarray
    numeric: np.ndarray
    indices: np.ndarray

    def passed(self, rtol: float) -> bool:
        return all(g["max_rel"] <= rtol for g in self.groups.values())

    def worst(self):
        kind = max(self.groups, key=lambda k: self.groups[k]["max_rel"])
        return kind, self.groups[kind]

    def table(self) -> str:
        lines = [f"{'kind':<8}{'count':>7}{'max abs err':>15}{'max rel err':>15}"]
        for kind, g in self.groups.items():
            lines.append(f"{kind:<8}{g['count']:>7}{g['max_abs']:>15.3e}{g['max_rel']:>15.3e}")
        return "\n".join(lines)


def relative_errors(analytic, numeric, floor: float = 1e-3) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor * max|n|).

    The floor keeps components that are zero to round-off from dominating.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor * np.max(np.abs(n), initial=0.0))
    err = np.abs(a - n)
    return np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), err)


def finite_difference_check(func, grad, x0, step: float, subset=None, kinds=None, floor=1e-3) -> FDReport:
    """Central differences of ``func`` around ``x0`` compared to ``grad``.

    ``kinds`` labels each parameter (default: all "x"); the report groups
    errors by label.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    x0 = np.asarray(x0, dtype=float)
    idx = np.arange(len(x0)) if subset is None else np.asarray(subset, dtype=int)
    g = np.asarray(grad, dtype=float)[idx]
    fd = np.empty(len(idx))
    for k, i in enumerate(idx):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += step
        xm[i] -= step
        fd[k] = (func(xp) - func(xm)) / (2 * step)
    labels = np.array(["x"] * len(x0) if kinds is None else list(kinds))[idx]
    rel = relative_errors(g, fd, floor)
    groups = {}
    for kind in dict.fromkeys(labels):
        sel = labels == kind
        groups[str(kind)] = {"count": int(sel.sum()), "max_abs": float(np.max(np.abs(g[sel] - fd[sel]))),
                             "max_rel": float(np.max(rel[sel])), "worst": int(idx[sel][np.argmax(rel[sel])])}
    return FDReport(groups, g, fd, idx)
