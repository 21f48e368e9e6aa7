"""Method of Moving Asymptotes for one inequality constraint and box bounds.

Each step builds Svanberg's separable convex approximations of the
objective and the constraint and solves the subproblem through its
one-dimensional dual (bisection on the multiplier).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RAA0 = 1e-5
# closest the asymptotes may approach x, as a fraction of the box range
ASY_MIN = 1e-4


@dataclass
class MmaState:
    lower: np.ndarray
    upper: np.ndarray
    move: float = 0.1
    asyinit: float = 0.5
    asydecr: float = 0.7
    asyincr: float = 1.2
    x: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0
    last_fallback: bool = False
    history: list = field(default_factory=list)

    def reset(self):
        self.x = self.xold1 = self.xold2 = self.low = self.upp = None
        self.iteration = 0


def _approx_terms(dfdx, x, low, upp, span, raa0=RAA0):
    pos, neg = np.maximum(dfdx, 0.0), np.maximum(-dfdx, 0.0)
    extra = 0.001 * np.abs(dfdx) + raa0 / span
    return (upp - x) ** 2 * (pos + extra), (x - low) ** 2 * (neg + extra)


def mma_step(state: MmaState, x, f, dfdx, g=None, dgdx=None) -> np.ndarray:
    """One MMA update from ``x``; returns the new point (state is updated).

    ``g <= 0`` is the constraint; pass ``g=None`` for a bound-only problem.
    """
    x = np.asarray(x, dtype=float)
    dfdx = np.asarray(dfdx, dtype=float)
    lo_b, hi_b = state.lower, state.upper
    span = np.maximum(hi_b - lo_b, 1e-9)

    if state.iteration >= 2 and state.xold2 is not None:
        osc = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.where(osc > 0, state.asyincr, np.where(osc < 0, state.asydecr, 1.0))
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - 10 * span, x - ASY_MIN * span)
        upp = np.clip(upp, x + ASY_MIN * span, x + 10 * span)
    else:
        low = x - state.asyinit * span
        upp = x + state.asyinit * span

    alpha = np.maximum.reduce([lo_b, low + 0.1 * (x - low), x - state.move * span])
    beta = np.minimum.reduce([hi_b, upp - 0.1 * (upp - x), x + state.move * span])

    p0, q0 = _approx_terms(dfdx, x, low, upp, span)

    def primal(P, Q):
        a, b = np.sqrt(P), np.sqrt(Q)
        return np.clip((b * upp + a * low) / np.maximum(a + b, 1e-300), alpha, beta)

    fallback = False
    if g is None:
        xn = primal(p0, q0)
    else:
        dgdx = np.asarray(dgdx, dtype=float)
        # no raa0 term here: a flat constraint (inactive hinge) must not pin x
        p, q = _approx_terms(dgdx, x, low, upp, span, raa0=0.0)
        r = g - np.sum(p / (upp - x) + q / (x - low))

        def g_tilde(xx):
            return r + np.sum(p / (upp - xx) + q / (xx - low))

        def x_of(lam):
            return primal(p0 + lam * p, q0 + lam * q)

        xn = x_of(0.0)
        if g_tilde(xn) > 0:
            hi = 1.0
            while g_tilde(x_of(hi)) > 0 and hi < 1e16:
                hi *= 4.0
            if g_tilde(x_of(hi)) > 0:
                # approximated constraint cannot be met inside the move limits:
                # projected Newton step on g along its gradient instead
                nrm = float(dgdx @ dgdx)
                step = -(g / nrm) * dgdx if nrm > 0 else np.zeros_like(x)
                xn = np.clip(x + step, alpha, beta)
                fallback = True
            else:
                lo = 0.0
                for _ in range(200):
                    mid = 0.5 * (lo + hi)
                    if g_tilde(x_of(mid)) > 0:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= 1e-14 * hi:
                        break
                xn = x_of(hi)

    xn = np.clip(xn, lo_b, hi_b)
    state.xold2 = state.xold1
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.iteration += 1
    state.last_fallback = fallback
    state.x = xn
    return xn
