"""Exponential-map rotations and their parameter derivatives."""
from __future__ import annotations

import numpy as np

SERIES_THRESHOLD = 1e-8
DERIVATIVE_THRESHOLD = 1e-4

_GENERATORS = np.array([
    [[0, 0, 0], [0, 0, -1], [0, 1, 0]],
    [[0, 0, 1], [0, 0, 0], [-1, 0, 0]],
    [[0, -1, 0], [1, 0, 0], [0, 0, 0]],
], dtype=float)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_from_expmap(v) -> np.ndarray:
    """Rodrigues' formula for the rotation of angle |v| about v/|v|."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    K = skew(v)
    if theta < SERIES_THRESHOLD:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_expmap_derivative(v, i: int) -> np.ndarray:
    """dR/dv_i, with ``i`` a 0-based axis index.

    Uses the closed form of Gallego & Yezzi,
    dR/dv_i = (v_i [v]x + [v x (I - R) e_i]x) R / |v|^2,
    and the third-order series of exp([v]x) near the origin.
    """
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    E = _GENERATORS[i]
    if theta < DERIVATIVE_THRESHOLD:
        K = skew(v)
        return E + 0.5 * (E @ K + K @ E) + (E @ K @ K + K @ E @ K + K @ K @ E) / 6.0
    R = rotation_from_expmap(v)
    e = np.zeros(3)
    e[i] = 1.0
    w = np.cross(v, (np.eye(3) - R) @ e)
    return (v[i] * skew(v) + skew(w)) @ R / (theta * theta)


def rotation_expmap_derivatives(v) -> np.ndarray:
    """Stack of the three derivative matrices, shape (3, 3, 3)."""
    return np.stack([rotation_expmap_derivative(v, i) for i in range(3)])


def uniform_scale(A, rtol: float = 1e-9) -> float | None:
    """Scale factor s if A = s * (orthogonal matrix), else None."""
    sv = np.linalg.svd(np.asarray(A, float), compute_uv=False)
    if sv[0] - sv[-1] <= rtol * sv[0]:
        return float(sv.mean())
    return None
