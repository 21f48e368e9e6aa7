import numpy as np
from hypothesis import given, settings, strategies as st

from aggregates.mma import MmaState, mma_step


def minimize_quadratic(x0, target, n_iter=50, lo=0.0, hi=2.0):
    x = np.atleast_1d(np.asarray(x0, float))
    st_ = MmaState(np.full_like(x, lo), np.full_like(x, hi))
    path = [x]
    for _ in range(n_iter):
        x = mma_step(st_, x, float(np.sum((x - target) ** 2)), 2 * (x - target))
        path.append(x)
    return x, path


def test_converges_to_unconstrained_optimum():
    x, _ = minimize_quadratic(0.1, 1.0)
    assert abs(x[0] - 1.0) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(-1.0, 3.0))
def test_iterates_respect_bounds(x0, target):
    x, path = minimize_quadratic(x0, target)
    for p in path[1:]:
        assert np.all(p >= 0.0) and np.all(p <= 2.0)
    assert abs(x[0] - np.clip(target, 0.0, 2.0)) <= 1e-3


def test_zero_gradient_keeps_point():
    x = np.array([0.3, 1.7, 1.0])
    st_ = MmaState(np.zeros(3), np.full(3, 2.0))
    np.testing.assert_allclose(mma_step(st_, x, 1.0, np.zeros(3)), x, atol=1e-12)


def test_inactive_constraint_does_not_pin():
    x = np.array([0.2])
    st_ = MmaState(np.zeros(1), np.full(1, 2.0))
    for _ in range(50):
        x = mma_step(st_, x, float((x[0] - 1) ** 2), 2 * (x - 1), g=0.0, dgdx=np.zeros(1))
    assert abs(x[0] - 1.0) <= 1e-3


def test_linear_constraint_is_respected():
    # minimize (x-1)^2 + (y-1)^2 subject to x + y <= 1
    x = np.array([0.1, 0.1])
    st_ = MmaState(np.zeros(2), np.full(2, 2.0))
    for _ in range(80):
        x = mma_step(st_, x, float(np.sum((x - 1) ** 2)), 2 * (x - 1), g=float(x.sum() - 1), dgdx=np.ones(2))
    np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-3)
    assert not st_.last_fallback


def test_infeasible_subproblem_falls_back_to_projection():
    # violation larger than one move limit can repair: projected step along grad g
    x = np.array([1.9, 1.9])
    st_ = MmaState(np.zeros(2), np.full(2, 2.0))
    g = float(x.sum() - 0.5)
    xn = mma_step(st_, x, 0.0, np.zeros(2), g=g, dgdx=np.ones(2))
    assert st_.last_fallback
    # clipped to the 10% move limit in each coordinate
    np.testing.assert_allclose(xn, [1.7, 1.7], atol=1e-12)
