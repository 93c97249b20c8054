import numpy as np
from hypothesis import given, settings, strategies as st

import oracle
from dcreg.stargeom import Gaussian


def test_grid_min_quadratic():
    x, v = oracle.grid_min(lambda P: 0.5 * (P ** 2).sum(1), oracle.GridSpec((-1, -1), (1, 1), (101, 101)))
    assert np.array_equal(x, [0.0, 0.0]) and v == 0.0


def test_l1_minus_l2_zeros_are_one_sparse():
    g = oracle.GridSpec((-3, -3), (3, 3), (2001, 2001))
    P, v = oracle.grid_values(lambda P: np.abs(P).sum(1) - np.hypot(P[:, 0], P[:, 1]), g)
    assert v.min() == 0.0
    zeros = P[v <= 1e-15]
    assert np.all((zeros[:, 0] == 0) | (zeros[:, 1] == 0))
    # every axis node is a zero
    assert len(zeros) == 2 * 2001 - 1


def test_soft_threshold_examples():
    assert np.array_equal(oracle.soft_threshold([2.0, -0.5], 1.0), [1.0, 0.0])
    v = np.array([0.3, -2.0, 0.0])
    assert np.array_equal(oracle.soft_threshold(v, 0.0), v)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0, 2))
def test_soft_threshold_matches_grid_prox(v, tau):
    g = oracle.GridSpec((-4.0,), (4.0,), (100_001,))
    x, _ = oracle.grid_min(lambda P: 0.5 * (P[:, 0] - v) ** 2 + tau * np.abs(P[:, 0]), g)
    assert abs(x[0] - oracle.soft_threshold([v], tau)[0]) <= g.spacing()[0]


def test_mc_expectation():
    p = Gaussian()
    m, se = oracle.mc_expectation(p, lambda X: 1.0, 1000, 0)
    assert m == 1.0 and se == 0.0
    m, se = oracle.mc_expectation(p, lambda X: (X ** 2).sum(1), 200_000, 1)
    assert abs(m - 2.0) < 4 * se
    assert oracle.mc_expectation(p, lambda X: X[:, 0], 100, 7) == oracle.mc_expectation(p, lambda X: X[:, 0], 100, 7)


def test_gaussian_radial_power_closed_form():
    # int t (2 pi)^-1 exp(-t^2/2) dt = 1 / (2 pi)
    assert abs(oracle.gaussian_radial_power(np.eye(2), [1, 0], 1.0) - 1 / (2 * np.pi)) < 1e-14
