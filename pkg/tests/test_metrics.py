"""Metric implementations checked against independent oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alternator.errors import ConfigError, ShapeError
from alternator.metrics import (
    crps_ensemble,
    marginal_mmd,
    median_bandwidth,
    mmd_rbf,
    pointwise_metrics,
    sequence_mmd,
)


# --- oracles ---------------------------------------------------------------

def mmd_bruteforce(X, Y, h):
    """Naive double-loop V-statistic; deliberately independent code path."""
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)

    def k(a, b):
        d = a - b
        return np.exp(-float(d @ d) / (2.0 * h * h))

    def mean_kernel(A, B):
        total = 0.0
        for a in A:
            for b in B:
                total += k(a, b)
        return total / (len(A) * len(B))

    return mean_kernel(X, X) + mean_kernel(Y, Y) - 2.0 * mean_kernel(X, Y)


def crps_integral(members, y):
    """Exact integral of (F(u) - step(u - y))^2 for the empirical CDF."""
    members = np.sort(np.asarray(members, dtype=np.float64))
    M = len(members)
    points = np.sort(np.concatenate([members, [y]]))
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        if b == a:
            continue
        F = np.searchsorted(members, a, side="right") / M
        H = 1.0 if a >= y else 0.0
        total += (F - H) ** 2 * (b - a)
    return total


# --- bandwidth --------------------------------------------------------------

def test_median_bandwidth_enumerated():
    # distances {1, 3, 2} -> median 2
    assert median_bandwidth(np.array([[0.0], [1.0], [3.0]])) == 2.0


def test_median_bandwidth_degenerate_fallback():
    assert median_bandwidth(np.zeros((4, 2))) == 1.0


def test_median_bandwidth_single_pair():
    assert median_bandwidth(np.array([[0.0, 0.0], [3.0, 4.0]])) == 5.0


def test_median_bandwidth_needs_two_points():
    with pytest.raises(ConfigError):
        median_bandwidth(np.ones((1, 3)))


# --- MMD ---------------------------------------------------------------------

def test_mmd_identical_sets_zero():
    X = np.random.default_rng(0).normal(size=(10, 3))
    assert abs(mmd_rbf(X, X, h=1.3)) <= 1e-12


def test_mmd_two_singletons_closed_form():
    val = mmd_rbf(np.array([[0.0]]), np.array([[1.0]]), h=1.0)
    assert val == pytest.approx(2.0 - 2.0 * np.exp(-0.5), abs=1e-12)


def test_mmd_matches_bruteforce_oracle():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 4))
    Y = rng.normal(loc=0.4, size=(20, 4))
    h = median_bandwidth(np.concatenate([X, Y]))
    assert mmd_rbf(X, Y, h) == pytest.approx(mmd_bruteforce(X, Y, h), abs=1e-12)


def test_mmd_symmetry_and_order_invariance():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(12, 2))
    Y = rng.normal(size=(9, 2))
    assert mmd_rbf(X, Y, 0.8) == pytest.approx(mmd_rbf(Y, X, 0.8), abs=1e-12)
    perm = rng.permutation(12)
    assert mmd_rbf(X[perm], Y, 0.8) == pytest.approx(mmd_rbf(X, Y, 0.8), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=8),
    st.floats(0.1, 5.0),
)
def test_mmd_self_zero_property(values, h):
    X = np.array(values)[:, None]
    assert abs(mmd_rbf(X, X, h)) <= 1e-12


def test_mmd_shape_mismatch():
    with pytest.raises(ShapeError):
        mmd_rbf(np.ones((3, 2)), np.ones((3, 3)), 1.0)


def test_sequence_mmd_flattens_and_separates():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(15, 6, 1))
    B = rng.normal(loc=3.0, size=(15, 6, 1))
    assert sequence_mmd(A, A[::-1]) <= 1e-12 + sequence_mmd(A, B)
    assert sequence_mmd(A, B) > 10 * abs(sequence_mmd(A, A))


def test_marginal_mmd_runs_and_zero_on_self():
    A = np.random.default_rng(4).normal(size=(10, 3, 2))
    assert abs(marginal_mmd(A, A)) <= 1e-12


# --- CRPS ---------------------------------------------------------------------

def test_crps_degenerate_ensemble_is_absolute_error():
    members = np.full(7, 1.4)
    assert crps_ensemble(members, 0.9) == pytest.approx(0.5, abs=1e-12)


def test_crps_two_member_enumeration():
    assert crps_ensemble(np.array([0.0, 2.0]), 1.0) == pytest.approx(0.5, abs=1e-12)


def test_crps_single_member_exact_hit():
    assert crps_ensemble(np.array([0.7]), 0.7) == 0.0


@pytest.mark.parametrize("M", [1, 2, 3])
def test_crps_matches_piecewise_integral_oracle(M):
    rng = np.random.default_rng(5)
    for trial in range(25):
        members = rng.normal(size=M)
        y = rng.normal()
        assert crps_ensemble(members, y) == pytest.approx(
            crps_integral(members, y), abs=1e-10
        )


def test_crps_member_order_invariance():
    rng = np.random.default_rng(6)
    members = rng.normal(size=9)
    y = 0.3
    assert crps_ensemble(members, y) == pytest.approx(
        crps_ensemble(members[::-1].copy(), y), abs=1e-13
    )


@settings(max_examples=30, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(1, 6))
def test_crps_constant_ensemble_property(c, y, M):
    assert crps_ensemble(np.full(M, c), y) == pytest.approx(abs(c - y), abs=1e-12)


def test_crps_multivariate_averages_coordinates():
    members = np.array([[0.0, 1.0], [2.0, 1.0]])
    y = np.array([1.0, 1.0])
    # coord 0: members {0,2} vs 1 -> 0.5; coord 1: degenerate exact -> 0
    assert crps_ensemble(members, y) == pytest.approx(0.25, abs=1e-12)


# --- pointwise ------------------------------------------------------------------

def test_pointwise_perfect_prediction():
    pm = pointwise_metrics(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    assert (pm.mae, pm.mse, pm.cc) == (0.0, 0.0, pytest.approx(1.0))


def test_pointwise_constant_offset():
    pm = pointwise_metrics(np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 4.0]))
    assert pm.mae == pytest.approx(1.0)
    assert pm.mse == pytest.approx(1.0)
    assert pm.cc == pytest.approx(1.0)


def test_pointwise_constant_series_flags_cc():
    pm = pointwise_metrics(np.array([2.0, 2.0, 2.0]), np.array([1.0, 2.0, 3.0]))
    assert pm.cc is None
    assert pm.mae == pytest.approx(2.0 / 3.0)


def test_pointwise_length_mismatch():
    with pytest.raises(ShapeError):
        pointwise_metrics(np.ones(3), np.ones(4))
