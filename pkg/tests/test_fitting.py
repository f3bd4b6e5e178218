from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssitl.errors import ConfigError, FitError, LevelRangeError
from ssitl.mlmc.fitting import (
    LevelStats,
    allocate_samples,
    fit_and_extrapolate,
    select_finest_level,
    stat_error_bound,
    work,
)


def stats_for(levels, V, bias=None):
    bias = bias if bias is not None else [2.0**-lv for lv in levels]
    return [LevelStats(lv, "imp-imp", b, v, 1.0, 1000) for lv, b, v in zip(levels, bias, V)]


def test_level_stats_invariants():
    with pytest.raises(ConfigError):
        LevelStats(1, "imp-imp", 0.0, -1.0, 1.0, 10)
    s = LevelStats(1, "imp-imp", -0.3, 4.0, 1.0, 100)
    assert s.std_error == pytest.approx(0.2)
    assert s.bias_bound() == pytest.approx(0.7)


def test_geometric_extrapolation_exact():
    f = fit_and_extrapolate(stats_for([2, 3, 4], [2.0**-2, 2.0**-3, 2.0**-4]), [5, 9])
    assert f.var == pytest.approx((2.0**-5, 2.0**-9), rel=1e-12)
    assert f.bias == pytest.approx((2.0**-5, 2.0**-9), rel=1e-12)
    assert f.var_slope == pytest.approx(-1.0) and f.bias_slope == pytest.approx(-1.0)


def test_published_implicit_extrapolation():
    f = fit_and_extrapolate(stats_for([1, 2, 3], [3.1, 1.7, 0.9]), [4, 5, 6, 7, 8])
    assert f.var == pytest.approx((0.49, 0.26, 0.14, 7.7e-2, 4.1e-2), rel=0.02)


def test_published_explicit_extrapolation():
    f = fit_and_extrapolate(stats_for([11, 12, 13], [4.1e-2, 1.9e-2, 8.2e-3]), [14, 15, 16, 17, 18])
    assert f.var[:4] == pytest.approx((3.7e-3, 1.6e-3, 7e-4, 3e-4), rel=0.15)
    # published values carry one or two significant figures; level 18 is a bare power of ten
    assert 1e-4 <= f.var[4] < 2e-4


def test_fit_excludes_non_positive_and_needs_three():
    f = fit_and_extrapolate(stats_for([1, 2, 3, 4], [0.5, 0.0, 0.125, 0.0625]), [5])
    assert f.var_at(5) == pytest.approx(2.0**-5, rel=1e-9)
    with pytest.raises(FitError):
        fit_and_extrapolate(stats_for([1, 2, 3], [1.0, 0.0, 0.5]), [4])
    with pytest.raises(FitError):
        fit_and_extrapolate(stats_for([1, 2], [1.0, 0.5]), [4])


def test_select_finest_level():
    assert select_finest_level(10.0, 0.5, {1: 0.3, 2: 0.1}) == 1
    geometric = {lv: 2.0**-lv for lv in range(1, 20)}
    # strict inequality: 2^-10 is not below (1 - theta) TOL = 2^-10
    assert select_finest_level(2.0**-9, 0.5, geometric) == 11
    with pytest.raises(LevelRangeError):
        select_finest_level(1e-9, 0.5, {1: 0.1, 2: 0.05})
    with pytest.raises(ConfigError):
        select_finest_level(0.0, 0.5, geometric)


@given(st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
def test_finest_level_monotone_in_tol(t1, t2):
    geometric = {lv: 3.0 * 2.0**-lv for lv in range(0, 40)}
    lo, hi = sorted((t1, t2))
    assert select_finest_level(hi, 0.5, geometric) <= select_finest_level(lo, 0.5, geometric)


def test_allocation_single_level():
    N = allocate_samples([1.0], [1.0], [1.0], 0.05, 0.5, 1.96)
    assert N.tolist() == [6147]


def test_allocation_zero_variance():
    assert allocate_samples([0.0, 0.0], [1.0, 2.0], [1.0, 0.5], 0.1).tolist() == [1, 1]


def test_allocation_c_alpha_scaling():
    V, C, h = [3.0, 1.0, 0.2], [1.0, 2.5, 2.5], [1.0, 0.5, 0.25]
    a = allocate_samples(V, C, h, 1e-3, 0.5, 1.0)
    b = allocate_samples(V, C, h, 1e-3, 0.5, 2.0)
    np.testing.assert_allclose(b / a, 4.0, rtol=1e-5)


def test_allocation_validation():
    with pytest.raises(ConfigError):
        allocate_samples([-1.0], [1.0], [1.0], 0.1)
    with pytest.raises(ConfigError):
        allocate_samples([1.0], [0.0], [1.0], 0.1)
    with pytest.raises(ConfigError):
        allocate_samples([1.0, 2.0], [1.0], [1.0], 0.1)


level_lists = st.lists(st.tuples(st.floats(1e-6, 100.0), st.floats(0.1, 10.0)), min_size=1, max_size=6)


@settings(max_examples=200, deadline=None)
@given(level_lists, st.floats(1e-3, 1.0), st.floats(0.1, 0.9))
def test_allocation_meets_constraint(levels, TOL, theta):
    V = np.array([v for v, _ in levels])
    C = np.array([c for _, c in levels])
    h = 2.0 ** -np.arange(len(levels))
    N = allocate_samples(V, C, h, TOL, theta)
    assert np.all(N >= 1)
    assert stat_error_bound(V, N) <= theta * TOL * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 10.0), st.floats(0.5, 5.0)), min_size=2, max_size=4))
def test_allocation_locally_optimal(levels):
    V = np.array([v for v, _ in levels])
    C = np.array([c for _, c in levels])
    h = 2.0 ** -np.arange(len(levels))
    TOL, theta = 0.05, 0.5
    N = allocate_samples(V, C, h, TOL, theta)
    W = work(C, N, h)
    slack = float((C / h).sum())  # one extra sample per level from the ceiling
    target = (theta * TOL / 1.96) ** 2
    for i, j in itertools.permutations(range(len(levels)), 2):
        for step in (1, max(1, int(0.05 * N[i]))):
            M = N.astype(float).copy()
            M[i] += step
            # smallest N_j keeping the constraint
            rest = target - sum(V[k] / M[k] for k in range(len(M)) if k != j)
            if rest <= 0:
                continue
            M[j] = max(1.0, math.ceil(V[j] / rest))
            assert work(C, M, h) >= W - slack


def test_stat_error_and_work():
    assert stat_error_bound([4.0], [100], 2.0) == pytest.approx(0.4)
    assert work([2.0, 3.0], [10, 5], [1.0, 0.5]) == pytest.approx(50.0)
