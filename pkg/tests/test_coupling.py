from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssitl.coupling import (
    SpeciesObservable,
    coupled_exp_exp,
    coupled_exp_ssi,
    coupled_finals,
    coupled_ssi_ssi,
    observable,
    split_rates,
    substeps,
)
from ssitl.errors import ConfigError, ModelSemanticError
from ssitl.kernels import simulate_finals

from conftest import decay_net, linear_pair_net, make_net


def birth_net():
    return make_net({"species": ["A"], "initial": [5], "T": 1.0,
                     "reactions": [{"rate": 30.0, "reactants": {}, "products": {"A": 1}}]})


def test_split_examples():
    s = split_rates([3.0, 4.0, 0.0], [5.0, 4.0, 7.0])
    np.testing.assert_array_equal(s.A1, [3, 4, 0])
    np.testing.assert_array_equal(s.A2, [0, 0, 0])
    np.testing.assert_array_equal(s.A3, [2, 0, 7])


def test_split_rejects_negative():
    with pytest.raises(ConfigError):
        split_rates([-1.0], [1.0])


@given(st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e6)), min_size=1, max_size=8))
def test_split_invariants(pairs):
    af, ac = np.array(pairs).T
    s = split_rates(af, ac)
    np.testing.assert_allclose(s.A1 + s.A2, af)
    np.testing.assert_allclose(s.A1 + s.A3, ac)
    assert np.all(s.A2 * s.A3 == 0) and np.all(s.A1 >= 0) and np.all(s.A2 >= 0) and np.all(s.A3 >= 0)


def test_substeps_validation(ex1):
    assert substeps(ex1, ex1.T / 8) == 8
    for h in (ex1.T, ex1.T / 3, 0.0):
        with pytest.raises(ConfigError):
            substeps(ex1, h)


@pytest.mark.parametrize("fn", [coupled_ssi_ssi, coupled_exp_ssi])
def test_zero_rates_implicit(zero_net, fn):
    r = fn(zero_net, zero_net.T / 4, 0)
    assert r.diff_g == 0 and r.fine_final.tolist() == [7, 3] and r.coarse_final.tolist() == [7, 3]


def test_zero_rates_explicit(zero_net):
    r = coupled_exp_exp(zero_net, zero_net.T / 4, 0)
    assert r.diff_g == 0 and r.fine_final.tolist() == [7, 3]


@pytest.mark.parametrize("kind", ["imp-imp", "exp-imp", "exp-exp"])
def test_identical_rates_give_identical_legs(kind):
    net = birth_net()
    fine, coarse, fc, cc = coupled_finals(net, kind, 500, net.T / 16, np.random.default_rng(0))
    np.testing.assert_array_equal(fine, coarse)
    assert fine.mean() > 5


def test_diff_g_and_counters(ex1):
    r = coupled_ssi_ssi(ex1, ex1.T / 16, 3)
    assert r.diff_g == r.fine_final[2] - r.coarse_final[2]
    assert r.fine.steps == 16 and r.coarse.steps == 8
    # three draws per channel per fine substep are booked on the fine leg
    assert r.fine.poisson_draws == 3 * ex1.J * 16 and r.coarse.poisson_draws == 0
    assert r.coarse.newton_iters_total > 0 and r.fine.newton_iters_total > 0
    r = coupled_exp_ssi(ex1, ex1.T / 2**11, 3)
    assert r.fine.newton_iters_total == 0 and r.coarse.newton_iters_total > 0
    r = coupled_exp_exp(ex1, ex1.T / 2**11, 3)
    assert r.fine.newton_iters_total == 0 == r.coarse.newton_iters_total


def test_observable_resolution(ex1):
    assert observable(ex1) == SpeciesObservable(2)
    assert observable(ex1, "S2") == SpeciesObservable(1)
    assert observable(ex1, "1") == SpeciesObservable(0)
    with pytest.raises(ConfigError):
        observable(ex1, 4)
    with pytest.raises(ModelSemanticError):
        observable(ex1, "X9")


def test_custom_observable(ex1):
    r = coupled_ssi_ssi(ex1, ex1.T / 4, 1, g=lambda x: float(x[0] + x[1]))
    assert r.diff_g == (r.fine_final[:2].sum() - r.coarse_final[:2].sum())


def _moments(x):
    x = x.astype(float)
    n = x.size
    m, v = x.mean(), x.var(ddof=1)
    m4 = ((x - m) ** 4).mean()
    return m, v, np.sqrt(v / n), np.sqrt(max(m4 - v * v, 0) / n)


def _agree(a, b, k=4.0):
    ma, va, sma, sva = _moments(a)
    mb, vb, smb, svb = _moments(b)
    assert abs(ma - mb) <= k * np.hypot(sma, smb), (ma, mb)
    assert abs(va - vb) <= k * np.hypot(sva, svb), (va, vb)


@pytest.mark.parametrize("kind,fine_method,coarse_method", [
    ("imp-imp", "ssi", "ssi"), ("exp-imp", "explicit", "ssi"), ("exp-exp", "explicit", "explicit")])
def test_marginal_consistency(kind, fine_method, coarse_method):
    net = linear_pair_net()
    h = net.T / 8
    n = 100_000
    fine, coarse, _, _ = coupled_finals(net, kind, n, h, np.random.default_rng(11))
    Xf, _ = simulate_finals(net, fine_method, n, h, np.random.default_rng(12))
    Xc, _ = simulate_finals(net, coarse_method, n, 2 * h, np.random.default_rng(13))
    for i in range(2):
        _agree(fine[:, i], Xf[:, i])
        _agree(coarse[:, i], Xc[:, i])


def test_telescoping_identity():
    net = linear_pair_net()
    n = 100_000
    for lv in (2, 3):
        fine, _, _, _ = coupled_finals(net, "imp-imp", n, net.T / 2**lv, np.random.default_rng(lv))
        _, coarse, _, _ = coupled_finals(net, "imp-imp", n, net.T / 2 ** (lv + 1), np.random.default_rng(100 + lv))
        ma, _, sa, _ = _moments(fine[:, 1])
        mb, _, sb, _ = _moments(coarse[:, 1])
        assert abs(ma - mb) <= 4 * np.hypot(sa, sb)


def test_exp_imp_consistent_on_decay():
    net = decay_net(k=1.0, x0=200, T=1.0)
    lv = 8
    h = net.T / 2**lv
    fine, coarse, _, _ = coupled_finals(net, "exp-imp", 20_000, h, np.random.default_rng(4))
    d = (fine - coarse)[:, 0].astype(float)
    # one-step mean factors: explicit (1 - h), implicit 1 / (1 + 2h)
    exact = 200 * ((1 - h) ** 2**lv - (1 + 2 * h) ** -(2 ** (lv - 1)))
    assert abs(exact) < 0.01 * 200 * np.exp(-1)
    assert abs(d.mean() - exact) < 4 * d.std(ddof=1) / np.sqrt(d.size)


def test_mixed_coupling_variance_exceeds_implicit(ex1):
    h = ex1.T / 2**11
    n = 4_000
    f, c, _, _ = coupled_finals(ex1, "exp-imp", n, h, np.random.default_rng(1))
    v_ie = np.var((f - c)[:, 2], ddof=1)
    f, c, _, _ = coupled_finals(ex1, "imp-imp", n, h, np.random.default_rng(2))
    v_ii = np.var((f - c)[:, 2], ddof=1)
    assert v_ie > v_ii


def test_coupled_determinism(ex1):
    a = coupled_finals(ex1, "imp-imp", 50, ex1.T / 32, np.random.default_rng(9))
    b = coupled_finals(ex1, "imp-imp", 50, ex1.T / 32, np.random.default_rng(9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
