from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssitl.errors import ModelSemanticError, ModelSyntaxError
from ssitl.model import (
    PathState,
    drift_jacobian,
    dump_model,
    load_model,
    parse_model,
    propensity,
    propensity_gradient,
)

from conftest import decay_net, linear_pair_net


def test_example1_structure(ex1):
    assert (ex1.d, ex1.J, ex1.x0, ex1.T) == (3, 4, (400, 798, 0), 0.2)


def test_example1_propensities(ex1):
    assert propensity(ex1, 0, [400, 798, 0]) == 400.0
    assert propensity(ex1, 1, [1, 0, 0]) == 0.0
    x = [400, 798, 0]
    assert propensity(ex1, 1, x) == pytest.approx(5 * 400 * 399)
    assert propensity(ex1, 2, x) == pytest.approx(1000 * 798)
    assert propensity(ex1, 3, x) == pytest.approx(0.1 * 798)


def test_example2_propensity(ex2):
    assert propensity(ex2, 2, [10_000, 100]) == pytest.approx(5000.0)
    assert propensity(ex2, 1, [10_000, 100]) == pytest.approx(1e5 * 1e4)


def test_example2_rate_vanishes_above_carrying_capacity(ex2):
    # the birth law 1e5 (K - S1) is negative above K and is clamped
    assert propensity(ex2, 1, [25_000, 0]) == 0.0


def test_zero_when_firing_leaves_orthant(ex1):
    # channel 2 consumes one S2
    assert propensity(ex1, 2, [5, 0, 0]) == 0.0


def test_negative_input_evaluated_at_clipped_state(ex1, ex2):
    assert propensity(ex1, 0, [-3, 2, 0]) == 0.0
    # birth of S1 from S1 = -1 lands in the orthant; the law sees S1 = 0
    assert propensity(ex2, 1, [-1, 5]) == pytest.approx(1e5 * 20_000)


def test_dimension_mismatch(ex1):
    with pytest.raises(ModelSemanticError):
        propensity(ex1, 0, [1, 2])


def test_gradients(ex1, ex2, decay):
    assert propensity_gradient(decay, 0, [3.0]) == pytest.approx([1.0])
    assert propensity_gradient(ex1, 1, [400.0, 0, 0])[0] == pytest.approx(3995.0)
    assert propensity_gradient(ex2, 1, [1e4, 1e2])[0] == pytest.approx(-1e5)


def _fd_jacobian(net, y, eps=1e-4):
    y = np.asarray(y, float)
    cols = []
    for k in range(net.d):
        e = np.zeros(net.d)
        e[k] = eps * max(1.0, abs(y[k]))
        cols.append((net.law(y + e) - net.law(y - e)) @ net.nu / (2 * e[k]))
    return np.array(cols).T


def test_drift_jacobian_examples(ex1, ex2, decay):
    assert drift_jacobian(decay, [5.0]) == pytest.approx(np.array([[-1.0]]))
    A2 = drift_jacobian(ex2, [1e4, 1e2])
    np.testing.assert_allclose(A2, [[-2e5, 0], [-0.5, -50]], rtol=1e-12)
    A1 = drift_jacobian(ex1, [400.0, 798.0, 0.0])
    np.testing.assert_allclose(A1, [[-7991, 2000, 0], [3995, -1000.1, 0], [0, 0.1, 0]], rtol=1e-12)
    for net, y in ((ex1, [400.0, 798.0, 0.0]), (ex2, [1e4, 1e2])):
        np.testing.assert_allclose(drift_jacobian(net, y), _fd_jacobian(net, y), rtol=1e-6, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 1e4), min_size=3, max_size=3))
def test_gradient_matches_finite_differences(y):
    net = load_model("example1")
    y = np.array(y)
    G = net.law_gradient(y)
    for k in range(3):
        h = 1e-5 * max(1.0, y[k])
        e = np.zeros(3)
        e[k] = h
        fd = (net.law(y + e) - net.law(y - e)) / (2 * h)
        np.testing.assert_allclose(G[:, k], fd, rtol=1e-6, atol=1e-6 * np.abs(net.law(y)).max())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-50, 5000), min_size=3, max_size=3))
def test_propensity_non_negative(x):
    net = load_model("example1")
    a = net.lattice_rates(np.array(x))
    assert np.all(a >= 0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.0, 1e3), min_size=2, max_size=2))
def test_linear_jacobian_state_independent(y):
    net = linear_pair_net()
    expected = np.array([[-2.0, 0.0], [2.0, -1.0]])
    np.testing.assert_allclose(drift_jacobian(net, y), expected)


def test_round_trip(ex1, ex2, pair):
    for net in (ex1, ex2, pair):
        again = parse_model(dump_model(net))
        assert again == net
        np.testing.assert_array_equal(again.nu, net.nu)
        np.testing.assert_array_equal(again.poly.coef, net.poly.coef)


def test_mass_action_dimerisation_halves():
    net = parse_model({"species": ["A", "B"], "initial": [10, 0], "T": 1,
                       "reactions": [{"rate": 2.0, "reactants": {"A": 2}, "products": {"B": 1}}]})
    assert propensity(net, 0, [10, 0]) == pytest.approx(2.0 * 10 * 9 / 2)


def test_negative_rate_rejected():
    with pytest.raises(ModelSemanticError):
        parse_model({"species": ["A"], "initial": [1], "T": 1,
                     "reactions": [{"rate": -1, "reactants": {"A": 1}, "products": {}}]})


def test_undeclared_species_rejected():
    with pytest.raises(ModelSemanticError):
        parse_model({"species": ["A"], "initial": [1], "T": 1,
                     "reactions": [{"rate": 1, "reactants": {"Q": 1}, "products": {}}]})


def test_reactant_order_cap():
    with pytest.raises(ModelSemanticError):
        parse_model({"species": ["A"], "initial": [1], "T": 1,
                     "reactions": [{"rate": 1, "reactants": {"A": 4}, "products": {}}]})


def test_zero_stoichiometry_rejected():
    with pytest.raises(ModelSemanticError):
        parse_model({"species": ["A"], "initial": [1], "T": 1,
                     "reactions": [{"rate": 1, "reactants": {"A": 1}, "products": {"A": 1}}]})


def test_syntax_error_has_location():
    with pytest.raises(ModelSyntaxError) as info:
        parse_model('{"species": ["A"],\n  "initial": [1,, ]}')
    assert info.value.line == 2


def test_load_from_file(tmp_path, ex1):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"species": ["S1", "S2", "S3"], "initial": [400, 798, 0], "T": 0.2,
                             "reactions": json.loads(dump_model(ex1))["reactions"]}))
    assert load_model(p) == ex1


def test_path_state_projection():
    s = PathState(np.array([3, -2, 1]))
    s.project()
    s.project()
    assert s.x.tolist() == [3, 0, 1] and s.negativity_events == 1


def test_decay_helper_sane():
    assert decay_net().J == 1
