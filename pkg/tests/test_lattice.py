import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfrbsde.errors import ConfigError, ContractError
from mfrbsde.lattice import (
    TimeGrid,
    build_lattice,
    conditional_expectation,
    expectation_process,
    marginals,
    node_marginal,
    z_projection,
)


def test_two_step_values_and_probs():
    lat = build_lattice(1.0, 2)
    assert lat.dt == 0.5
    np.testing.assert_allclose(lat.values[1], [-math.sqrt(0.5), math.sqrt(0.5)])
    np.testing.assert_allclose(lat.values[2], [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-15)
    np.testing.assert_array_equal(lat.probs[2], [0.25, 0.5, 0.25])


def test_single_long_step():
    lat = build_lattice(4.0, 1)
    np.testing.assert_array_equal(lat.values[1], [-2.0, 2.0])


@pytest.mark.parametrize("T,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, -3)])
def test_bad_grid_rejected(T, n):
    with pytest.raises(ConfigError):
        build_lattice(T, n)


def test_grid_dt_is_stored_once():
    g = TimeGrid(0.3, 7)
    assert g.dt == 0.3 / 7
    assert math.isclose(g.dt * g.n_steps, g.horizon)


@pytest.mark.parametrize("n", [1, 5, 40, 300])
def test_level_structure(n):
    lat = build_lattice(2.0, n)
    for i in range(n + 1):
        assert lat.values[i].shape == (i + 1,)
        assert abs(lat.probs[i].sum() - 1.0) < 1e-12
    for i in range(n):
        gaps = lat.values[i + 1][1:] - lat.values[i + 1][:-1]
        np.testing.assert_allclose(gaps, 2 * lat.sqrt_dt, rtol=1e-12)


def test_conditional_expectation_examples(lat8):
    for i in range(8):
        np.testing.assert_array_equal(conditional_expectation(lat8, i, np.full(i + 2, 3.5)), np.full(i + 1, 3.5))
        b_next = lat8.values[i + 1]
        np.testing.assert_allclose(conditional_expectation(lat8, i, b_next), lat8.values[i], atol=1e-15)
        np.testing.assert_allclose(conditional_expectation(lat8, i, b_next ** 2), lat8.values[i] ** 2 + lat8.dt, atol=1e-14)


def test_z_projection_examples(lat8):
    for i in range(8):
        assert np.all(z_projection(lat8, i, np.full(i + 2, -2.0)) == 0.0)
        np.testing.assert_allclose(z_projection(lat8, i, lat8.values[i + 1]), 1.0, rtol=1e-14)
        np.testing.assert_allclose(z_projection(lat8, i, 3 * lat8.values[i + 1]), 3.0, rtol=1e-14)


def test_shape_mismatch_is_contract_error(lat8):
    with pytest.raises(ContractError):
        conditional_expectation(lat8, 2, np.zeros(5))
    with pytest.raises(ContractError):
        z_projection(lat8, 8, np.zeros(10))
    with pytest.raises(ContractError):
        node_marginal(lat8, 3, np.zeros(3))


def test_node_marginal_examples():
    lat = build_lattice(1.0, 2)
    law0 = node_marginal(lat, 0, [7.0])
    assert list(law0.values) == [7.0] and list(law0.weights) == [1.0]
    law2 = node_marginal(lat, 2, lat.values[2])
    np.testing.assert_allclose(law2.weights, [0.25, 0.5, 0.25])
    absb = node_marginal(lat, 2, np.abs(lat.values[2]))
    np.testing.assert_allclose(absb.values, [0.0, math.sqrt(2)])
    np.testing.assert_allclose(absb.weights, [0.5, 0.5])


def test_marginals_window(lat8):
    laws = marginals(lat8, lat8.values, 2, 5)
    assert laws[1] is None and laws[6] is None
    assert all(laws[i] is not None for i in range(2, 6))


@given(st.lists(st.floats(-50, 50), min_size=9, max_size=9))
def test_tower_property(vals):
    lat = build_lattice(1.0, 8)
    term = np.array(vals)
    ep = expectation_process(lat, term)
    assert abs(ep[0][0] - float(np.dot(lat.probs[8], term))) <= 1e-12 * max(1.0, np.abs(term).max())


@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6), st.lists(st.floats(0, 5), min_size=6, max_size=6))
def test_conditional_expectation_linear_and_monotone(a, gap):
    lat = build_lattice(1.0, 5)
    x = np.array(a)
    y = x + np.array(gap)
    ex, ey = conditional_expectation(lat, 4, x), conditional_expectation(lat, 4, y)
    assert np.all(ey >= ex)
    np.testing.assert_allclose(conditional_expectation(lat, 4, 2 * x - y), 2 * ex - ey, atol=1e-12)
    np.testing.assert_allclose(z_projection(lat, 4, x + y), z_projection(lat, 4, x) + z_projection(lat, 4, y), atol=1e-10)


def test_node_marginal_weights_sum(lat8):
    for i in range(9):
        law = node_marginal(lat8, i, np.round(lat8.values[i] ** 2, 12))
        assert abs(law.weights.sum() - 1) < 1e-12
