import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from mfrbsde.errors import ContractError
from mfrbsde.marginal_law import MarginalLaw, moment, wasserstein1

atoms = st.lists(st.tuples(st.floats(-20, 20), st.floats(0.01, 1.0)), min_size=1, max_size=12)


def law_of(pairs):
    v, w = zip(*pairs)
    return MarginalLaw.from_samples(v, w)


def test_examples():
    d0 = MarginalLaw.dirac(0.0)
    assert wasserstein1(d0, d0) == 0.0
    assert wasserstein1(MarginalLaw([0, 2], [0.5, 0.5]), MarginalLaw.dirac(1.0)) == 1.0
    law = MarginalLaw([-1, 0.5, 3], [0.2, 0.3, 0.5])
    assert wasserstein1(law, law.shifted(-2.5)) == pytest.approx(2.5, abs=1e-14)
    assert moment(MarginalLaw([0, 2], [0.5, 0.5]), "mean") == 1.0
    assert moment(MarginalLaw([-1, 1], [0.5, 0.5]), "abs_mean") == 1.0


@pytest.mark.parametrize(
    "values,weights",
    [([1, 0], [0.5, 0.5]), ([0, 0], [0.5, 0.5]), ([0, 1], [0.5, 0.6]), ([0, 1], [0.0, 1.0]), ([np.nan], [1.0]), ([], [])],
)
def test_invalid_laws(values, weights):
    with pytest.raises(ContractError):
        MarginalLaw(values, weights)


def test_unknown_moment():
    with pytest.raises(ContractError):
        moment(MarginalLaw.dirac(1.0), "variance")


@given(atoms, atoms)
def test_matches_scipy(a, b):
    la, lb = law_of(a), law_of(b)
    ref = wasserstein_distance(la.values, lb.values, la.weights, lb.weights)
    assert wasserstein1(la, lb) == pytest.approx(ref, abs=1e-9)


@given(atoms, atoms, atoms)
def test_metric_axioms(a, b, c):
    la, lb, lc = law_of(a), law_of(b), law_of(c)
    assert wasserstein1(la, lb) == wasserstein1(lb, la)
    assert wasserstein1(la, lc) <= wasserstein1(la, lb) + wasserstein1(lb, lc) + 1e-10
    assert wasserstein1(la, la) == 0.0


@given(atoms)
def test_abs_mean_is_distance_to_dirac(a):
    law = law_of(a)
    assert abs(wasserstein1(law, MarginalLaw.dirac(0.0)) - law.abs_mean) <= 1e-12 * max(1.0, law.abs_mean)


@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.lists(st.floats(-1, 1), min_size=5, max_size=5))
def test_w1_bounded_by_sup_norm(x, dx):
    w = np.array([1, 4, 6, 4, 1]) / 16
    x = np.array(x)
    y = x + np.array(dx)
    lx, ly = MarginalLaw.from_samples(x, w), MarginalLaw.from_samples(y, w)
    assert wasserstein1(lx, ly) <= np.abs(dx).max() + 1e-12
