import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfrbsde import _kernels

pytestmark = pytest.mark.skipif(_kernels.NUMBA_KERNELS is None, reason="numba not installed")


def both(name):
    return _kernels.NUMPY_KERNELS[name], _kernels.NUMBA_KERNELS[name]


@given(st.integers(1, 40), st.integers(0, 2**31))
def test_backward_accumulate_agrees(m, seed):
    rng = np.random.default_rng(seed)
    src, term = rng.normal(size=(m + 1, m + 1)), rng.normal(size=m + 1)
    a, b = both("backward_accumulate")
    np.testing.assert_array_equal(np.tril(a(src, term)), np.tril(b(src, term)))


@given(st.integers(1, 40), st.integers(0, 2**31))
def test_accumulate_k_agrees(n, seed):
    dk = np.tril(np.random.default_rng(seed).uniform(0, 1, size=(n, n)))
    a, b = both("accumulate_k")
    np.testing.assert_allclose(a(dk), b(dk), rtol=1e-14, atol=1e-15)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=30), st.sampled_from([0.0, 1e-14, 0.1]))
def test_merge_atoms_agrees(vals, tol):
    v = np.round(np.array(vals), 1)
    w = np.full(v.size, 1.0 / v.size)
    (va, wa), (vb, wb) = both("merge_atoms")[0](v, w, tol), both("merge_atoms")[1](v, w, tol)
    np.testing.assert_array_equal(va, vb)
    np.testing.assert_allclose(wa, wb, rtol=1e-14)


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_w1_agrees(na, nb, seed):
    rng = np.random.default_rng(seed)
    va, vb = np.sort(rng.normal(size=na)), np.sort(rng.normal(size=nb))
    wa, wb = rng.dirichlet(np.ones(na)), rng.dirichlet(np.ones(nb))
    a, b = both("w1_quantile")
    assert a(va, wa, vb, wb) == pytest.approx(b(va, wa, vb, wb), rel=1e-12, abs=1e-14)


def test_env_flag_selects_numpy():
    env = {**os.environ, "MFRBSDE_DISABLE_NUMBA": "1"}
    out = subprocess.run(
        [sys.executable, "-c", "from mfrbsde import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_solvers_agree_across_backends(tmp_path):
    script = (
        "from mfrbsde import harness\n"
        "p = harness.load_problem('configs/american_put_meanfield.json')\n"
        "import sys; sys.stdout.write(harness.solution_csv(p, __import__('mfrbsde.meanfield', fromlist=['x']).solve(p)[0]))\n"
    )
    root = os.path.dirname(os.path.dirname(__file__))
    outs = []
    for flag in ("0", "1"):
        env = {**os.environ, "MFRBSDE_DISABLE_NUMBA": flag, "MFRBSDE_LOG": "quiet"}
        outs.append(subprocess.run([sys.executable, "-c", script], env=env, cwd=root, capture_output=True, text=True, check=True).stdout)
    rows = [np.array([[float(x) if x else np.nan for x in line.split(",")] for line in o.splitlines()[1:]]) for o in outs]
    np.testing.assert_allclose(rows[0], rows[1], rtol=1e-12, atol=1e-13)
