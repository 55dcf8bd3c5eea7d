"""The numba loops and the numpy twins must agree, and the env flag must switch them."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from d2dbayes.model import _kernels as K


def _case(seed, N=4, T=9, M=3):
    rng = np.random.default_rng(seed)
    costs = rng.uniform(0, 30, size=(T, M))
    eta = rng.uniform(0.02, 0.98, N)
    theta = rng.uniform(0.05, 3, N)
    rho = rng.uniform(0.02, 0.9, N)
    v1 = rng.uniform(0, 10, size=(N, M))
    choices = rng.integers(0, M + 1, size=(N, T))
    counts = np.stack([np.bincount(choices[:, t], minlength=M + 1) for t in range(T)])
    counts[rng.integers(0, T), :] = 0  # a day with zeros everywhere but one cell
    counts[:, 0] += N - counts.sum(axis=1)
    return eta, theta, rho, v1, costs, choices, counts


def _same(a, b):
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-10)


@given(st.integers(0, 10**6), st.integers(1, 6), st.integers(1, 12), st.integers(2, 4))
@settings(max_examples=40, deadline=None)
def test_twins_agree(seed, N, T, M):
    eta, theta, rho, v1, costs, choices, counts = _case(seed, N, T, M)
    _same(K.pooled_kernel_nb(eta[0], theta[0], rho[0], v1[0], costs, counts),
          K.pooled_kernel_np(eta[0], theta[0], rho[0], v1[0], costs, counts))
    _same(K.hier_traj_kernel_nb(eta, theta, rho, v1, costs, choices),
          K.hier_traj_kernel_np(eta, theta, rho, v1, costs, choices))
    _same(K.hier_counts_kernel_nb(eta, theta, rho, v1, costs, counts),
          K.hier_counts_kernel_np(eta, theta, rho, v1, costs, counts))


@pytest.mark.parametrize("flag,expect", [("1", "pooled_kernel_np"), ("0", "pooled_kernel_nb")])
def test_env_flag_selects_implementation(flag, expect):
    code = "from d2dbayes.model import _kernels as K; print(K.pooled_kernel.__name__)"
    env = {**os.environ, "D2DBAYES_DISABLE_NUMBA": flag}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect


def test_numpy_path_end_to_end():
    code = (
        "import numpy as np\n"
        "from d2dbayes.model import loglik_pooled\n"
        "from d2dbayes.dynamics import ChoiceTrajectory\n"
        "from d2dbayes.network import CostSequence\n"
        "from d2dbayes.params import PooledParams\n"
        "c = CostSequence(np.arange(12.0).reshape(4, 3))\n"
        "x = ChoiceTrajectory(np.array([[0, 1, 2, 3], [3, 2, 1, 0]]), 3)\n"
        "print(repr(loglik_pooled(PooledParams(0.3, 0.7, 0.2), x, c)))\n"
    )
    vals = []
    for flag in ("0", "1"):
        env = {**os.environ, "D2DBAYES_DISABLE_NUMBA": flag}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        vals.append(float(out.stdout))
    assert vals[0] == pytest.approx(vals[1], abs=1e-12)
