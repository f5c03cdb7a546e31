import os
import subprocess
import sys

import numpy as np
import pytest

from distmdp import kernels
from distmdp.joint import AugmentedModel, _Evaluator, message_fibers
from distmdp.coding import EncoderVec
from distmdp.kernels import _numpy
from distmdp.mdp import random_mdp

numba_kernels = pytest.importorskip("distmdp.kernels._numba")


def search_args(m, lambdas):
    A, S = m.n_actions, m.n_states
    return (
        np.ascontiguousarray(m.kernel), np.ascontiguousarray(m.expected_reward), m.initial, float(m.discount),
        np.ascontiguousarray(m.indexer.digits, dtype=np.int64), np.array(m.dims, dtype=np.int64),
        np.tile(np.arange(A, dtype=np.int64), (S, 1)), np.full(S, A, dtype=np.int64), np.asarray(lambdas, float), 256,
    )


@pytest.mark.parametrize("seed", range(4))
def test_exhaustive_search_backends_agree(seed):
    m = random_mdp(np.random.default_rng(seed), (2, 3), 2)
    args = search_args(m, [0.0, 0.1, 1.0, 10.0])
    a = numba_kernels.exhaustive_search(*args)
    b = _numpy.exhaustive_search(*args)
    assert np.array_equal(a[0], b[0])
    assert np.allclose(a[1], b[1], rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_fiber_gains_backends_agree(seed):
    rng = np.random.default_rng(seed)
    m = random_mdp(rng, (3, 3), 3)
    enc = EncoderVec.from_colors([np.array([0, 0, 1]), np.array([0, 1, 1])], [np.full(3, 1 / 3)] * 2)
    fib = message_fibers(m, enc)
    phi = np.zeros(m.n_states, dtype=np.int64)
    ev = _Evaluator(AugmentedModel(m, 0.5), enc, phi)
    args = (ev.kernel, ev.cexp, ev.phi, ev.Minv, ev.w, ev.V, fib[1], fib[2], m.discount)
    assert np.allclose(numba_kernels.fiber_gains(*args), _numpy.fiber_gains(*args), atol=1e-10)


def test_path_backends_agree():
    rng = np.random.default_rng(9)
    m = random_mdp(rng, (2, 3), 2)
    cum = np.ascontiguousarray(np.cumsum(m.transition_matrix(np.zeros(6, dtype=int)), axis=1))
    starts = rng.integers(0, 6, 16).astype(np.int64)
    u = rng.random((16, 500))
    assert np.array_equal(numba_kernels.simulate_paths(cum, starts, u), _numpy.simulate_paths(cum, starts, u))


def test_environment_switch_selects_numpy():
    env = dict(os.environ, DISTMDP_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from distmdp import kernels; print(kernels.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["DISTMDP_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", "from distmdp import kernels; print(kernels.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"
    assert kernels.backend_name() in ("numba", "numpy")
