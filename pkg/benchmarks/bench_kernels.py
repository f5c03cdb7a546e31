"""Compiled vs pure-numpy kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--states 12] [--episodes 64] [--slots 20000]

Each kernel is run once to warm up, then timed; outputs of the two backends
are compared before any timing is reported.
"""
import argparse
import time

import numpy as np

from distmdp import wireless
from distmdp.kernels import _numpy
from distmdp.mdp import random_mdp

try:
    from distmdp.kernels import _numba
except ImportError:  # numba missing
    _numba = None


def timed(fn, *args, repeat=3):
    fn(*args)  # warm-up / JIT
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t)
    return best, out


def search_inputs(mdp, lambdas):
    S, A = mdp.n_states, mdp.n_actions
    return (
        np.ascontiguousarray(mdp.kernel), np.ascontiguousarray(mdp.expected_reward), np.ascontiguousarray(mdp.initial),
        float(mdp.discount), np.ascontiguousarray(mdp.indexer.digits, dtype=np.int64), np.array(mdp.dims, dtype=np.int64),
        np.tile(np.arange(A, dtype=np.int64), (S, 1)), np.full(S, A, dtype=np.int64), np.asarray(lambdas, float), 256,
    )


def bench_search(n_states):
    rng = np.random.default_rng(3)
    dims = (2, n_states // 2) if n_states % 2 == 0 else (n_states,)
    mdp = random_mdp(rng, dims, 2, discount=0.9)
    args = search_inputs(mdp, np.linspace(0, 0.5, 6))
    rows = []
    t_np, out_np = timed(_numpy.exhaustive_search, *args, repeat=1)
    rows.append(("exhaustive_search", "numpy", t_np, 2**mdp.n_states))
    if _numba is not None:
        t_nb, out_nb = timed(_numba.exhaustive_search, *args, repeat=1)
        assert np.array_equal(out_np[0], out_nb[0]), "backends disagree on the best maps"
        assert np.allclose(out_np[1], out_nb[1], atol=1e-8)
        rows.append(("exhaustive_search", "numba", t_nb, 2**mdp.n_states))
    return rows


def bench_fibers():
    mdp = wireless.build_mdp(wireless.example4_config())
    S = mdp.n_states
    phi = np.zeros(S, dtype=np.int64)
    P = mdp.kernel[phi, np.arange(S)]
    Minv = np.linalg.inv(np.eye(S) - mdp.discount * P)
    cexp = np.ascontiguousarray(mdp.expected_reward)
    w = mdp.initial @ Minv
    V = Minv @ cexp[phi, np.arange(S)]
    ptr = np.arange(0, S + 1, 4, dtype=np.int64)
    states = np.arange(S, dtype=np.int64)
    args = (np.ascontiguousarray(mdp.kernel), cexp, phi, Minv, w, V, ptr, states, mdp.discount)
    rows = []
    t_np, g_np = timed(_numpy.fiber_gains, *args)
    rows.append(("fiber_gains", "numpy", t_np, ptr.size - 1))
    if _numba is not None:
        t_nb, g_nb = timed(_numba.fiber_gains, *args)
        assert np.allclose(g_np, g_nb, atol=1e-9)
        rows.append(("fiber_gains", "numba", t_nb, ptr.size - 1))
    return rows


def bench_paths(episodes, slots):
    mdp = wireless.build_mdp(wireless.example4_config())
    cum = np.ascontiguousarray(np.cumsum(mdp.kernel[0], axis=1))
    rng = np.random.default_rng(11)
    u = rng.random((episodes, slots))
    start = np.zeros(episodes, dtype=np.int64)
    rows = []
    t_np, p_np = timed(_numpy.simulate_paths, cum, start, u)
    rows.append(("simulate_paths", "numpy", t_np, episodes * slots))
    if _numba is not None:
        t_nb, p_nb = timed(_numba.simulate_paths, cum, start, u)
        assert np.array_equal(p_np, p_nb), "paths differ between backends"
        rows.append(("simulate_paths", "numba", t_nb, episodes * slots))
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--states", type=int, default=12, help="states of the random model for exhaustive search")
    ap.add_argument("--episodes", type=int, default=64)
    ap.add_argument("--slots", type=int, default=20000)
    a = ap.parse_args()
    rows = bench_search(a.states) + bench_fibers() + bench_paths(a.episodes, a.slots)
    print(f"{'kernel':<18} {'backend':<7} {'seconds':>10} {'work':>10} {'per unit (us)':>14}")
    for name, backend, t, work in rows:
        print(f"{name:<18} {backend:<7} {t:>10.4f} {work:>10} {1e6 * t / work:>14.3f}")
    if _numba is None:
        print("numba not installed: compiled timings skipped")


if __name__ == "__main__":
    main()
