import math

import numpy as np
import pytest

from distmdp import sim
from distmdp.coding import EncoderVec, noninteractive_rate
from distmdp.errors import InfeasiblePairError, ModelValidationError
from distmdp.mdp import FactoredMdp, LocalStateSpace, constant_map, random_mdp, stationary_weights


def one_state(reward=1.0, beta=0.9):
    return FactoredMdp([LocalStateSpace(1, (0,))], (0,), np.ones((1, 1, 1)), np.full((1, 1, 1), reward), beta, np.ones(1))


def horizon_value(mdp, phi, T):
    P = mdp.transition_matrix(phi)
    r = mdp.expected_reward[phi, np.arange(mdp.n_states)]
    total, row = 0.0, mdp.initial.copy()
    for t in range(T):
        total += mdp.discount**t * float(row @ r)
        row = row @ P
    return total


def test_deterministic_single_state():
    m = one_state(1.0, 0.9)
    enc = EncoderVec.constant(m)
    st = sim.estimate(m, np.zeros(1, dtype=int), enc, episodes=5, horizon=50)
    assert st["discounted_reward"].mean == pytest.approx((1 - 0.9**50) / 0.1)
    assert st["discounted_reward"].half_width == 0.0
    assert st.tail_bound == pytest.approx(0.9**50 / 0.1)
    assert math.isnan(st["throughput"].mean)
    assert st["bits"].mean == 0.0


def test_zero_reward_model():
    rng = np.random.default_rng(0)
    m = random_mdp(rng, (2, 2), 2, reward_scale=0.0)
    enc = EncoderVec.identity(m)
    st = sim.estimate(m, np.zeros(4, dtype=int), enc, episodes=10, horizon=100)
    assert st["discounted_reward"].mean == 0.0
    assert st["bits"].mean == pytest.approx(2.0)


def test_same_seed_is_reproducible_and_batching_free():
    rng = np.random.default_rng(1)
    m = random_mdp(rng, (2, 3), 2)
    phi = rng.integers(0, 2, 6)
    enc = EncoderVec.identity(m)
    a = sim.estimate(m, phi, enc, episodes=30, horizon=200, seed=7)
    b = sim.estimate(m, phi, enc, episodes=30, horizon=200, seed=7, chunk=4)
    c = sim.estimate(m, phi, enc, episodes=30, horizon=200, seed=8)
    assert sim.stats_csv([a]) == sim.stats_csv([b])
    assert a.row() != c.row()
    t1 = sim.rollout(m, phi, enc, horizon=300, seed=3)
    t2 = sim.rollout(m, phi, enc, horizon=300, seed=3)
    assert np.array_equal(t1.states, t2.states)


def test_monte_carlo_agrees_with_exact_value():
    rng = np.random.default_rng(2)
    hits = 0
    n = 30
    for _ in range(n):
        m = random_mdp(rng, (2, 2), 2, discount=0.8)
        phi = rng.integers(0, 2, 4)
        st = sim.estimate(m, phi, EncoderVec.identity(m), episodes=200, horizon=60, seed=int(rng.integers(1 << 30)))
        est = st["discounted_reward"]
        hits += abs(est.mean - horizon_value(m, phi, 60)) <= 3 * est.se
    assert hits >= 0.9 * n


def test_state_frequencies_match_stationary_law():
    rng = np.random.default_rng(3)
    m = random_mdp(rng, (3, 2), 2)
    phi = rng.integers(0, 2, 6)
    tr = sim.rollout(m, phi, EncoderVec.identity(m), horizon=200_000, seed=11)
    freq = sim.state_frequencies(tr.states, 6)
    vals, vecs = np.linalg.eig(m.transition_matrix(phi).T)
    pi = np.real(vecs[:, np.argmin(np.abs(vals - 1))])
    pi /= pi.sum()
    assert np.allclose(pi, stationary_weights(m, phi))
    assert 0.5 * np.abs(freq - pi).sum() < 0.01


def test_blind_map_starves_the_example7_tail(ex7):
    phi = constant_map(ex7, 0)
    st = sim.estimate(ex7, phi, EncoderVec.constant(ex7), episodes=1, horizon=20_000, seed=0)
    assert st["long_run_throughput"].mean == pytest.approx(0.0, abs=1e-3)
    assert st["bits"].mean == 0.0


def test_single_episode_uses_batch_means(ex4, ex4_solved):
    _, cs = ex4_solved
    r = noninteractive_rate(ex4, cs.highest())
    st = sim.estimate(ex4, r.phi, r.enc, episodes=1, horizon=20_000, seed=0)
    assert math.isnan(st["discounted_reward"].half_width)
    assert 0 < st["long_run_throughput"].half_width < 0.1
    assert st["long_run_throughput"].contains(st["long_run_throughput"].mean)


def test_rejects_bad_inputs():
    m = random_mdp(np.random.default_rng(4), (2, 2), 2)
    with pytest.raises(ModelValidationError):
        sim.estimate(m, np.zeros(4, dtype=int), EncoderVec.constant(m), horizon=0)
    with pytest.raises(ModelValidationError):
        sim.estimate(m, np.zeros(4, dtype=int), EncoderVec.constant(m), episodes=0)
    with pytest.raises(InfeasiblePairError):
        sim.rollout(m, np.array([0, 1, 0, 1]), EncoderVec.constant(m))


def test_stats_csv_layout():
    m = one_state()
    st = sim.estimate(m, np.zeros(1, dtype=int), EncoderVec.constant(m), episodes=3, horizon=10)
    lines = sim.stats_csv([st]).splitlines()
    assert lines[0] == "# distmdp-rollout v1"
    assert lines[1].split(",") == sim.STATS_COLUMNS
    assert len(lines) == 3 and len(lines[2].split(",")) == len(sim.STATS_COLUMNS)
