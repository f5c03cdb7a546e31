import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distmdp.errors import ModelValidationError
from distmdp.mdp import (
    CandidateSet,
    FactoredMdp,
    LocalStateSpace,
    StateIndexer,
    candidate_control_set,
    check_control_map,
    closed_classes,
    constant_map,
    discounted_occupancy,
    expected_discounted_reward,
    extract_policy,
    long_run_distribution,
    policy_iteration,
    policy_value,
    q_values,
    random_mdp,
    stationary_weights,
    value_iteration,
)


def one_state(r=2.0, beta=0.9):
    return FactoredMdp([LocalStateSpace(1, ("x",))], ("go",), np.ones((1, 1, 1)), np.full((1, 1, 1), r), beta, np.ones(1))


def series_value(mdp, phi, terms=10_000):
    # truncated sum_t beta^t P^t r, computed by repeated multiplication
    P = mdp.transition_matrix(phi)
    r = mdp.reward_vector(phi)
    out = np.zeros_like(r)
    term = r.copy()
    for _ in range(terms):
        out += term
        term = mdp.discount * (P @ term)
        if np.max(np.abs(term)) < 1e-16:
            break
    return out


def series_occupancy(mdp, phi, terms=10_000):
    P = mdp.transition_matrix(phi)
    row = mdp.initial.copy()
    out = np.zeros_like(row)
    for _ in range(terms):
        out += row
        row = mdp.discount * (row @ P)
        if row.sum() < 1e-16:
            break
    return out


small_models = st.builds(
    lambda seed, dims, A, beta: random_mdp(np.random.default_rng(seed), dims, A, beta),
    st.integers(0, 2**32 - 1),
    st.sampled_from([(2,), (3,), (2, 2), (2, 3), (3, 2)]),
    st.integers(1, 3),
    st.floats(0.0, 0.95),
)


def test_indexer_is_lexicographic_node1_most_significant():
    idx = StateIndexer([LocalStateSpace(1, "ab"), LocalStateSpace(2, (0, 1, 2))])
    assert [idx.state(i) for i in range(6)] == [("a", 0), ("a", 1), ("a", 2), ("b", 0), ("b", 1), ("b", 2)]
    assert idx.index(("b", 1)) == 4
    assert idx.digits.tolist()[4] == [1, 1]


def test_one_state_value_is_r_over_one_minus_beta():
    m = one_state(2.0, 0.9)
    assert value_iteration(m)[0] == pytest.approx(20.0, abs=1e-9)
    phi, V = policy_iteration(m)
    assert V[0] == pytest.approx(20.0, abs=1e-12)


def test_rejects_non_stochastic_rows():
    with pytest.raises(ModelValidationError):
        FactoredMdp([LocalStateSpace(1, "ab")], (0,), np.array([[[0.5, 0.4], [0.5, 0.5]]]), np.zeros((1, 2, 2)), 0.5, np.array([1.0, 0.0]))


def test_rejects_discount_one():
    with pytest.raises(ModelValidationError):
        one_state(1.0, 1.0)


def test_check_control_map_rejects_bad_actions():
    m = one_state()
    with pytest.raises(ModelValidationError):
        check_control_map(m, [1])


def test_independence_flag_checked(rng):
    m = random_mdp(rng, (2, 2), 2)
    assert not m.check_factorization()
    with pytest.raises(ModelValidationError):
        FactoredMdp(m.locals, m.actions, m.kernel, m.reward, m.discount, m.initial, independence_flag=True)


@given(small_models)
def test_value_and_policy_iteration_agree(mdp):
    V = value_iteration(mdp, tol=1e-11)
    phi, Vpi = policy_iteration(mdp)
    assert np.max(np.abs(V - Vpi)) < 1e-8
    assert np.max(np.abs(policy_value(mdp, phi) - Vpi)) < 1e-9
    # optimal value dominates every constant map
    for a in range(mdp.n_actions):
        assert np.all(policy_value(mdp, constant_map(mdp, a)) <= Vpi + 1e-9)


@given(small_models)
def test_policy_value_matches_series(mdp):
    phi = extract_policy(mdp, value_iteration(mdp))
    assert np.max(np.abs(policy_value(mdp, phi) - series_value(mdp, phi))) <= 1e-6


@given(small_models)
def test_occupancy_matches_series_and_mass(mdp):
    phi = constant_map(mdp, mdp.n_actions - 1)
    w = discounted_occupancy(mdp, phi).weights
    assert np.max(np.abs(w - series_occupancy(mdp, phi))) <= 1e-6
    assert w.sum() == pytest.approx(1.0 / (1.0 - mdp.discount), rel=1e-9)
    assert expected_discounted_reward(mdp, phi) == pytest.approx(float(mdp.initial @ policy_value(mdp, phi)), abs=1e-9)


def test_per_state_cost_in_expected_reward():
    m = one_state(0.0, 0.5)
    assert expected_discounted_reward(m, [0], per_state_cost=np.array([2.0])) == pytest.approx(-4.0)


@given(small_models)
def test_candidate_set_contains_greedy_policy_and_all_members_are_optimal(mdp):
    V = value_iteration(mdp, tol=1e-12)
    cs = candidate_control_set(mdp, V)
    assert cs.contains(extract_policy(mdp, V))
    for phi in (cs.lowest(), cs.highest()):
        assert np.max(np.abs(policy_value(mdp, phi) - V)) < 1e-7


def test_candidate_set_counts_ties():
    # two identical actions: every map is optimal
    m = FactoredMdp([LocalStateSpace(1, "abc")], (0, 1), np.full((2, 3, 3), 1 / 3), np.ones((2, 3, 3)), 0.5, np.array([1.0, 0, 0]))
    cs = candidate_control_set(m, value_iteration(m))
    assert cs.size() == 8
    assert len(list(cs.selections())) == 8
    with pytest.raises(ValueError):
        list(cs.selections(cap=4))
    assert cs.intersection([0, 1, 2]) == 0b11


def test_q_values_shape(rng):
    m = random_mdp(rng, (2, 3), 3)
    assert q_values(m, np.zeros(6)).shape == (3, 6)


def test_closed_classes_and_long_run_distribution():
    P = np.array([
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],  # {1, 2} periodic closed class
        [0.0, 0.0, 0.0, 1.0],  # absorbing
    ])
    classes, _ = closed_classes(P)
    assert sorted(sorted(int(x) for x in c) for c in classes) == [[1, 2], [3]]
    mu = long_run_distribution(P, np.array([1.0, 0, 0, 0]))
    assert np.allclose(mu, [0, 0.5, 0.5, 0])
    mu = long_run_distribution(P, np.array([0.0, 0, 0, 1.0]))
    assert np.allclose(mu, [0, 0, 0, 1])


@given(small_models)
def test_stationary_weights_are_invariant(mdp):
    phi = constant_map(mdp, 0)
    mu = stationary_weights(mdp, phi)
    P = mdp.transition_matrix(phi)
    assert mu.sum() == pytest.approx(1.0)
    assert np.allclose(mu @ P, mu, atol=1e-9)


def test_candidate_set_shape_validation():
    with pytest.raises(ValueError):
        CandidateSet(np.ones(3, dtype=bool))


def test_value_iteration_trace_is_contracting(rng):
    m = random_mdp(rng, (3, 2), 2, 0.8)
    trace = []
    value_iteration(m, trace=trace)
    assert len(trace) > 2
    it = np.asarray(trace, dtype=float)
    steps = np.max(np.abs(np.diff(it, axis=0)), axis=1)
    # sup-norm steps shrink at least geometrically with ratio beta
    assert np.all(steps[1:] <= steps[:-1] * 0.8 + 1e-12)
    assert math.isfinite(steps[-1])
