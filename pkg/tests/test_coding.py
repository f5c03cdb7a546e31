import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from distmdp import coding
from distmdp.coding import (
    CharacteristicGraph,
    EncoderVec,
    ProductDistribution,
    argmax_mdp,
    build_characteristic_graph,
    canonical_codewords,
    decodable,
    entropy_bits,
    huffman_code,
    huffman_expected_length,
    huffman_lengths,
    min_entropy_coloring,
    mis_partition,
    noninteractive_min_rate,
    noninteractive_rate,
    set_partitions,
    uncoded_rate,
    verify_complement_transitivity,
)
from distmdp.errors import InfeasiblePairError, ModelValidationError, StructuralError
from distmdp.mdp import CandidateSet, candidate_control_set, value_iteration

BELL = [1, 1, 2, 5, 15, 52, 203]

prob_vectors = st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6).map(lambda v: np.array(v) / sum(v))


def best_prefix_length(p):
    """Optimal expected length by enumerating every length vector that meets Kraft."""
    n = len(p)
    if n == 1:
        return 0.0
    best = math.inf
    for ls in itertools.product(range(1, n), repeat=n):
        if sum(2.0**-l for l in ls) <= 1 + 1e-12:
            best = min(best, float(np.dot(p, ls)))
    return best


def brute_min_coloring_entropy(g, w):
    verts = list(g.vertex_index)
    best = math.inf
    for blocks in set_partitions(verts):
        if any(g.adjacency[a, b] for blk in blocks for a, b in itertools.combinations(blk, 2)):
            continue
        best = min(best, entropy_bits([sum(w[v] for v in blk) for blk in blocks]))
    return best


def test_entropy_basics():
    assert entropy_bits([0.5, 0.5]) == pytest.approx(1.0)
    assert entropy_bits([1.0, 0.0]) == 0.0
    assert entropy_bits([0.25] * 4) == pytest.approx(2.0)


def test_set_partitions_count_bell_numbers():
    for n, b in enumerate(BELL):
        assert sum(1 for _ in set_partitions(range(n))) == b


@given(prob_vectors)
def test_huffman_is_optimal_against_kraft_enumeration(p):
    assert huffman_expected_length(p) == pytest.approx(best_prefix_length(p), abs=1e-12)


@given(prob_vectors)
def test_huffman_code_properties(p):
    code = huffman_code(p)
    assert code.is_prefix_free()
    assert code.kraft_sum <= 1 + 1e-12
    if len(p) > 1:
        assert code.kraft_sum == pytest.approx(1.0)
    H = entropy_bits(p)
    assert H - 1e-12 <= code.expected_length < H + 1
    assert np.array_equal(code.lengths, huffman_lengths(p))


def test_single_symbol_gets_empty_codeword():
    code = huffman_code([1.0], ["only"])
    assert code.codeword("only") == ""
    assert code.expected_length == 0.0


def test_canonical_codewords_are_sorted_and_prefix_free():
    words = canonical_codewords([2, 1, 3, 3])
    assert words == ("10", "0", "110", "111")


def test_huffman_dyadic_exact():
    assert huffman_expected_length([0.5, 0.25, 0.125, 0.125]) == pytest.approx(1.75)


def _random_phi_dist(rng, dims, A):
    phi = rng.integers(0, A, size=int(np.prod(dims)))
    margs = []
    for d in dims:
        m = rng.random(d)
        m[rng.random(d) < 0.2] = 0.0
        if m.sum() == 0:
            m[0] = 1.0
        margs.append(m / m.sum())
    return phi, ProductDistribution(tuple(margs))


@given(st.integers(0, 10_000), st.sampled_from([(2, 3), (3, 3), (4, 2), (2, 2, 2)]), st.integers(2, 3))
def test_characteristic_graph_complement_is_transitive(seed, dims, A):
    rng = np.random.default_rng(seed)
    phi, dist = _random_phi_dist(rng, dims, A)
    for node in range(len(dims)):
        g = build_characteristic_graph(dist, phi, node)
        assert verify_complement_transitivity(g)
        blocks = mis_partition(g)
        # blocks are exactly the classes of equal restricted rows
        sig = coding._signatures(dist, phi, node)
        for blk in blocks:
            rows = {tuple(sig[x]) for x in blk}
            assert len(rows) == 1
        assert sorted(x for b in blocks for x in b) == sorted(g.vertices)


@given(st.integers(0, 10_000), st.sampled_from([(3, 2), (4, 3), (2, 2, 2)]))
def test_mis_colouring_matches_brute_force(seed, dims):
    rng = np.random.default_rng(seed)
    phi, dist = _random_phi_dist(rng, dims, 3)
    for node in range(len(dims)):
        g = build_characteristic_graph(dist, phi, node)
        w = dist.marginals[node]
        col, h = min_entropy_coloring(g, w)
        assert col.is_proper(g)
        assert h == pytest.approx(brute_min_coloring_entropy(g, w), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(3, 6))
def test_general_graph_fallback_is_exact(seed, n):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i, j in itertools.combinations(range(n), 2) if rng.random() < 0.4]
    g = CharacteristicGraph.from_edges(range(n), edges)
    w = rng.random(n)
    w /= w.sum()
    col, h = min_entropy_coloring(g, w)
    assert col.is_proper(g)
    assert h == pytest.approx(brute_min_coloring_entropy(g, w), abs=1e-12)


def test_mis_partition_rejects_nontransitive_graph():
    # a and b both fit with c but not with each other
    g = CharacteristicGraph.from_edges("abc", [("a", "b")])
    assert not verify_complement_transitivity(g)
    with pytest.raises(StructuralError):
        mis_partition(g)


def test_graph_validation():
    with pytest.raises(ModelValidationError):
        CharacteristicGraph.from_edges("ab", [("a", "a")])


def test_zero_weight_symbols_have_no_edges():
    dist = ProductDistribution((np.array([0.5, 0.5, 0.0]), np.array([1.0, 0.0])))
    phi = np.array([0, 1, 1, 0, 0, 1])  # differs only in off-support contexts for some rows
    g = build_characteristic_graph(dist, phi, 0)
    assert g.vertices == (0, 1)
    assert not g.adjacency[2].any()
    g2 = build_characteristic_graph(dist, phi, 1)
    assert g2.vertices == (0,)


def test_constant_and_identity_encoders():
    m = argmax_mdp([(0, 1), (0, 1, 2)])
    c = EncoderVec.constant(m)
    assert c.rate() == 0.0
    assert np.all(c.state_bits(m) == 0)
    ident = EncoderVec.identity(m)
    assert ident.entropy_rate() == pytest.approx(1 + math.log2(3))
    assert decodable(m, np.arange(6) % 2, ident)[0]
    assert not decodable(m, np.arange(6) % 2, c)[0]
    with pytest.raises(InfeasiblePairError):
        coding.require_decodable(m, np.arange(6) % 2, c)


def test_phi_depending_on_node1_only_gives_silent_other_nodes():
    m = argmax_mdp([(0, 1, 2), (0, 1)])
    phi = np.repeat([0, 1, 1], 2)
    r = noninteractive_rate(m, phi)
    assert r.enc.n_colors == (2, 1)
    assert r.enc.color_lengths()[1].tolist() == [0.0]
    assert decodable(m, r.phi, r.enc)[0]


def test_uncoded_minus_min_rate_small_argmax():
    m = argmax_mdp([(0, 1), (0, 1)])
    w = np.full(4, 0.25)
    r = noninteractive_min_rate(m)
    assert uncoded_rate(m, w) == pytest.approx(2.0)
    assert r.entropy_rate == pytest.approx(1.0)


def test_min_rate_constant_candidates_is_zero():
    m = argmax_mdp([(0, 1, 2), (0, 1, 2)])
    cands = CandidateSet(np.ones((9, 2), dtype=bool))
    r = noninteractive_min_rate(m, cands)
    assert r.entropy_rate == 0.0 and r.huffman_rate == 0.0


def brute_pair_rate(margs, cands, objective="entropy"):
    """Minimum over every pair of local partitions whose rectangles share a candidate action."""
    d1, d2 = (len(m) for m in margs)
    bits = cands.bits.reshape(d1, d2)
    sup = [np.flatnonzero(m > 0) for m in margs]
    best = math.inf
    for b1 in set_partitions(sup[0]):
        for b2 in set_partitions(sup[1]):
            ok = all(
                np.bitwise_and.reduce(bits[np.ix_(x, y)].ravel(), initial=(1 << cands.n_actions) - 1) != 0
                for x in b1 for y in b2
            )
            if not ok:
                continue
            q = [[margs[0][x].sum() for x in b1], [margs[1][y].sum() for y in b2]]
            if objective == "entropy":
                r = entropy_bits(q[0]) + entropy_bits(q[1])
            else:
                r = huffman_expected_length(q[0]) + huffman_expected_length(q[1])
            best = min(best, r)
    return best


@given(st.integers(0, 100_000), st.integers(2, 3), st.integers(2, 3), st.integers(2, 3), st.sampled_from(["entropy", "huffman"]))
def test_min_rate_matches_pairwise_brute_force(seed, d1, d2, A, objective):
    rng = np.random.default_rng(seed)
    probs = [rng.dirichlet(np.ones(d)) for d in (d1, d2)]
    m = argmax_mdp([tuple(range(d1)), tuple(range(d2))], probs=probs)
    m = coding.FactoredMdp(m.locals, tuple(range(A)), np.repeat(m.kernel[:1], A, axis=0),
                           np.zeros((A, m.n_states, m.n_states)), 0.0, m.initial, True)
    mask = rng.random((m.n_states, A)) < 0.5
    mask[np.arange(m.n_states), rng.integers(0, A, m.n_states)] = True
    cands = CandidateSet(mask)
    r = noninteractive_min_rate(m, cands, objective=objective)
    got = r.entropy_rate if objective == "entropy" else r.huffman_rate
    assert got == pytest.approx(brute_pair_rate(probs, cands, objective), abs=1e-12)
    assert cands.contains(r.phi)
    assert decodable(m, r.phi, r.enc)[0]


def test_example4_tie_break_map_reproduces_paper_encoders(ex4, ex4_solved):
    _, cs = ex4_solved
    r = noninteractive_rate(ex4, cs.highest(), "stationary")
    assert r.huffman_rate == pytest.approx(3.5175, abs=1e-4)
    parts = r.enc.partitions(ex4)
    norm = [sorted(sorted(b) for b in p) for p in parts]
    assert norm[0] == [[0], [1, 2, 3]]
    assert norm[1] == [[0, 1], [2, 3]]
    assert norm[2] == sorted([
        [(0, 0), (0, 1), (0, 2), (0, 3)],
        [(1, 0), (1, 1), (2, 0), (2, 1), (3, 0)],
        [(1, 2)],
    ])
    ok, table = decodable(ex4, r.phi, r.enc)
    assert ok and len(table) == 12


def test_example4_minimum_over_ties_is_below_tie_break_rate(ex4, ex4_solved):
    _, cs = ex4_solved
    assert cs.size() == 2**43
    r = noninteractive_min_rate(ex4, cs, "stationary")
    assert r.exact
    assert r.entropy_rate == pytest.approx(3.203680, abs=1e-5)
    assert r.huffman_rate == pytest.approx(3.426621, abs=1e-5)
    assert cs.contains(r.phi) and decodable(ex4, r.phi, r.enc)[0]
    tie = noninteractive_rate(ex4, cs.highest(), "stationary")
    assert r.entropy_rate <= tie.entropy_rate + 1e-12


def test_enumeration_cap_and_greedy_fallback(rng):
    m = argmax_mdp([(0, 1), (0, 1)])
    vi = value_iteration(m)
    cs = candidate_control_set(m, vi)
    r = noninteractive_min_rate(m, cs, approximate=True, cap=0)
    assert r.entropy_rate == pytest.approx(1.0)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("k", [2, 3, 4])
def test_argmax_savings_at_most_two_bits(n, k):
    # users share one channel-quality alphabet
    m = argmax_mdp([tuple(range(1, k + 1))] * n)
    r = noninteractive_min_rate(m)
    saved = uncoded_rate(m, m.initial) - r.entropy_rate
    assert -1e-12 <= saved <= 2 + 1e-12
