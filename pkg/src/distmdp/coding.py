"""Zero-error message design for one-shot simulation of a centralized controller.

Each node sees its own local state and sends a message; the controller's
action must be a function of the message tuple.  Under a product-form state
distribution the characteristic graph of every node has a transitive
complement, so its maximal independent sets partition the support and
colouring by block is the coarsest valid encoder.

Symbols with zero marginal weight are not graph vertices.  Encoders fold them
into the first colour class; the control map is then projected onto the
message tuple on those states (they carry no weight, so rates are unchanged).
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache

import networkx as nx
import numpy as np

from .errors import BudgetExceededError, InfeasiblePairError, ModelValidationError, StructuralError
from .mdp import (
    CandidateSet,
    FactoredMdp,
    LocalStateSpace,
    candidate_control_set,
    check_control_map,
    state_weighting,
    value_iteration,
)

WEIGHT_TOL = 1e-12
LENGTH_MODELS = ("huffman", "entropy")


def entropy_bits(p) -> float:
    p = np.asarray(p, dtype=float)
    p = p[p > 0]
    if p.size == 0:
        return 0.0
    p = p / p.sum()
    return float(-(p * np.log2(p)).sum())


def set_partitions(items):
    """All set partitions of ``items`` as lists of blocks (restricted growth order)."""
    items = list(items)
    n = len(items)
    if n == 0:
        yield []
        return
    labels = [0] * n

    def rec(k, top):
        if k == n:
            blocks = [[] for _ in range(top + 1)]
            for it, lab in zip(items, labels):
                blocks[lab].append(it)
            yield blocks
            return
        for lab in range(top + 2):
            labels[k] = lab
            yield from rec(k + 1, max(top, lab))

    labels[0] = 0
    yield from rec(1, 0)


# --------------------------------------------------------------------------
# product-form distributions and characteristic graphs


@dataclass(frozen=True, eq=False)
class ProductDistribution:
    """Per-node marginals; the implied joint law is their product."""

    marginals: tuple

    def __post_init__(self):
        ms = []
        for k, m in enumerate(self.marginals):
            m = np.asarray(m, dtype=float)
            if m.ndim != 1 or m.size == 0 or np.any(m < 0):
                raise ModelValidationError(f"node {k + 1}: marginal must be a nonnegative vector")
            s = m.sum()
            if abs(s - 1.0) > 1e-9:
                raise ModelValidationError(f"node {k + 1}: marginal sums to {s}")
            m = np.where(m < WEIGHT_TOL, 0.0, m)
            m = m / m.sum()
            m.setflags(write=False)
            ms.append(m)
        object.__setattr__(self, "marginals", tuple(ms))

    @classmethod
    def from_weights(cls, mdp: FactoredMdp, weights):
        w = np.asarray(weights, dtype=float)
        return cls(tuple(m / m.sum() for m in mdp.local_marginals(w / w.sum())))

    @property
    def dims(self):
        return tuple(m.size for m in self.marginals)

    @property
    def supports(self):
        return [m > 0 for m in self.marginals]

    def support_mask(self) -> np.ndarray:
        """Flat mask of global states whose every component has positive weight."""
        mask = np.ones(self.dims, dtype=bool)
        for k, sup in enumerate(self.supports):
            shape = [1] * len(self.dims)
            shape[k] = -1
            mask = mask & sup.reshape(shape)
        return mask.ravel()

    def joint(self) -> np.ndarray:
        out = np.ones(1)
        for m in self.marginals:
            out = np.kron(out, m)
        return out


@dataclass(frozen=True, eq=False)
class CharacteristicGraph:
    """Confusability graph of one node; vertices are the positive-weight symbols."""

    node_id: int
    symbols: tuple
    support: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        sup = np.asarray(self.support, dtype=bool)
        d = len(self.symbols)
        if adj.shape != (d, d) or sup.shape != (d,):
            raise ModelValidationError("adjacency/support shape does not match the symbol list")
        if np.any(np.diag(adj)) or np.any(adj != adj.T):
            raise ModelValidationError("characteristic graph must be simple and undirected")
        if np.any(adj[~sup]) or np.any(adj[:, ~sup]):
            raise ModelValidationError("edges may only join support vertices")
        adj.setflags(write=False)
        sup.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "symbols", tuple(self.symbols))

    @classmethod
    def from_edges(cls, symbols, edges, node_id=0):
        symbols = tuple(symbols)
        pos = {s: k for k, s in enumerate(symbols)}
        adj = np.zeros((len(symbols), len(symbols)), dtype=bool)
        for x, y in edges:
            if x == y:
                raise ModelValidationError("self-loops are not allowed")
            adj[pos[x], pos[y]] = adj[pos[y], pos[x]] = True
        return cls(node_id, symbols, np.ones(len(symbols), dtype=bool), adj)

    @property
    def vertex_index(self):
        return np.flatnonzero(self.support)

    @property
    def vertices(self):
        return tuple(self.symbols[k] for k in self.vertex_index)

    @property
    def edges(self):
        iu, ju = np.nonzero(np.triu(self.adjacency))
        return frozenset(frozenset((self.symbols[i], self.symbols[j])) for i, j in zip(iu, ju))

    def has_edge(self, x, y) -> bool:
        return bool(self.adjacency[self.symbols.index(x), self.symbols.index(y)])

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.vertices)
        g.add_edges_from(tuple(e) for e in self.edges)
        return g


def _phi_table(dist: ProductDistribution, phi):
    return np.asarray(phi).reshape(dist.dims)


def _signatures(dist: ProductDistribution, phi, node):
    """Restriction of ``phi`` to the product support, one row per symbol of ``node``."""
    sub = _phi_table(dist, phi)
    for k, s in enumerate(dist.supports):
        if k != node:
            sub = np.take(sub, np.flatnonzero(s), axis=k)
    return np.moveaxis(sub, node, 0).reshape(sub.shape[node], -1)


def build_characteristic_graph(dist: ProductDistribution, phi, node: int, symbols=None) -> CharacteristicGraph:
    """Edge between ``x`` and ``y`` iff some positive-weight context separates them under ``phi``.

    ``node`` is zero-based.
    """
    sig = _signatures(dist, phi, node)
    sup = dist.supports[node]
    differs = np.any(sig[:, None, :] != sig[None, :, :], axis=2)
    differs &= sup[:, None] & sup[None, :]
    if symbols is None:
        symbols = tuple(range(dist.dims[node]))
    return CharacteristicGraph(node + 1, symbols, sup, differs)


def characteristic_graphs(mdp: FactoredMdp, dist: ProductDistribution, phi):
    return [build_characteristic_graph(dist, phi, n, mdp.locals[n].symbols) for n in range(len(mdp.dims))]


def verify_complement_transitivity(g: CharacteristicGraph) -> bool:
    v = g.vertex_index
    non = ~g.adjacency[np.ix_(v, v)]
    reach = (non.astype(np.int64) @ non.astype(np.int64)) > 0
    return bool(np.all(non | ~reach))


def mis_partition(g: CharacteristicGraph):
    """Maximal independent sets of a graph with transitive complement, as symbol blocks."""
    if not verify_complement_transitivity(g):
        raise StructuralError(f"node {g.node_id}: non-adjacency is not transitive, maximal independent sets overlap")
    blocks = []
    seen = set()
    for k in g.vertex_index:
        if k in seen:
            continue
        members = [j for j in g.vertex_index if j == k or not g.adjacency[k, j]]
        seen.update(members)
        blocks.append([g.symbols[j] for j in members])
    return blocks


@dataclass(frozen=True)
class Coloring:
    color_of: dict
    n_colors: int

    def __post_init__(self):
        used = set(self.color_of.values())
        if used != set(range(self.n_colors)):
            raise ModelValidationError("colours must be contiguous from 0")

    def is_proper(self, g: CharacteristicGraph) -> bool:
        return all(self.color_of[x] != self.color_of[y] for x, y in map(tuple, g.edges))

    def distribution(self, weights) -> np.ndarray:
        """Colour law when ``weights`` is indexed like the symbols the colouring covers."""
        out = np.zeros(self.n_colors)
        for k, (sym, c) in enumerate(self.color_of.items()):
            out[c] += weights[k]
        return out


def _vertex_weights(g: CharacteristicGraph, weights):
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(g.symbols),):
        raise ModelValidationError(f"expected {len(g.symbols)} weights, got shape {w.shape}")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ModelValidationError("vertex weights must sum to 1")
    return w


def coloring_from_blocks(symbols, blocks) -> Coloring:
    """Colour by block; symbols not covered by any block join colour 0."""
    color_of = {}
    for c, block in enumerate(blocks):
        for s in block:
            color_of[s] = c
    for s in symbols:
        color_of.setdefault(s, 0)
    ordered = {s: color_of[s] for s in symbols}
    return Coloring(ordered, max(1, len(blocks)))


def _greedy_min_entropy(g: CharacteristicGraph, w):
    """Best colouring among those built by repeatedly removing a maximal independent set."""
    verts = tuple(int(k) for k in g.vertex_index)
    comp = nx.complement(nx.Graph(g.adjacency[np.ix_(verts, verts)].astype(int)))
    weights = {i: w[verts[i]] for i in range(len(verts))}

    @lru_cache(maxsize=None)
    def best(remaining):
        if not remaining:
            return 0.0, ()
        sub = comp.subgraph(remaining)
        out = (math.inf, ())
        for mis in nx.find_cliques(sub):
            q = sum(weights[i] for i in mis)
            h = -q * math.log2(q) if q > 0 else 0.0
            rest_h, rest_blocks = best(remaining - frozenset(mis))
            cand = (h + rest_h, (tuple(sorted(mis)),) + rest_blocks)
            if cand[0] < out[0] - 1e-15:
                out = cand
        return out

    h, blocks = best(frozenset(range(len(verts))))
    return h, [[g.symbols[verts[i]] for i in b] for b in sorted(blocks)]


def min_entropy_coloring(g: CharacteristicGraph, weights):
    """Minimum-entropy colouring; exact on transitive-complement graphs.

    Other graphs fall back to the best colouring over all greedy
    maximal-independent-set removal orders.
    """
    w = _vertex_weights(g, weights)
    if verify_complement_transitivity(g):
        blocks = mis_partition(g)
    else:
        _, blocks = _greedy_min_entropy(g, w)
    col = coloring_from_blocks(g.symbols, blocks)
    return col, entropy_bits(col.distribution(w))


# --------------------------------------------------------------------------
# Huffman codes


@dataclass(frozen=True, eq=False)
class PrefixCode:
    symbols: tuple
    probs: np.ndarray
    codewords: tuple

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(c) for c in self.codewords], dtype=np.int64)

    @property
    def expected_length(self) -> float:
        return float(self.probs @ self.lengths)

    @property
    def kraft_sum(self) -> float:
        return float(np.sum(2.0 ** -self.lengths))

    def is_prefix_free(self) -> bool:
        words = sorted(self.codewords)
        return all(not b.startswith(a) for a, b in zip(words, words[1:])) and len(set(words)) == len(words)

    def codeword(self, symbol) -> str:
        return self.codewords[self.symbols.index(symbol)]


def huffman_lengths(probs) -> np.ndarray:
    """Optimal codeword lengths; ties merge the lowest weight, then the oldest node."""
    p = np.asarray(probs, dtype=float)
    n = p.size
    if n == 0:
        raise ModelValidationError("cannot build a code for an empty distribution")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    heap = [(float(p[k]), k, (k,)) for k in range(n)]
    heapq.heapify(heap)
    lengths = np.zeros(n, dtype=np.int64)
    order = n
    while len(heap) > 1:
        pa, _, la = heapq.heappop(heap)
        pb, _, lb = heapq.heappop(heap)
        for k in la + lb:
            lengths[k] += 1
        heapq.heappush(heap, (pa + pb, order, la + lb))
        order += 1
    return lengths


def canonical_codewords(lengths):
    order = sorted(range(len(lengths)), key=lambda k: (lengths[k], k))
    words = [""] * len(lengths)
    code = 0
    prev = 0
    for k in order:
        L = int(lengths[k])
        code <<= L - prev
        words[k] = format(code, f"0{L}b") if L else ""
        code += 1
        prev = L
    return tuple(words)


def huffman_code(dist, symbols=None) -> PrefixCode:
    if isinstance(dist, dict):
        symbols = tuple(dist)
        p = np.array([dist[s] for s in symbols], dtype=float)
    else:
        p = np.asarray(dist, dtype=float)
        symbols = tuple(range(p.size)) if symbols is None else tuple(symbols)
    if p.size == 0:
        raise ModelValidationError("cannot build a code for an empty distribution")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ModelValidationError("Huffman input must be a probability vector")
    p.setflags(write=False)
    return PrefixCode(symbols, p, canonical_codewords(huffman_lengths(p)))


def huffman_expected_length(probs) -> float:
    p = np.asarray(probs, dtype=float)
    return float(p @ huffman_lengths(p))


# --------------------------------------------------------------------------
# encoders


@dataclass(frozen=True, eq=False)
class EncoderVec:
    """Per-node colourings of local symbols plus the code used for each colour."""

    colors: tuple
    color_probs: tuple
    codes: tuple
    length_model: str = "huffman"

    def __post_init__(self):
        if self.length_model not in LENGTH_MODELS:
            raise ModelValidationError(f"unknown length model {self.length_model!r}")
        cols = []
        for c in self.colors:
            c = np.asarray(c, dtype=np.int64)
            c.setflags(write=False)
            cols.append(c)
        object.__setattr__(self, "colors", tuple(cols))

    @classmethod
    def from_colors(cls, colors, marginals, length_model="huffman"):
        colors = [np.asarray(c, dtype=np.int64) for c in colors]
        probs, codes = [], []
        for c, m in zip(colors, marginals):
            k = int(c.max()) + 1
            q = np.bincount(c, weights=np.asarray(m, dtype=float), minlength=k)
            q = q / q.sum() if q.sum() > 0 else np.full(k, 1.0 / k)
            probs.append(q)
            codes.append(huffman_code(q))
        return cls(tuple(colors), tuple(probs), tuple(codes), length_model)

    @classmethod
    def identity(cls, mdp: FactoredMdp, marginals=None, length_model="huffman"):
        if marginals is None:
            marginals = [np.full(d, 1.0 / d) for d in mdp.dims]
        return cls.from_colors([np.arange(d) for d in mdp.dims], marginals, length_model)

    @classmethod
    def constant(cls, mdp: FactoredMdp, length_model="huffman"):
        return cls.from_colors([np.zeros(d, dtype=np.int64) for d in mdp.dims], [np.full(d, 1.0 / d) for d in mdp.dims], length_model)

    @property
    def n_colors(self):
        return tuple(int(c.max()) + 1 for c in self.colors)

    def color_lengths(self):
        """Bits charged per colour for each node under the configured length model."""
        out = []
        for q, code in zip(self.color_probs, self.codes):
            huff = code.lengths.astype(float)
            if self.length_model == "huffman" or q.size == 1:
                out.append(huff if q.size > 1 else np.zeros(1))
            else:
                with np.errstate(divide="ignore"):
                    ideal = np.where(q > 0, -np.log2(np.where(q > 0, q, 1.0)), huff)
                out.append(ideal)
        return out

    def messages(self, mdp: FactoredMdp) -> np.ndarray:
        """(S, N) colour tuple sent in each global state."""
        d = mdp.indexer.digits
        return np.stack([c[d[:, n]] for n, c in enumerate(self.colors)], axis=1)

    def message_ids(self, mdp: FactoredMdp) -> np.ndarray:
        return np.ravel_multi_index(self.messages(mdp).T, self.n_colors).astype(np.int64)

    def state_bits(self, mdp: FactoredMdp) -> np.ndarray:
        d = mdp.indexer.digits
        lens = self.color_lengths()
        return sum(lens[n][c[d[:, n]]] for n, c in enumerate(self.colors))

    def entropy_rate(self) -> float:
        return sum(entropy_bits(q) for q in self.color_probs)

    def huffman_rate(self) -> float:
        return sum(code.expected_length for code in self.codes)

    def rate(self) -> float:
        return self.huffman_rate() if self.length_model == "huffman" else self.entropy_rate()

    def partitions(self, mdp: FactoredMdp):
        out = []
        for n, c in enumerate(self.colors):
            syms = mdp.locals[n].symbols
            out.append([[syms[k] for k in np.flatnonzero(c == col)] for col in range(int(c.max()) + 1)])
        return out

    def with_length_model(self, length_model):
        return EncoderVec(self.colors, self.color_probs, self.codes, length_model)

    def same_partition(self, other: "EncoderVec") -> bool:
        return len(self.colors) == len(other.colors) and all(
            np.array_equal(a, b) for a, b in zip(self.colors, other.colors)
        )

    def to_text(self, mdp: FactoredMdp) -> str:
        lines = ["# node\tsymbol\tcolor\tcodeword"]
        for n, c in enumerate(self.colors):
            for k, sym in enumerate(mdp.locals[n].symbols):
                col = int(c[k])
                lines.append(f"{mdp.locals[n].node_id}\t{sym!r}\t{col}\t{self.codes[n].codewords[col] or '-'}")
        return "\n".join(lines) + "\n"


def decodable(mdp: FactoredMdp, phi, enc: EncoderVec):
    """Whether ``phi`` is a function of the message tuple; also returns that function."""
    phi = check_control_map(mdp, phi)
    ids = enc.message_ids(mdp)
    table = {}
    for m, a in zip(ids.tolist(), phi.tolist()):
        if table.setdefault(m, a) != a:
            return False, None
    shape = enc.n_colors
    return True, {tuple(int(x) for x in np.unravel_index(m, shape)): mdp.actions[a] for m, a in table.items()}


def require_decodable(mdp, phi, enc):
    ok, table = decodable(mdp, phi, enc)
    if not ok:
        raise InfeasiblePairError("control map is not a function of the messages")
    return table


# --------------------------------------------------------------------------
# minimum rates


@dataclass(frozen=True, eq=False)
class RateResult:
    entropy_rate: float
    huffman_rate: float
    phi: np.ndarray
    enc: EncoderVec
    weighting: str
    weights: np.ndarray
    exact: bool = True
    projected_states: int = 0
    notes: tuple = field(default_factory=tuple)

    def rate(self, length_model="entropy"):
        return self.entropy_rate if length_model == "entropy" else self.huffman_rate


def _weights_for(mdp, phi, weighting):
    if isinstance(weighting, str):
        return weighting, state_weighting(mdp, phi, weighting)
    w = np.asarray(weighting, dtype=float)
    if w.shape != (mdp.n_states,) or np.any(w < 0) or w.sum() <= 0:
        raise ModelValidationError("weighting must be a nonnegative vector over global states")
    return "custom", w / w.sum()


def project_control(mdp, phi, enc: EncoderVec, support_mask):
    """Make ``phi`` constant on message fibers using its values on the support.

    Returns the projected map and the number of states whose action changed.
    """
    phi = np.array(phi, dtype=np.int64)
    ids = enc.message_ids(mdp)
    ref = {}
    for i in np.flatnonzero(support_mask):
        ref.setdefault(int(ids[i]), int(phi[i]))
    changed = 0
    for i in np.flatnonzero(~support_mask):
        a = ref.get(int(ids[i]))
        if a is None:
            ref[int(ids[i])] = int(phi[i])
        elif a != phi[i]:
            phi[i] = a
            changed += 1
    return phi, changed


def mis_encoder(mdp: FactoredMdp, phi, weights, length_model="huffman"):
    """Coarsest valid encoder for ``phi``: per-node MIS colourings under ``weights``."""
    dist = ProductDistribution.from_weights(mdp, weights)
    colors = []
    for n in range(len(mdp.dims)):
        g = build_characteristic_graph(dist, phi, n)
        blocks = mis_partition(g)
        colors.append(np.array([coloring_from_blocks(range(mdp.dims[n]), blocks).color_of[k] for k in range(mdp.dims[n])]))
    return EncoderVec.from_colors(colors, dist.marginals, length_model), dist


def noninteractive_rate(mdp: FactoredMdp, phi, weighting="stationary", length_model="huffman") -> RateResult:
    """Message rate needed to convey a fixed control map without interaction."""
    phi = check_control_map(mdp, phi)
    kind, w = _weights_for(mdp, phi, weighting)
    enc, dist = mis_encoder(mdp, phi, w, length_model)
    phi_p, changed = project_control(mdp, phi, enc, dist.support_mask())
    return RateResult(enc.entropy_rate(), enc.huffman_rate(), phi_p, enc, kind, w, True, changed)


def _weighting_is_invariant(mdp: FactoredMdp, candidates: CandidateSet, weighting):
    """True when every selection from the candidate sets induces the same chain."""
    if not isinstance(weighting, str):
        return True
    for i in np.flatnonzero(candidates.sizes() > 1):
        acts = candidates.actions(i)
        rows = mdp.kernel[list(acts), i]
        if np.any(np.abs(rows - rows[0]) > 0):
            return False
    return True


def _objective(ent, huf, objective):
    return (ent, huf) if objective == "entropy" else (huf, ent)


def _partition_search(mdp: FactoredMdp, candidates: CandidateSet, w, objective, max_combos):
    """Exact minimum over encoders for which some candidate map factors through the messages."""
    dist = ProductDistribution.from_weights(mdp, w)
    dims = dist.dims
    n = len(dims)
    sups = [np.flatnonzero(s) for s in dist.supports]
    free = int(np.argmax([len(s) for s in sups]))
    others = [k for k in range(n) if k != free]
    bits = candidates.bits.reshape(dims)
    full_mask = (1 << candidates.n_actions) - 1
    margs = dist.marginals

    per_node_parts = [list(set_partitions(sups[k].tolist())) for k in others]
    n_combos = math.prod(len(p) for p in per_node_parts)
    if n_combos > max_combos:
        raise BudgetExceededError(f"{n_combos} partition combinations exceed the search budget {max_combos}")

    def score(blocks_by_node):
        ent = huf = 0.0
        for k, blocks in enumerate(blocks_by_node):
            q = np.array([margs[k][b].sum() for b in blocks])
            ent += entropy_bits(q)
            huf += huffman_expected_length(q)
        return _objective(ent, huf, objective), ent, huf

    best = None
    free_syms = sups[free].tolist()
    for combo in itertools.product(*per_node_parts):
        cells = list(itertools.product(*combo))
        # req[x, c] = actions allowed in every state of cell c with the free node at x
        req = np.empty((len(free_syms), len(cells)), dtype=np.int64)
        for ci, cell in enumerate(cells):
            index = [None] * n
            for k, block in zip(others, cell):
                index[k] = np.asarray(block)
            for xi, x in enumerate(free_syms):
                index[free] = np.asarray([x])
                sub = bits[np.ix_(*index)]
                req[xi, ci] = np.bitwise_and.reduce(sub.ravel(), initial=full_mask)
        if np.any(req == 0):
            continue
        other_h = [np.array([margs[k][b].sum() for b in blocks]) for k, blocks in zip(others, combo)]
        base_ent = sum(entropy_bits(q) for q in other_h)
        base_huf = sum(huffman_expected_length(q) for q in other_h)
        classes, masks = [], []

        def rec(xi):
            nonlocal best
            if xi == len(free_syms):
                blocks = [[free_syms[j] for j in c] for c in classes]
                q = np.array([margs[free][b].sum() for b in blocks])
                ent = base_ent + entropy_bits(q)
                huf = base_huf + huffman_expected_length(q)
                key = _objective(ent, huf, objective)
                if best is None or key < best[0]:
                    full = [None] * n
                    for k, blocks_k in zip(others, combo):
                        full[k] = [list(b) for b in blocks_k]
                    full[free] = blocks
                    best = (key, full, [m.copy() for m in masks], cells)
                return
            for j in range(len(classes)):
                nm = masks[j] & req[xi]
                if np.all(nm != 0):
                    classes[j].append(xi)
                    old = masks[j]
                    masks[j] = nm
                    rec(xi + 1)
                    masks[j] = old
                    classes[j].pop()
            classes.append([xi])
            masks.append(req[xi].copy())
            rec(xi + 1)
            classes.pop()
            masks.pop()

        rec(0)
    if best is None:
        raise StructuralError("no encoder admits a candidate control map")
    return best, dist, free, others


def _lowest_bit(m):
    m = int(m)
    return (m & -m).bit_length() - 1


def noninteractive_min_rate(
    mdp: FactoredMdp,
    candidates: CandidateSet | None = None,
    weighting="stationary",
    cap=1_000_000,
    approximate=False,
    objective="entropy",
    length_model="huffman",
    max_partition_combos=200_000,
) -> RateResult:
    """Least message rate over every Bellman-optimal control map.

    When all candidate maps induce the same chain the weighting is shared,
    and the minimum is found exactly by searching encoder partitions; a
    partition is admissible when every message fiber has a common candidate
    action.  Otherwise candidate maps are enumerated up to ``cap``, beyond
    which ``approximate=True`` switches to per-state greedy selection.
    """
    if objective not in ("entropy", "huffman"):
        raise ValueError("objective must be 'entropy' or 'huffman'")
    if candidates is None:
        candidates = candidate_control_set(mdp, value_iteration(mdp))
    if candidates.n_states != mdp.n_states or candidates.n_actions != mdp.n_actions:
        raise ModelValidationError("candidate set does not match the model")
    if candidates.size() == 1:
        return noninteractive_rate(mdp, candidates.lowest(), weighting, length_model)

    if _weighting_is_invariant(mdp, candidates, weighting):
        kind, w = _weights_for(mdp, candidates.lowest(), weighting)
        (key, blocks, masks, cells), dist, free, others = _partition_search(
            mdp, candidates, w, objective, max_partition_combos
        )
        colors = [
            np.array([coloring_from_blocks(range(mdp.dims[k]), blocks[k]).color_of[x] for x in range(mdp.dims[k])])
            for k in range(len(mdp.dims))
        ]
        enc = EncoderVec.from_colors(colors, dist.marginals, length_model)
        # pick one common candidate per fiber, then fold off-support states in
        phi = candidates.lowest().copy()
        digits = mdp.indexer.digits
        support = dist.support_mask()
        free_pos = {x: j for j, c in enumerate(blocks[free]) for x in c}
        cell_index = {}
        for ci, cell in enumerate(cells):
            key_c = tuple(tuple(b) for b in cell)
            cell_index[key_c] = ci
        block_of = [{x: tuple(b) for b in blocks[k] for x in b} for k in range(len(mdp.dims))]
        for i in np.flatnonzero(support):
            cell = tuple(block_of[k][int(digits[i, k])] for k in others)
            phi[i] = _lowest_bit(masks[free_pos[int(digits[i, free])]][cell_index[cell]])
        phi, changed = project_control(mdp, phi, enc, support)
        return RateResult(enc.entropy_rate(), enc.huffman_rate(), phi, enc, kind, w, True, changed)

    if candidates.size() <= cap:
        best = None
        for phi in candidates.selections():
            res = noninteractive_rate(mdp, phi, weighting, length_model)
            k = _objective(res.entropy_rate, res.huffman_rate, objective)
            if best is None or k < best[0]:
                best = (k, res)
        return best[1]
    if not approximate:
        raise BudgetExceededError(f"|Phi*| = {candidates.size()} exceeds the enumeration cap {cap}")
    return _greedy_candidate_descent(mdp, candidates, weighting, objective, length_model)


def _greedy_candidate_descent(mdp, candidates, weighting, objective, length_model):
    phi = candidates.lowest().copy()
    cur = noninteractive_rate(mdp, phi, weighting, length_model)
    cur_key = _objective(cur.entropy_rate, cur.huffman_rate, objective)
    improved = True
    tied = np.flatnonzero(candidates.sizes() > 1)
    while improved:
        improved = False
        for i in tied:
            for a in candidates.actions(i):
                if a == phi[i]:
                    continue
                trial = phi.copy()
                trial[i] = a
                res = noninteractive_rate(mdp, trial, weighting, length_model)
                k = _objective(res.entropy_rate, res.huffman_rate, objective)
                if k < cur_key:
                    phi, cur, cur_key, improved = trial, res, k, True
    return RateResult(
        cur.entropy_rate, cur.huffman_rate, cur.phi, cur.enc, cur.weighting, cur.weights, False, cur.projected_states,
        ("per-state greedy selection over the candidate set",),
    )


# --------------------------------------------------------------------------
# argmax toy family


def argmax_mdp(supports, discount=0.0, probs=None, name="argmax"):
    """One node per entry of ``supports``; action ``a`` earns node ``a``'s value.

    States are i.i.d. across slots and nodes, so the Bellman-optimal actions
    are exactly the indices of the maximal local values.
    """
    supports = [tuple(s) for s in supports]
    dims = [len(s) for s in supports]
    if probs is None:
        probs = [np.full(d, 1.0 / d) for d in dims]
    joint = np.ones(1)
    for p in probs:
        joint = np.kron(joint, np.asarray(p, dtype=float))
    S = joint.size
    n = len(supports)
    locals_ = [LocalStateSpace(k + 1, supports[k]) for k in range(n)]
    digits = np.indices(dims).reshape(n, -1).T
    values = np.stack([np.asarray(supports[k], dtype=float)[digits[:, k]] for k in range(n)], axis=0)
    kernel = np.broadcast_to(joint, (n, S, S)).copy()
    reward = np.repeat(values[:, :, None], S, axis=2)
    return FactoredMdp(locals_, tuple(range(1, n + 1)), kernel, reward, discount, joint, True, name=name)


def uncoded_rate(mdp: FactoredMdp, weights) -> float:
    """Entropy of sending every local state verbatim."""
    dist = ProductDistribution.from_weights(mdp, weights)
    return sum(entropy_bits(m) for m in dist.marginals)
