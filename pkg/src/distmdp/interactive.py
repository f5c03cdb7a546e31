"""Interactive (turn-taking) message rates for simulating a centralized controller.

Two routes are provided.  ``interactive_rate_bound`` evaluates the
information-theoretic lower bound by iterated upper concave envelopes of a
rate-reduction table on a rational grid over the product of simplices.
``optimal_scalar_protocol`` searches scalar quantizer protocols exactly; a
protocol's state of knowledge is always a rectangle (a product of per-node
symbol subsets), so dynamic programming over rectangles is exhaustive.

Conventions: nodes are zero-based in code, speaker of round ``r`` (1-based)
is node ``(r - 1) mod N``; the first speaker's split is the outermost
concavification.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .coding import entropy_bits, huffman_expected_length, set_partitions
from .errors import BudgetExceededError, ModelValidationError
from .mdp import CandidateSet

NEG_INF = -math.inf
AFFINE_TOL = 1e-9
MAX_TABLE = 5_000_000


# --------------------------------------------------------------------------
# grids


def simplex_points(d: int, k: int) -> np.ndarray:
    """Integer compositions of ``k`` into ``d`` parts, lexicographic; divide by k for points."""
    if d < 1 or k < 1:
        raise ModelValidationError("simplex grid needs d >= 1 and k >= 1")
    out = []
    for bars in itertools.combinations(range(k + d - 1), d - 1):
        prev = -1
        comp = []
        for b in bars:
            comp.append(b - prev - 1)
            prev = b
        comp.append(k + d - 1 - prev - 1)
        out.append(comp)
    return np.array(sorted(out), dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    """Product of per-node rational simplex grids with common denominator ``k``."""

    dims: tuple
    k: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        pts = tuple(simplex_points(d, self.k) for d in self.dims)
        for p in pts:
            p.setflags(write=False)
        object.__setattr__(self, "_counts", pts)
        object.__setattr__(self, "_lookup", tuple({tuple(r): i for i, r in enumerate(p)} for p in pts))

    @property
    def counts(self):
        """Per node, the (G_n, d_n) integer numerators of the grid points."""
        return self._counts

    def points(self, node) -> np.ndarray:
        return self._counts[node] / self.k

    @property
    def shape(self):
        return tuple(len(c) for c in self._counts)

    @property
    def size(self):
        return math.prod(self.shape)

    def index_of(self, node, p) -> int:
        """Grid index of distribution ``p`` for ``node``; raises if ``p`` is off-grid."""
        num = np.asarray(p, dtype=float) * self.k
        r = np.round(num)
        if np.max(np.abs(num - r)) > 1e-9:
            raise ModelValidationError(f"distribution {list(p)} is not on the grid with denominator {self.k}")
        return self._lookup[node][tuple(int(x) for x in r)]

    def contains_restrictions(self, marginals) -> bool:
        """True when every conditional restriction ``p|A`` of each marginal is a grid point."""
        for p in marginals:
            p = np.asarray(p, dtype=float)
            sup = np.flatnonzero(p > 0)
            for r in range(1, sup.size + 1):
                for A in itertools.combinations(sup, r):
                    q = p[list(A)] / p[list(A)].sum() * self.k
                    if np.max(np.abs(q - np.round(q))) > 1e-9:
                        return False
        return True


def resolution_for(marginals, base=1, max_k=10_000) -> int:
    """Smallest multiple of ``base`` whose grid holds every restriction of the marginals."""
    lcm = base
    for p in marginals:
        fr = [Fraction(float(x)).limit_denominator(10_000) for x in p]
        sup = [i for i, x in enumerate(fr) if x > 0]
        for r in range(1, len(sup) + 1):
            for A in itertools.combinations(sup, r):
                tot = sum(fr[i] for i in A)
                for i in A:
                    lcm = math.lcm(lcm, (fr[i] / tot).denominator)
    if lcm > max_k:
        raise BudgetExceededError(f"grid denominator {lcm} exceeds {max_k}")
    return lcm


# --------------------------------------------------------------------------
# upper concave envelope


def _upper_hull_1d(y, f):
    order = np.lexsort((-f, y))
    y, f = y[order], f[order]
    keep = np.ones(y.size, dtype=bool)
    keep[1:] = y[1:] > y[:-1] + AFFINE_TOL
    y, f = y[keep], f[keep]
    hull = []
    for p in zip(y, f):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return np.array(hull)


def upper_concave_envelope(points, values) -> np.ndarray:
    """Least concave majorant of ``values`` evaluated back on ``points``.

    ``points`` is (G, m) in any affine chart; ``-inf`` entries impose nothing,
    and points outside the convex hull of the finite ones stay ``-inf``.
    """
    pts = np.asarray(points, dtype=float)
    vals = np.asarray(values, dtype=float)
    out = np.full(vals.shape, NEG_INF)
    fin = np.isfinite(vals)
    if not fin.any():
        return out
    X = pts[fin]
    f = vals[fin]
    c = X.mean(axis=0)
    if X.shape[0] > 1:
        _, s, vt = np.linalg.svd(X - c, full_matrices=False)
        rank = int(np.sum(s > AFFINE_TOL * max(1.0, s[0])))
        basis = vt[:rank]
    else:
        rank = 0
        basis = np.zeros((0, pts.shape[1]))
    Y = (pts - c) @ basis.T
    resid = np.linalg.norm((pts - c) - Y @ basis, axis=1)
    in_aff = resid <= AFFINE_TOL
    Yf = Y[fin]
    if rank == 0:
        out[in_aff] = f.max()
    elif rank == 1:
        hull = _upper_hull_1d(Yf[:, 0], f)
        y = Y[:, 0]
        inside = in_aff & (y >= hull[0, 0] - AFFINE_TOL) & (y <= hull[-1, 0] + AFFINE_TOL)
        yc = np.clip(y[inside], hull[0, 0], hull[-1, 0])
        out[inside] = np.interp(yc, hull[:, 0], hull[:, 1]) if hull.shape[0] > 1 else hull[0, 1]
    else:
        span = max(1.0, f.max() - f.min())
        floor = f.min() - span
        lifted = np.vstack([np.column_stack([Yf, f]), np.column_stack([Yf, np.full(f.size, floor)])])
        try:
            hull = ConvexHull(lifted)
        except QhullError:
            hull = ConvexHull(lifted, qhull_options="QJ")
        eq = hull.equations  # rows: [normal_y (rank), normal_v, offset]
        nv = eq[:, rank]
        upper = eq[nv > 1e-12]
        side = eq[np.abs(nv) <= 1e-12]
        cand = np.flatnonzero(in_aff)
        Yc = Y[cand]
        inside = np.ones(cand.size, dtype=bool)
        if side.size:
            inside = np.all(Yc @ side[:, :rank].T + side[:, -1][None, :] <= 1e-9, axis=1)
        env = np.min(-(Yc @ upper[:, :rank].T + upper[:, -1][None, :]) / upper[:, rank][None, :], axis=1)
        out[cand[inside]] = env[inside]
    out[fin] = np.maximum(out[fin], vals[fin])
    return out



# --------------------------------------------------------------------------
# rate-reduction tables


def _check_source(marginals, candidates: CandidateSet):
    ms = [np.asarray(m, dtype=float) for m in marginals]
    for m in ms:
        if m.ndim != 1 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-9:
            raise ModelValidationError("marginals must be probability vectors")
    dims = tuple(m.size for m in ms)
    if candidates.n_states != math.prod(dims):
        raise ModelValidationError("candidate set does not match the product of the marginal supports")
    return ms, dims


def feasible_rectangles(dims, candidates: CandidateSet) -> np.ndarray:
    """``ok[m_1, ..., m_N]``: some candidate action is common to every state of the rectangle.

    ``m_n`` is a bitmask over node ``n``'s symbols; empty masks are marked infeasible.
    """
    bits = candidates.bits.reshape(dims)
    ok = np.zeros(tuple(1 << d for d in dims), dtype=bool)
    full = (1 << candidates.n_actions) - 1
    for masks in itertools.product(*[range(1, 1 << d) for d in dims]):
        idx = [np.flatnonzero([(m >> x) & 1 for x in range(d)]) for m, d in zip(masks, dims)]
        ok[masks] = int(np.bitwise_and.reduce(bits[np.ix_(*idx)].ravel(), initial=full)) != 0
    return ok


@dataclass(frozen=True, eq=False)
class RateReductionTable:
    grid: SimplexGrid
    values: np.ndarray
    rounds: int = 0
    speakers: tuple = ()

    def at(self, marginals) -> float:
        idx = tuple(self.grid.index_of(n, p) for n, p in enumerate(marginals))
        return float(self.values[idx])


def rho0_table(grid: SimplexGrid, candidates: CandidateSet) -> RateReductionTable:
    """Joint entropy where some candidate is constant on the support, else ``-inf``."""
    if grid.size > MAX_TABLE:
        raise BudgetExceededError(f"product grid has {grid.size} points (cap {MAX_TABLE})")
    ok = feasible_rectangles(grid.dims, candidates)
    masks, ents = [], []
    for n, d in enumerate(grid.dims):
        cnt = grid.counts[n]
        masks.append(((cnt > 0) * (1 << np.arange(d))).sum(axis=1))
        p = cnt / grid.k
        with np.errstate(divide="ignore", invalid="ignore"):
            ents.append(-np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0).sum(axis=1))
    mesh = np.ix_(*masks)
    feasible = ok[mesh]
    H = sum(np.ix_(*[e if k == n else np.zeros(1) for k in range(len(ents))])[n] for n, e in enumerate(ents))
    H = np.broadcast_to(H, grid.shape)
    return RateReductionTable(grid, np.where(feasible, H, NEG_INF), 0, ())


def rho0(p, candidates: CandidateSet) -> float:
    """Rate-reduction functional before any message, at one product distribution."""
    ms = [np.asarray(m, dtype=float) for m in p]
    dims = tuple(m.size for m in ms)
    idx = [np.flatnonzero(m > 0) for m in ms]
    bits = candidates.bits.reshape(dims)
    common = int(np.bitwise_and.reduce(bits[np.ix_(*idx)].ravel(), initial=(1 << candidates.n_actions) - 1))
    if common == 0:
        return NEG_INF
    return sum(entropy_bits(m) for m in ms)


def concavify_step(table: RateReductionTable, speaker: int) -> RateReductionTable:
    """Upper concave envelope along ``speaker``'s simplex, one context at a time."""
    grid = table.grid
    vals = np.moveaxis(table.values, speaker, -1)
    shape = vals.shape
    flat = vals.reshape(-1, shape[-1])
    chart = grid.points(speaker)[:, :-1]
    out = np.empty_like(flat)
    cache = {}
    for r in range(flat.shape[0]):
        row = flat[r]
        key = row.tobytes()
        env = cache.get(key)
        if env is None:
            env = upper_concave_envelope(chart, row) if chart.shape[1] else row.copy()
            cache[key] = env
        out[r] = env
    new = np.moveaxis(out.reshape(shape), -1, speaker)
    return RateReductionTable(grid, new, table.rounds + 1, table.speakers + (speaker,))


def speaker_of(round_index: int, n_nodes: int) -> int:
    """Zero-based speaker of 1-based round ``round_index``."""
    return (round_index - 1) % n_nodes


def rate_reduction_tables(grid: SimplexGrid, candidates: CandidateSet, rounds: int):
    """Tables for ``rounds`` rounds; the last speaker is concavified first."""
    N = len(grid.dims)
    table = rho0_table(grid, candidates)
    tables = [table]
    for j in range(1, rounds + 1):
        table = concavify_step(table, speaker_of(rounds - j + 1, N))
        tables.append(table)
    return tables


@dataclass(frozen=True)
class BoundResult:
    rate: float
    rounds: int
    k: int
    joint_entropy: float
    rho: float
    grid_holds_restrictions: bool
    approximate: bool = True


def default_resolution(dims):
    """Target denominator before rounding up to hold every restriction of ``p``."""
    return {1: 1, 2: 64, 3: 16}.get(max(dims), 12)


def interactive_rate_bound(marginals, candidates: CandidateSet, rounds: int, grid: SimplexGrid | None = None) -> BoundResult:
    """Gridded lower bound on the interactive sum rate after ``rounds`` turns.

    The result is marked approximate because the envelopes are taken over
    grid points only; when the grid holds every restriction of ``p`` the
    bound still lower-bounds every scalar protocol with the same schedule.
    """
    ms, dims = _check_source(marginals, candidates)
    if len(dims) > 3 or max(dims) > 4:
        raise BudgetExceededError("interactive bound is limited to N <= 3 nodes with supports <= 4")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    if grid is None:
        need = resolution_for(ms)
        k = need * max(1, -(-default_resolution(dims) // need))
        grid = SimplexGrid(dims, k)
    H = sum(entropy_bits(m) for m in ms)
    table = rate_reduction_tables(grid, candidates, rounds)[-1]
    rho = table.at(ms)
    rate = math.inf if rho == NEG_INF else max(0.0, H - rho)
    return BoundResult(rate, rounds, grid.k, H, rho, grid.contains_restrictions(ms))


# --------------------------------------------------------------------------
# scalar protocols


@dataclass
class ProtocolNode:
    """One tree vertex: who speaks (one node or all nodes) and how symbols map to messages."""

    speakers: tuple
    partitions: tuple  # per speaker, list of symbol blocks; message = block index
    code_lengths: tuple  # per speaker, bits charged per message
    children: dict = field(default_factory=dict)
    action: int | None = None


@dataclass
class InteractiveProtocol:
    rounds: int
    mode: str
    root: ProtocolNode
    expected_bits: float
    length_model: str
    dims: tuple

    def transcript(self, digits):
        """Messages exchanged and the decided action for the state with local indices ``digits``."""
        node = self.root
        msgs = []
        while node.action is None:
            key = []
            for spk, blocks in zip(node.speakers, node.partitions):
                key.append(next(b for b, block in enumerate(blocks) if digits[spk] in block))
            key = tuple(key)
            msgs.append(key)
            node = node.children[key]
        return tuple(msgs), node.action

    def bits(self, digits) -> float:
        node = self.root
        total = 0.0
        while node.action is None:
            key = []
            for spk, blocks, lens in zip(node.speakers, node.partitions, node.code_lengths):
                b = next(b for b, block in enumerate(blocks) if digits[spk] in block)
                key.append(b)
                total += lens[b]
            node = node.children[tuple(key)]
        return total

    def dump(self, symbols=None, actions=None) -> str:
        lines = [f"# {self.mode} protocol, {self.rounds} rounds, {self.expected_bits:.6g} bits ({self.length_model})"]

        def name(n, x):
            return repr(symbols[n][x]) if symbols else str(x)

        def rec(node, depth, prefix):
            pad = "  " * depth
            if node.action is not None:
                label = actions[node.action] if actions else node.action
                lines.append(f"{pad}{prefix} -> action {label}")
                return
            parts = []
            for spk, blocks in zip(node.speakers, node.partitions):
                parts.append(f"node {spk + 1}: " + " | ".join("{" + ",".join(name(spk, x) for x in b) + "}" for b in blocks))
            lines.append(f"{pad}{prefix} speak " + "; ".join(parts))
            for key in sorted(node.children):
                rec(node.children[key], depth + 1, f"m={key}")

        rec(self.root, 0, "root")
        return "\n".join(lines) + "\n"


def _mask_items(mask, d):
    return tuple(x for x in range(d) if (mask >> x) & 1)


def _block_mask(block):
    return sum(1 << x for x in block)


def _cost_of(q, length_model):
    if len(q) <= 1:
        return 0.0
    return huffman_expected_length(q) if length_model == "huffman" else entropy_bits(q)


def optimal_scalar_protocol(
    marginals,
    candidates: CandidateSet,
    rounds: int,
    max_alphabet: int | None = None,
    mode: str = "heterogeneous",
    length_model: str = "huffman",
    budget: int = 5_000_000,
):
    """Least expected transcript length over scalar quantizer protocols.

    ``heterogeneous``: one node speaks per round, round-robin from node 1.
    ``homogeneous``: every node speaks in every round, in parallel.
    Each message is coded with a code built for its history-conditional law.
    The protocol may stop once the rectangle of possible states admits a
    common candidate action.
    """
    if mode not in ("heterogeneous", "homogeneous"):
        raise ValueError("mode must be 'heterogeneous' or 'homogeneous'")
    if length_model not in ("huffman", "entropy"):
        raise ValueError("length_model must be 'huffman' or 'entropy'")
    ms, dims = _check_source(marginals, candidates)
    N = len(dims)
    if max_alphabet is None:
        max_alphabet = max(dims)
    ok = feasible_rectangles(dims, candidates)
    sup_masks = tuple(_block_mask(np.flatnonzero(m > 0)) for m in ms)
    work = [0]

    @lru_cache(maxsize=None)
    def parts_of(mask, d):
        return tuple(
            tuple(tuple(b) for b in p) for p in set_partitions(_mask_items(mask, d)) if len(p) <= max_alphabet
        )

    def cond(n, block, mask):
        tot = sum(ms[n][x] for x in _mask_items(mask, dims[n]))
        return sum(ms[n][x] for x in block) / tot

    @lru_cache(maxsize=None)
    def hetero(masks, r, spk):
        if ok[masks]:
            return 0.0, None
        if r == 0:
            return math.inf, None
        best = (math.inf, None)
        nxt = (spk + 1) % N
        for part in parts_of(masks[spk], dims[spk]):
            work[0] += 1
            if work[0] > budget:
                raise BudgetExceededError("protocol search budget exceeded; try fewer rounds or smaller supports")
            q = [cond(spk, b, masks[spk]) for b in part]
            c = _cost_of(q, length_model)
            for qb, b in zip(q, part):
                if c >= best[0]:
                    break
                child = masks[:spk] + (_block_mask(b),) + masks[spk + 1 :]
                c += qb * hetero(child, r - 1, nxt)[0]
            if c < best[0] - 1e-12:
                best = (c, part)
        return best

    @lru_cache(maxsize=None)
    def homo(masks, r):
        if ok[masks]:
            return 0.0, None
        if r == 0:
            return math.inf, None
        best = (math.inf, None)
        for combo in itertools.product(*[parts_of(masks[n], dims[n]) for n in range(N)]):
            work[0] += 1
            if work[0] > budget:
                raise BudgetExceededError("protocol search budget exceeded; try fewer rounds or smaller supports")
            qs = [[cond(n, b, masks[n]) for b in combo[n]] for n in range(N)]
            c = sum(_cost_of(q, length_model) for q in qs)
            for keys in itertools.product(*[range(len(p)) for p in combo]):
                if c >= best[0]:
                    break
                prob = math.prod(qs[n][keys[n]] for n in range(N))
                child = tuple(_block_mask(combo[n][keys[n]]) for n in range(N))
                c += prob * homo(child, r - 1)[0]
            if c < best[0] - 1e-12:
                best = (c, combo)
        return best

    def decide(masks):
        idx = [np.array(_mask_items(m, d)) for m, d in zip(masks, dims)]
        common = int(np.bitwise_and.reduce(candidates.bits.reshape(dims)[np.ix_(*idx)].ravel()))
        return (common & -common).bit_length() - 1

    def build(masks, r, spk):
        if mode == "heterogeneous":
            value, part = hetero(masks, r, spk)
            if part is None:
                return ProtocolNode((), (), (), action=decide(masks) if math.isfinite(value) else None)
            q = [cond(spk, b, masks[spk]) for b in part]
            lens = _lengths(q, length_model)
            node = ProtocolNode((spk,), (part,), (lens,))
            for bi, b in enumerate(part):
                child = masks[:spk] + (_block_mask(b),) + masks[spk + 1 :]
                node.children[(bi,)] = build(child, r - 1, (spk + 1) % N)
            return node
        value, combo = homo(masks, r)
        if combo is None:
            return ProtocolNode((), (), (), action=decide(masks) if math.isfinite(value) else None)
        lens = tuple(_lengths([cond(n, b, masks[n]) for b in combo[n]], length_model) for n in range(N))
        node = ProtocolNode(tuple(range(N)), tuple(combo), lens)
        for keys in itertools.product(*[range(len(p)) for p in combo]):
            child = tuple(_block_mask(combo[n][keys[n]]) for n in range(N))
            node.children[keys] = build(child, r - 1, 0)
        return node

    value = hetero(sup_masks, rounds, 0)[0] if mode == "heterogeneous" else homo(sup_masks, rounds)[0]
    if not math.isfinite(value):
        return None, math.inf
    root = build(sup_masks, rounds, 0)
    return InteractiveProtocol(rounds, mode, root, value, length_model, dims), value


def _lengths(q, length_model):
    if len(q) <= 1:
        return (0.0,) * len(q)
    if length_model == "huffman":
        from .coding import huffman_lengths

        return tuple(float(x) for x in huffman_lengths(q))
    return tuple(-math.log2(x) if x > 0 else 0.0 for x in q)


def verify_protocol(protocol: InteractiveProtocol, marginals, candidates: CandidateSet):
    """Same-slot decodability check by running every positive-probability state.

    Returns the expected bits computed from the per-state transcripts.
    """
    ms = [np.asarray(m, dtype=float) for m in marginals]
    dims = protocol.dims
    decisions = {}
    total = 0.0
    for digits in itertools.product(*[np.flatnonzero(m > 0) for m in ms]):
        msgs, action = protocol.transcript(digits)
        if action is None or not candidates.mask[int(np.ravel_multi_index(digits, dims)), action]:
            raise ModelValidationError(f"protocol decides a non-optimal action in state {digits}")
        if decisions.setdefault(msgs, action) != action:
            raise ModelValidationError("decision is not a function of the transcript")
        total += math.prod(m[x] for m, x in zip(ms, digits)) * protocol.bits(digits)
    return total
