"""Finite MDPs whose global state is a tuple of per-node local states.

Global states are indexed lexicographically over the local symbol orders,
node 1 most significant, so ``index == np.ravel_multi_index(digits, dims)``.
Control maps are integer arrays of action *indices*; value functions and
occupancy weights are float arrays indexed by global state.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ModelValidationError, NumericError

ROW_TOL = 1e-12


@dataclass(frozen=True)
class LocalStateSpace:
    node_id: int
    symbols: tuple

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if not symbols:
            raise ModelValidationError(f"node {self.node_id}: empty local state space")
        if len(set(symbols)) != len(symbols):
            raise ModelValidationError(f"node {self.node_id}: duplicate local state labels")

    def __len__(self):
        return len(self.symbols)

    def index(self, symbol) -> int:
        return self.symbols.index(symbol)


class StateIndexer:
    """Bijection between global state tuples and ``0..S-1``."""

    def __init__(self, locals_: Sequence[LocalStateSpace]):
        self.locals = tuple(locals_)
        self.dims = tuple(len(ls) for ls in self.locals)
        self._lookup = [{s: k for k, s in enumerate(ls.symbols)} for ls in self.locals]

    def __len__(self):
        return math.prod(self.dims)

    def index(self, state) -> int:
        if len(state) != len(self.dims):
            raise ModelValidationError(f"state {state!r} has {len(state)} components, expected {len(self.dims)}")
        try:
            digits = [lk[s] for lk, s in zip(self._lookup, state)]
        except KeyError as exc:
            raise ModelValidationError(f"unknown local state {exc.args[0]!r} in {state!r}") from None
        return int(np.ravel_multi_index(digits, self.dims))

    def state(self, index: int) -> tuple:
        digits = np.unravel_index(int(index), self.dims)
        return tuple(ls.symbols[d] for ls, d in zip(self.locals, digits))

    @cached_property
    def digits(self) -> np.ndarray:
        """(S, N) array of local symbol indices of every global state."""
        grids = np.indices(self.dims).reshape(len(self.dims), -1)
        return np.ascontiguousarray(grids.T)

    def states(self):
        return [self.state(i) for i in range(len(self))]


@dataclass(frozen=True, eq=False)
class FactoredMdp:
    locals: tuple
    actions: tuple
    kernel: np.ndarray
    reward: np.ndarray
    discount: float
    initial: np.ndarray
    independence_flag: bool = False
    channels: Mapping[str, np.ndarray] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "locals", tuple(self.locals))
        object.__setattr__(self, "actions", tuple(self.actions))
        kernel = np.asarray(self.kernel, dtype=float)
        reward = np.asarray(self.reward, dtype=float)
        initial = np.asarray(self.initial, dtype=float)
        n_states = math.prod(len(ls) for ls in self.locals)
        n_actions = len(self.actions)
        if n_actions == 0:
            raise ModelValidationError("action set is empty")
        if len(set(self.actions)) != n_actions:
            raise ModelValidationError("duplicate action labels")
        if reward.ndim == 2:
            reward = np.repeat(reward[:, :, None], n_states, axis=2)
        shape = (n_actions, n_states, n_states)
        if kernel.shape != shape:
            raise ModelValidationError(f"kernel has shape {kernel.shape}, expected {shape}")
        if reward.shape != shape:
            raise ModelValidationError(f"reward has shape {reward.shape}, expected {shape}")
        if initial.shape != (n_states,):
            raise ModelValidationError(f"initial distribution has shape {initial.shape}, expected {(n_states,)}")
        if not np.all(np.isfinite(kernel)) or not np.all(np.isfinite(reward)):
            raise ModelValidationError("kernel and reward must be finite")
        if np.any(kernel < 0):
            raise ModelValidationError("kernel has negative entries")
        rows = np.abs(kernel.sum(axis=2) - 1.0)
        if rows.max() > ROW_TOL:
            a, i = np.unravel_index(np.argmax(rows), rows.shape)
            raise ModelValidationError(f"kernel row (action {self.actions[a]!r}, state {i}) sums to {kernel[a, i].sum()!r}")
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > ROW_TOL:
            raise ModelValidationError("initial distribution is not a probability vector")
        if not 0.0 <= self.discount < 1.0:
            raise ModelValidationError(f"discount {self.discount} outside [0, 1)")
        channels = {}
        for key, table in dict(self.channels).items():
            table = np.asarray(table, dtype=float)
            if table.ndim == 2:
                table = np.repeat(table[:, :, None], n_states, axis=2)
            if table.shape != shape:
                raise ModelValidationError(f"channel {key!r} has shape {table.shape}, expected {shape}")
            channels[key] = table
        for name, arr in (("kernel", kernel), ("reward", reward), ("initial", initial)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "channels", channels)
        if self.independence_flag and not self.check_factorization():
            raise ModelValidationError("independence_flag set but kernel does not factor across nodes")

    @property
    def n_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[0]

    @property
    def dims(self) -> tuple:
        return tuple(len(ls) for ls in self.locals)

    @cached_property
    def indexer(self) -> StateIndexer:
        return StateIndexer(self.locals)

    @cached_property
    def expected_reward(self) -> np.ndarray:
        """(A, S) one-step expected reward ``sum_j Q_a(i,j) r_a(i,j)``."""
        return np.einsum("aij,aij->ai", self.kernel, self.reward)

    def expected_channel(self, key) -> np.ndarray:
        if key == "reward":
            return self.expected_reward
        return np.einsum("aij,aij->ai", self.kernel, self.channels[key])

    def transition_matrix(self, phi) -> np.ndarray:
        phi = check_control_map(self, phi)
        return self.kernel[phi, np.arange(self.n_states)]

    def reward_vector(self, phi) -> np.ndarray:
        phi = check_control_map(self, phi)
        return self.expected_reward[phi, np.arange(self.n_states)]

    def local_marginals(self, weights) -> list:
        """Per-node marginals of a weighting over global states."""
        w = np.asarray(weights, dtype=float).reshape(self.dims)
        n = len(self.dims)
        return [w.sum(axis=tuple(m for m in range(n) if m != k)) for k in range(n)]

    def check_factorization(self, tol=ROW_TOL) -> bool:
        """True when every kernel row is the product of its per-node marginals."""
        n = len(self.dims)
        for a in range(self.n_actions):
            k = self.kernel[a].reshape((self.n_states,) + self.dims)
            prod = np.ones_like(k)
            for m in range(n):
                axes = tuple(1 + q for q in range(n) if q != m)
                marg = k.sum(axis=axes, keepdims=True)
                prod = prod * marg
            if np.max(np.abs(prod - k)) > tol:
                return False
        return True


def check_control_map(mdp: FactoredMdp, phi) -> np.ndarray:
    phi = np.asarray(phi)
    if phi.shape != (mdp.n_states,):
        raise ModelValidationError(f"control map has shape {phi.shape}, expected {(mdp.n_states,)}")
    if not np.issubdtype(phi.dtype, np.integer):
        if not np.all(phi == np.round(phi)):
            raise ModelValidationError("control map must hold integer action indices")
        phi = phi.astype(np.int64)
    if phi.size and (phi.min() < 0 or phi.max() >= mdp.n_actions):
        raise ModelValidationError("control map refers to an unknown action")
    return phi.astype(np.int64, copy=False)


def constant_map(mdp: FactoredMdp, action=0) -> np.ndarray:
    return np.full(mdp.n_states, action, dtype=np.int64)


def q_values(mdp: FactoredMdp, V) -> np.ndarray:
    """(A, S) action values ``sum_j Q_a(i,j)[r_a(i,j) + beta V(j)]``."""
    return mdp.expected_reward + mdp.discount * (mdp.kernel @ np.asarray(V, dtype=float))


def value_iteration(mdp: FactoredMdp, tol=1e-10, max_iter=100_000, trace=None) -> np.ndarray:
    """Successive approximation from ``V = 0``.

    Stops once the sup-norm step is at most ``tol (1 - beta) / beta``, which
    bounds the Bellman residual of the returned iterate by ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    beta = mdp.discount
    V = np.zeros(mdp.n_states)
    if trace is not None:
        trace.append(V.copy())
    if beta == 0.0:
        V = mdp.expected_reward.max(axis=0)
        if trace is not None:
            trace.append(V.copy())
        return V
    threshold = tol * (1.0 - beta) / beta
    for _ in range(max_iter):
        V_next = q_values(mdp, V).max(axis=0)
        step = np.max(np.abs(V_next - V))
        V = V_next
        if trace is not None:
            trace.append(V.copy())
        if step <= threshold:
            return V
    raise NumericError(f"value iteration did not reach tol={tol} in {max_iter} sweeps")


def extract_policy(mdp: FactoredMdp, V) -> np.ndarray:
    """Greedy map for ``V``; ties go to the lowest action index."""
    return np.argmax(q_values(mdp, V), axis=0).astype(np.int64)


def policy_value(mdp: FactoredMdp, phi) -> np.ndarray:
    P = mdp.transition_matrix(phi)
    r = mdp.reward_vector(phi)
    A = np.eye(mdp.n_states) - mdp.discount * P
    try:
        V = np.linalg.solve(A, r)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"policy evaluation failed: {exc}") from exc
    if not np.all(np.isfinite(V)):
        raise NumericError("policy evaluation produced non-finite values")
    return V


def policy_iteration(mdp: FactoredMdp, phi0=None, max_iter=10_000, trace=None):
    """Howard's policy iteration.

    The incumbent action is kept whenever it is within round-off of the
    maximum, which rules out cycling between tied actions.
    """
    if phi0 is None:
        phi = np.argmax(mdp.expected_reward, axis=0).astype(np.int64)
    else:
        phi = check_control_map(mdp, phi0).copy()
    states = np.arange(mdp.n_states)
    for _ in range(max_iter):
        V = policy_value(mdp, phi)
        if trace is not None:
            trace.append((phi.copy(), V.copy()))
        Q = q_values(mdp, V)
        best = Q.max(axis=0)
        keep = Q[phi, states] >= best - 1e-12 * np.maximum(1.0, np.abs(best))
        new_phi = np.where(keep, phi, np.argmax(Q, axis=0))
        if np.array_equal(new_phi, phi):
            return phi, V
        phi = new_phi
    raise NumericError(f"policy iteration did not converge in {max_iter} iterations")


class CandidateSet:
    """Per-state sets of Bellman-optimal actions, stored as a boolean (S, A) mask."""

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("candidate mask must be (S, A)")
        if not mask.any(axis=1).all():
            raise ValueError("every state needs at least one candidate action")
        mask.setflags(write=False)
        self.mask = mask

    @property
    def n_states(self):
        return self.mask.shape[0]

    @property
    def n_actions(self):
        return self.mask.shape[1]

    def actions(self, i):
        return tuple(int(a) for a in np.flatnonzero(self.mask[i]))

    def sizes(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def size(self) -> int:
        """|Phi*| as an exact integer."""
        return math.prod(int(k) for k in self.sizes())

    @cached_property
    def bits(self) -> np.ndarray:
        """Candidate sets as integer bitmasks (bit ``a`` set when action ``a`` qualifies)."""
        weights = (1 << np.arange(self.n_actions, dtype=np.int64))
        return (self.mask.astype(np.int64) * weights).sum(axis=1)

    def lowest(self) -> np.ndarray:
        return np.argmax(self.mask, axis=1).astype(np.int64)

    def highest(self) -> np.ndarray:
        return (self.n_actions - 1 - np.argmax(self.mask[:, ::-1], axis=1)).astype(np.int64)

    def contains(self, phi) -> bool:
        phi = np.asarray(phi)
        return bool(self.mask[np.arange(self.n_states), phi].all())

    def selections(self, cap=None):
        """Iterate over every control map drawn from the sets."""
        if cap is not None and self.size() > cap:
            raise ValueError(f"|Phi*| = {self.size()} exceeds cap {cap}")
        choices = [self.actions(i) for i in range(self.n_states)]
        for combo in itertools.product(*choices):
            yield np.array(combo, dtype=np.int64)

    def intersection(self, states) -> int:
        """Bitmask of actions that are candidates in every listed state."""
        b = self.bits[np.asarray(states, dtype=np.int64)]
        return int(np.bitwise_and.reduce(b)) if b.size else (1 << self.n_actions) - 1


def candidate_control_set(mdp: FactoredMdp, V_star, tie_tol=1e-9) -> CandidateSet:
    Q = q_values(mdp, V_star)
    return CandidateSet((Q >= Q.max(axis=0, keepdims=True) - tie_tol).T)


@dataclass(frozen=True)
class OccupancyWeights:
    weights: np.ndarray
    normalized: bool = False

    def normalize(self) -> "OccupancyWeights":
        if self.normalized:
            return self
        return OccupancyWeights(self.weights / self.weights.sum(), True)


def discounted_occupancy(mdp: FactoredMdp, phi, normalized=False) -> OccupancyWeights:
    """Row vector ``pi (I - beta P(phi))^{-1}``."""
    P = mdp.transition_matrix(phi)
    A = np.eye(mdp.n_states) - mdp.discount * P
    try:
        w = np.linalg.solve(A.T, mdp.initial)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"occupancy solve failed: {exc}") from exc
    w = np.where(np.abs(w) < 1e-14, 0.0, w)
    if np.any(w < -1e-9):
        raise NumericError("occupancy has negative entries")
    w = np.clip(w, 0.0, None)
    occ = OccupancyWeights(w, False)
    return occ.normalize() if normalized else occ


def expected_discounted_reward(mdp: FactoredMdp, phi, per_state_cost=None) -> float:
    phi = check_control_map(mdp, phi)
    r = mdp.reward_vector(phi)
    if per_state_cost is not None:
        cost = np.asarray(per_state_cost, dtype=float)
        if cost.ndim == 0:
            cost = np.full(mdp.n_states, float(cost))
        if cost.shape != (mdp.n_states,):
            raise ModelValidationError(f"cost vector has shape {cost.shape}, expected {(mdp.n_states,)}")
        r = r - cost
    w = discounted_occupancy(mdp, phi).weights
    return float(w @ r)


def closed_classes(P, tol=0.0):
    """Closed communicating classes of a stochastic matrix, plus the transient states."""
    adj = csr_matrix(np.asarray(P) > tol)
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    leaves = np.zeros(n_comp, dtype=bool)
    leaves[:] = True
    rows, cols = adj.nonzero()
    leaving = labels[rows] != labels[cols]
    leaves[np.unique(labels[rows[leaving]])] = False
    classes = [np.flatnonzero(labels == c) for c in range(n_comp) if leaves[c]]
    classes.sort(key=lambda c: c[0])
    closed = np.zeros(len(labels), dtype=bool)
    for c in classes:
        closed[c] = True
    return classes, np.flatnonzero(~closed)


def long_run_distribution(P, start) -> np.ndarray:
    """Cesaro-limit state distribution of the chain started from ``start``.

    Handles several recurrent classes and periodicity: each closed class gets
    its stationary law, weighted by the probability of absorption into it.
    """
    P = np.asarray(P, dtype=float)
    start = np.asarray(start, dtype=float)
    classes, transient = closed_classes(P)
    n = P.shape[0]
    out = np.zeros(n)
    if transient.size:
        PTT = P[np.ix_(transient, transient)]
        fundamental = np.eye(transient.size) - PTT
    for cls in classes:
        sub = P[np.ix_(cls, cls)]
        m = cls.size
        lhs = np.vstack([(sub.T - np.eye(m)), np.ones((1, m))])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        mu, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        mu = np.clip(mu, 0.0, None)
        mu /= mu.sum()
        mass = start[cls].sum()
        if transient.size:
            into = P[np.ix_(transient, cls)].sum(axis=1)
            absorb = np.linalg.solve(fundamental, into)
            mass += start[transient] @ absorb
        out[cls] = mass * mu
    return out


def stationary_weights(mdp: FactoredMdp, phi) -> np.ndarray:
    return long_run_distribution(mdp.transition_matrix(phi), mdp.initial)


def state_weighting(mdp: FactoredMdp, phi, kind="stationary") -> np.ndarray:
    """Normalized state weighting used to evaluate message rates."""
    if kind == "stationary":
        return stationary_weights(mdp, phi)
    if kind == "occupancy":
        return discounted_occupancy(mdp, phi, normalized=True).weights
    raise ValueError(f"unknown weighting {kind!r}")


def random_mdp(rng, dims=(3,), n_actions=2, discount=0.9, sparsity=0.0, reward_scale=1.0, name="random"):
    """Random dense instance for fuzzing; ``dims`` gives the per-node support sizes."""
    n_states = math.prod(dims)
    kernel = rng.random((n_actions, n_states, n_states))
    if sparsity:
        kernel *= rng.random(kernel.shape) >= sparsity
        kernel[..., 0] += 1e-3
    kernel /= kernel.sum(axis=2, keepdims=True)
    reward = reward_scale * rng.standard_normal((n_actions, n_states, n_states))
    initial = rng.random(n_states)
    initial /= initial.sum()
    locals_ = [LocalStateSpace(k + 1, tuple(range(d))) for k, d in enumerate(dims)]
    return FactoredMdp(locals_, tuple(range(n_actions)), kernel, reward, discount, initial, name=name)
