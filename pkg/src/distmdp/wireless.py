"""Downlink scheduling instances: per-user channels plus a shared basestation buffer.

Local states are ``[channel_1, ..., channel_N, buffer]`` where the buffer
symbol is the backlog tuple ``(b_1, ..., b_N)`` with ``sum(b) <= buffer_max``.
Action ``a`` (label ``a + 1``) schedules user ``a + 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import BudgetExceededError, ModelValidationError
from .mdp import FactoredMdp, LocalStateSpace, closed_classes, constant_map

PROB_TOL = 1e-12


def _prob_vector(values, what):
    p = np.array([float(Fraction(v)) if isinstance(v, str) else float(v) for v in values])
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
        raise ModelValidationError(f"{what} is not a probability vector: {list(values)}")
    return p


@dataclass(frozen=True, eq=False)
class WirelessConfig:
    n_users: int
    channel_support: tuple
    channel_transition: tuple
    arrival_support: tuple
    arrival_probs: tuple
    buffer_max: int
    discount: float = 0.9
    max_states: int = 100_000

    def __post_init__(self):
        n = self.n_users
        if n < 1:
            raise ModelValidationError("need at least one user")
        supports = tuple(tuple(int(c) for c in s) for s in self.channel_support)
        if len(supports) != n:
            raise ModelValidationError("one channel support per user is required")
        mats = []
        for u, (s, m) in enumerate(zip(supports, self.channel_transition)):
            if not s or min(s) < 0 or len(set(s)) != len(s):
                raise ModelValidationError(f"user {u + 1}: channel support must be distinct nonnegative integers")
            m = np.asarray(m, dtype=float)
            if m.shape != (len(s), len(s)):
                raise ModelValidationError(f"user {u + 1}: channel transition has shape {m.shape}")
            if np.any(m < 0) or np.max(np.abs(m.sum(axis=1) - 1.0)) > PROB_TOL:
                raise ModelValidationError(f"user {u + 1}: channel transition rows must be distributions")
            m.setflags(write=False)
            mats.append(m)
        if len(mats) != n:
            raise ModelValidationError("one channel transition matrix per user is required")
        arrivals = tuple(int(x) for x in self.arrival_support)
        if not arrivals or min(arrivals) < 0:
            raise ModelValidationError("arrival support must be nonnegative integers")
        probs = _prob_vector(self.arrival_probs, "arrival_probs")
        if probs.size != len(arrivals):
            raise ModelValidationError("arrival_probs and arrival_support differ in length")
        if self.buffer_max < 0:
            raise ModelValidationError("buffer_max must be >= 0")
        if not 0 <= self.discount < 1:
            raise ModelValidationError("discount must lie in [0, 1)")
        object.__setattr__(self, "channel_support", supports)
        object.__setattr__(self, "channel_transition", tuple(mats))
        object.__setattr__(self, "arrival_support", arrivals)
        object.__setattr__(self, "arrival_probs", tuple(probs))

    @classmethod
    def iid(cls, n_users, channel_support, channel_probs, arrival_support, arrival_probs, buffer_max, discount=0.9, **kw):
        """Channels drawn afresh every slot from ``channel_probs`` (identical transition rows)."""
        p = _prob_vector(channel_probs, "channel_probs")
        row = np.tile(p, (len(p), 1))
        return cls(
            n_users,
            (tuple(channel_support),) * n_users,
            (row,) * n_users,
            tuple(arrival_support),
            tuple(arrival_probs),
            buffer_max,
            discount,
            **kw,
        )

    def buffer_states(self):
        return buffer_states(self.n_users, self.buffer_max)

    def n_states(self):
        return math.prod(len(s) for s in self.channel_support) * len(self.buffer_states())


def buffer_states(n_users, buffer_max):
    """Backlog tuples with total at most ``buffer_max``, in lexicographic order."""
    return [b for b in itertools.product(range(buffer_max + 1), repeat=n_users) if sum(b) <= buffer_max]


def transmit_vector(action, channels, buffer):
    """Packets delivered this slot when user ``action`` (1-based) is scheduled."""
    n = len(buffer)
    if isinstance(action, bool) or not isinstance(action, (int, np.integer)) or not 1 <= action <= n:
        raise ModelValidationError(f"action must be a user index in 1..{n}, got {action!r}")
    out = [0] * n
    out[action - 1] = min(int(channels[action - 1]), int(buffer[action - 1]))
    return tuple(out)


def drop_packets(buffer, arrivals, bu_max):
    """Round-robin single-packet admission; returns ``(new_buffer, n_dropped)``.

    Users are visited cyclically from user 1 while both free capacity and
    unadmitted arrivals remain, so admission is work-conserving.
    """
    b = list(buffer)
    x = list(arrivals)
    n = len(b)
    remaining = bu_max - sum(b)
    new = sum(x)
    i = 0
    while remaining > 0 and new > 0:
        if x[i] > 0:
            b[i] += 1
            x[i] -= 1
            remaining -= 1
            new -= 1
        i = (i + 1) % n
    return tuple(b), sum(x)


def throughput_reward(action, channels, buffer):
    return sum(transmit_vector(action, channels, buffer))


def _buffer_transition(config, buffers, index_of):
    """P[b_after_tx -> b_next] and the drop mass on each transition."""
    nb = len(buffers)
    P = np.zeros((nb, nb))
    drop_mass = np.zeros((nb, nb))
    arrivals = list(zip(config.arrival_support, config.arrival_probs))
    for k, b in enumerate(buffers):
        for combo in itertools.product(arrivals, repeat=config.n_users):
            x = tuple(c[0] for c in combo)
            px = math.prod(c[1] for c in combo)
            if px == 0:
                continue
            nxt, dropped = drop_packets(b, x, config.buffer_max)
            j = index_of[nxt]
            P[k, j] += px
            drop_mass[k, j] += px * dropped
    return P, drop_mass


def build_mdp(config: WirelessConfig, initial_state=None, name="wireless") -> FactoredMdp:
    n = config.n_users
    buffers = config.buffer_states()
    n_states = config.n_states()
    if n_states > config.max_states:
        raise BudgetExceededError(f"{n_states} states exceed the cap of {config.max_states}")
    index_of = {b: k for k, b in enumerate(buffers)}
    Pb, drop_mass = _buffer_transition(config, buffers, index_of)
    with np.errstate(invalid="ignore", divide="ignore"):
        drop_given = np.where(Pb > 0, drop_mass / np.where(Pb > 0, Pb, 1.0), 0.0)

    chan_dims = [len(s) for s in config.channel_support]
    n_chan = math.prod(chan_dims)
    nb = len(buffers)
    chan_states = list(itertools.product(*[range(d) for d in chan_dims]))
    # joint channel transition; users evolve independently
    Pc = np.ones((1, 1))
    for m in config.channel_transition:
        Pc = np.kron(Pc, m)

    A = n
    kernel = np.zeros((A, n_states, n_states))
    reward = np.zeros((A, n_states, n_states))
    drops = np.zeros((A, n_states, n_states))
    for ci, cdig in enumerate(chan_states):
        chans = tuple(config.channel_support[u][cdig[u]] for u in range(n))
        for bk, b in enumerate(buffers):
            i = ci * nb + bk
            for a in range(A):
                t = transmit_vector(a + 1, chans, b)
                after = index_of[tuple(bb - tt for bb, tt in zip(b, t))]
                row = np.kron(Pc[ci], Pb[after])
                kernel[a, i] = row
                reward[a, i, :] = sum(t)
                drops[a, i] = np.tile(drop_given[after], n_chan)

    locals_ = [LocalStateSpace(u + 1, config.channel_support[u]) for u in range(n)]
    locals_.append(LocalStateSpace(n + 1, tuple(buffers)))
    if initial_state is None:
        initial_state = tuple(0 for _ in range(n)) + ((0,) * n,)
    initial = np.zeros(n_states)
    mdp_tmp_index = _state_index(locals_, initial_state)
    initial[mdp_tmp_index] = 1.0
    return FactoredMdp(
        locals_,
        tuple(range(1, n + 1)),
        kernel,
        reward,
        config.discount,
        initial,
        independence_flag=False,
        channels={"throughput": reward.copy(), "drops": drops},
        name=name,
    )


def _state_index(locals_, state):
    digits = []
    for ls, s in zip(locals_, state):
        if s not in ls.symbols:
            raise ModelValidationError(f"initial state component {s!r} is not in node {ls.node_id}'s support")
        digits.append(ls.symbols.index(s))
    return int(np.ravel_multi_index(digits, [len(ls) for ls in locals_]))


def recurrent_class(blind_action, config: WirelessConfig, mdp: FactoredMdp | None = None):
    """States where the blind scheduler of user ``blind_action`` (1-based) is stuck.

    The candidate set (``b_a = 0`` and the other users filling the buffer) is
    cross-checked against the closed classes of the induced chain.
    """
    if mdp is None:
        mdp = build_mdp(config)
    n = config.n_users
    a = blind_action - 1
    if not 0 <= a < n:
        raise ModelValidationError(f"blind action must be in 1..{n}")
    buffers = mdp.locals[-1].symbols
    digits = mdp.indexer.digits
    predicted = set()
    for i in range(mdp.n_states):
        b = buffers[digits[i, -1]]
        if b[a] == 0 and sum(b) - b[a] == config.buffer_max:
            predicted.add(i)
    classes, _ = closed_classes(mdp.transition_matrix(constant_map(mdp, a)))
    closed = set()
    for c in classes:
        closed.update(int(i) for i in c)
    if predicted != closed:
        raise ModelValidationError("predicted recurrent class disagrees with reachability analysis")
    return frozenset(predicted)


def example4_config(**kw):
    return WirelessConfig.iid(2, (0, 1, 2, 3), ["1/4"] * 4, (0, 1, 2), ["1/2", "1/3", "1/6"], 3, 0.9, **kw)


def example5_config(**kw):
    return WirelessConfig.iid(2, (0, 1), ["1/2", "1/2"], (0, 1), ["1/2", "1/2"], 2, 0.9, **kw)


def example7_config(**kw):
    return WirelessConfig.iid(
        2, (0, 1, 2, 3, 4), ["1/8", "2/8", "3/8", "1/8", "1/8"], (0, 1, 2), ["1/2", "1/3", "1/6"], 4, 0.9, **kw
    )
