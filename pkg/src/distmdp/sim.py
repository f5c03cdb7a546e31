"""Monte Carlo rollouts of a control map and encoder pair."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .coding import EncoderVec, require_decodable
from .errors import ModelValidationError
from .mdp import FactoredMdp, check_control_map

Z95 = 1.959963984540054
BURN_IN = 0.2  # long-run rates use the final 80% of each path
N_BATCHES = 20
STATS_CSV_VERSION = "distmdp-rollout v1"
METRICS = ("discounted_reward", "throughput", "drops", "bits", "long_run_throughput", "long_run_drops", "long_run_bits")


def episode_generators(seed, episodes):
    """One independent generator per episode, derived from a single seed."""
    children = np.random.SeedSequence(seed).spawn(episodes)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def _draw(rng, initial, horizon, start):
    # start first, then the path uniforms, so a path never depends on batching
    if start is None:
        s0 = int(min(np.searchsorted(np.cumsum(initial), rng.random(), side="right"), initial.size - 1))
    else:
        s0 = int(start)
    return s0, rng.random(horizon)


def _channel_or_nan(mdp, key):
    return mdp.channels[key] if key in mdp.channels else None


@dataclass
class Trajectory:
    states: np.ndarray  # length horizon + 1
    actions: np.ndarray
    rewards: np.ndarray
    throughput: np.ndarray | None
    drops: np.ndarray | None
    bits: np.ndarray
    discount: float
    tail_bound: float

    @property
    def horizon(self):
        return self.actions.size

    @property
    def discounted_reward(self) -> float:
        return float(np.dot(self.discount ** np.arange(self.horizon), self.rewards))

    def _window(self):
        return int(math.floor(BURN_IN * self.horizon))

    def per_slot(self, key, long_run=False):
        x = {"reward": self.rewards, "throughput": self.throughput, "drops": self.drops, "bits": self.bits}[key]
        if x is None:
            return math.nan
        if long_run:
            x = x[self._window():]
        return float(x.mean()) if x.size else math.nan

    def metrics(self) -> dict:
        return {
            "discounted_reward": self.discounted_reward,
            "throughput": self.per_slot("throughput"),
            "drops": self.per_slot("drops"),
            "bits": self.per_slot("bits"),
            "long_run_throughput": self.per_slot("throughput", True),
            "long_run_drops": self.per_slot("drops", True),
            "long_run_bits": self.per_slot("bits", True),
        }


def _trajectories(mdp, phi, enc, paths):
    S = mdp.n_states
    bits_of = enc.state_bits(mdp)
    r_max = float(np.max(np.abs(mdp.reward))) if mdp.reward.size else 0.0
    T = paths.shape[1] - 1
    tail = mdp.discount**T * r_max / (1.0 - mdp.discount)
    thr = _channel_or_nan(mdp, "throughput")
    drp = _channel_or_nan(mdp, "drops")
    out = []
    for path in paths:
        s, s1 = path[:-1], path[1:]
        a = phi[s]
        out.append(
            Trajectory(
                states=path,
                actions=a,
                rewards=mdp.reward[a, s, s1],
                throughput=None if thr is None else thr[a, s, s1],
                drops=None if drp is None else drp[a, s, s1],
                bits=bits_of[s],
                discount=mdp.discount,
                tail_bound=tail,
            )
        )
    assert all(0 <= t.states.min() and t.states.max() < S for t in out)
    return out


def _prepare(mdp, phi, enc, horizon):
    if horizon < 1:
        raise ModelValidationError("horizon must be at least 1")
    phi = check_control_map(mdp, phi)
    require_decodable(mdp, phi, enc)
    cum = np.cumsum(mdp.transition_matrix(phi), axis=1)
    return phi, np.ascontiguousarray(cum)


def rollout(mdp: FactoredMdp, phi, enc: EncoderVec, horizon=1000, seed=None, rng=None, start=None) -> Trajectory:
    """Simulate one path of ``horizon`` slots.

    Pass either ``seed`` or an explicit ``rng``; with neither the path uses
    seed 0 so that results are always reproducible.
    """
    phi, cum = _prepare(mdp, phi, enc, horizon)
    if rng is None:
        rng = episode_generators(0 if seed is None else seed, 1)[0]
    s0, u = _draw(rng, mdp.initial, horizon, start)
    paths = kernels.simulate_paths(cum, np.array([s0], dtype=np.int64), u[None, :])
    return _trajectories(mdp, phi, enc, paths)[0]


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float  # 95% normal interval

    @property
    def lo(self):
        return self.mean - self.half_width

    @property
    def hi(self):
        return self.mean + self.half_width

    @property
    def se(self):
        return self.half_width / Z95

    def contains(self, x) -> bool:
        return self.lo <= x <= self.hi


def _estimate(values) -> Estimate:
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.all(np.isnan(v)):
        return Estimate(math.nan, math.nan)
    m = float(v.mean())
    if v.size < 2:
        return Estimate(m, math.nan)
    return Estimate(m, Z95 * float(v.std(ddof=1)) / math.sqrt(v.size))


def _batch_means(x, n_batches=N_BATCHES):
    # single long path: interval from means of contiguous batches
    if x is None:
        return Estimate(math.nan, math.nan)
    size = x.size // n_batches
    if size == 0:
        return _estimate([x.mean()] if x.size else [])
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return Estimate(float(x.mean()), _estimate(means).half_width)


@dataclass
class RolloutStats:
    episodes: int
    horizon: int
    seed: object
    stats: dict = field(default_factory=dict)  # metric name -> Estimate
    tail_bound: float = 0.0
    model_id: str = ""
    phi_id: str = ""
    enc_id: str = ""

    def __getitem__(self, key) -> Estimate:
        return self.stats[key]

    def row(self) -> dict:
        out = {"model_id": self.model_id, "phi_id": self.phi_id, "enc_id": self.enc_id, "seed": self.seed,
               "episodes": self.episodes, "horizon": self.horizon}
        for k in METRICS:
            out[k] = self.stats[k].mean
            out[k + "_ci"] = self.stats[k].half_width
        out["tail_bound"] = self.tail_bound
        return out


def _short_hash(*parts) -> str:
    h = hashlib.sha1()
    for p in parts:
        h.update(np.ascontiguousarray(p).tobytes() if isinstance(p, np.ndarray) else repr(p).encode())
    return h.hexdigest()[:10]


def model_id(mdp: FactoredMdp) -> str:
    return mdp.name or _short_hash(mdp.kernel, mdp.reward, mdp.initial, mdp.discount)


def phi_id(phi) -> str:
    return _short_hash(np.asarray(phi, dtype=np.int64))


def enc_id(enc: EncoderVec) -> str:
    return _short_hash(enc.length_model, *[np.asarray(c, dtype=np.int64) for c in enc.colors])


def estimate(mdp: FactoredMdp, phi, enc: EncoderVec, episodes=200, horizon=1000, seed=0, start=None, chunk=256) -> RolloutStats:
    """Aggregate independent seeded episodes into means with 95% intervals."""
    if episodes < 1:
        raise ModelValidationError("episodes must be at least 1")
    phi, cum = _prepare(mdp, phi, enc, horizon)
    gens = episode_generators(seed, episodes)
    per = {k: [] for k in METRICS}
    trajs_last = None
    for lo in range(0, episodes, chunk):
        batch = gens[lo : lo + chunk]
        draws = [_draw(g, mdp.initial, horizon, start) for g in batch]
        starts = np.array([d[0] for d in draws], dtype=np.int64)
        u = np.stack([d[1] for d in draws])
        paths = kernels.simulate_paths(cum, starts, u)
        trajs = _trajectories(mdp, phi, enc, paths)
        for t in trajs:
            for k, v in t.metrics().items():
                per[k].append(v)
        trajs_last = trajs
    if episodes == 1:
        t = trajs_last[0]
        w = t._window()
        stats = {"discounted_reward": Estimate(t.discounted_reward, math.nan)}
        for key in ("throughput", "drops", "bits"):
            x = getattr(t, key)
            stats[key] = _batch_means(x)
            stats["long_run_" + key] = _batch_means(None if x is None else x[w:])
    else:
        stats = {k: _estimate(v) for k, v in per.items()}
    return RolloutStats(
        episodes=episodes,
        horizon=horizon,
        seed=seed,
        stats=stats,
        tail_bound=trajs_last[0].tail_bound,
        model_id=model_id(mdp),
        phi_id=phi_id(phi),
        enc_id=enc_id(enc),
    )


def state_frequencies(states, n_states) -> np.ndarray:
    return np.bincount(np.asarray(states), minlength=n_states) / len(states)


STATS_COLUMNS = ["model_id", "phi_id", "enc_id", "seed", "episodes", "horizon"] + [
    c for k in METRICS for c in (k, k + "_ci")
] + ["tail_bound"]


def stats_csv(rows) -> str:
    """CSV text for a list of RolloutStats, floats at 6 significant digits."""
    lines = ["# " + STATS_CSV_VERSION, ",".join(STATS_COLUMNS)]
    for r in rows:
        d = r.row()
        lines.append(",".join(f"{d[c]:.6g}" if isinstance(d[c], float) else str(d[c]) for c in STATS_COLUMNS))
    return "\n".join(lines) + "\n"
