"""Joint design of control map and message encoder under a per-bit penalty.

The objective is the discounted reward with every transition charged
``lam * |e(s)|``, the number of message bits sent in the current state.
Because the charge depends only on the state, it is folded into the
one-step reward, and the objective is the occupancy row ``pi (I - beta P)^-1``
dotted with that penalized reward.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .coding import EncoderVec, decodable, mis_encoder, project_control
from .errors import BudgetExceededError, InfeasiblePairError, ModelValidationError
from .mdp import (
    FactoredMdp,
    check_control_map,
    constant_map,
    discounted_occupancy,
    extract_policy,
    long_run_distribution,
    policy_iteration,
    value_iteration,
)

ACCEPT_TOL = 1e-10
NASH_TOL = 1e-9
CSV_VERSION = "distmdp-tradeoff v1"
CSV_COLUMNS = (
    "lambda", "method", "reward", "throughput", "drops", "bits", "converged", "nash_ok",
    "long_run_throughput", "long_run_drops", "long_run_bits", "length_model", "negative",
)


@dataclass(frozen=True, eq=False)
class AugmentedModel:
    mdp: FactoredMdp
    lam: float = 0.0
    length_model: str = "huffman"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ModelValidationError("lambda must be >= 0")
        if self.length_model not in ("huffman", "entropy"):
            raise ModelValidationError(f"unknown length model {self.length_model!r}")

    def with_lambda(self, lam):
        return AugmentedModel(self.mdp, lam, self.length_model)

    def state_cost(self, enc: EncoderVec) -> np.ndarray:
        return self.lam * enc.with_length_model(self.length_model).state_bits(self.mdp)

    def penalized_rewards(self, enc: EncoderVec) -> np.ndarray:
        """(A, S) one-step reward minus the bit charge of the state."""
        return self.mdp.expected_reward - self.state_cost(enc)[None, :]


@dataclass(eq=False)
class JointSolution:
    phi: np.ndarray
    enc: EncoderVec
    reward: float
    throughput: float
    drops: float
    bits: float
    long_run_throughput: float
    long_run_drops: float
    long_run_bits: float
    lam: float
    length_model: str
    method: str
    reward_trace: list = field(default_factory=list)
    converged: bool = True
    nash_ok: bool | None = None
    iterations: int = 0

    @property
    def negative(self) -> bool:
        return self.reward < 0


def augmented_expected_reward(model: AugmentedModel, phi, enc: EncoderVec) -> float:
    mdp = model.mdp
    phi = check_control_map(mdp, phi)
    ok, _ = decodable(mdp, phi, enc)
    if not ok:
        raise InfeasiblePairError("control map is not a function of the encoder's messages")
    w = discounted_occupancy(mdp, phi).weights
    r = model.penalized_rewards(enc)[phi, np.arange(mdp.n_states)]
    return float(w @ r)


def _channel(mdp, key):
    if key in mdp.channels:
        return mdp.expected_channel(key)
    if key == "throughput":
        return mdp.expected_reward
    return np.zeros((mdp.n_actions, mdp.n_states))


def evaluate(model: AugmentedModel, phi, enc: EncoderVec, method="", trace=None, converged=True, iterations=0):
    """Objective plus per-slot throughput, drops and bits, discounted and long-run."""
    mdp = model.mdp
    phi = check_control_map(mdp, phi)
    J = augmented_expected_reward(model, phi, enc)
    states = np.arange(mdp.n_states)
    w = discounted_occupancy(mdp, phi, normalized=True).weights
    mu = long_run_distribution(mdp.transition_matrix(phi), mdp.initial)
    thr = _channel(mdp, "throughput")[phi, states]
    drp = _channel(mdp, "drops")[phi, states]
    bits = enc.with_length_model(model.length_model).state_bits(mdp)
    return JointSolution(
        phi, enc, J, float(w @ thr), float(w @ drp), float(w @ bits),
        float(mu @ thr), float(mu @ drp), float(mu @ bits),
        model.lam, model.length_model, method, list(trace or [J]), converged, None, iterations,
    )


# --------------------------------------------------------------------------
# encoder step


def quantizer_update(model: AugmentedModel, phi):
    """Fewest-bits valid encoder for ``phi`` under its own occupancy weighting.

    Returns ``(enc, phi)``; ``phi`` is only altered on states of zero
    occupancy, where it is made constant on message fibers.
    """
    mdp = model.mdp
    phi = check_control_map(mdp, phi)
    w = discounted_occupancy(mdp, phi).weights
    enc, dist = mis_encoder(mdp, phi, w, model.length_model)
    phi2, _ = project_control(mdp, phi, enc, dist.support_mask())
    return enc, phi2


# --------------------------------------------------------------------------
# control step


def message_fibers(mdp: FactoredMdp, enc: EncoderVec):
    """States grouped by message tuple, fibers in lexicographic message order."""
    ids = enc.message_ids(mdp)
    order = np.argsort(ids, kind="stable")
    uniq, starts = np.unique(ids[order], return_index=True)
    ptr = np.append(starts, ids.size).astype(np.int64)
    return uniq, ptr, order.astype(np.int64)


class _Evaluator:
    """Cached inverse of ``I - beta P(phi)`` for fast fiber deviations."""

    def __init__(self, model: AugmentedModel, enc: EncoderVec, phi):
        self.mdp = model.mdp
        self.cexp = np.ascontiguousarray(model.penalized_rewards(enc))
        self.kernel = np.ascontiguousarray(self.mdp.kernel)
        self.set_phi(phi)

    def set_phi(self, phi):
        mdp = self.mdp
        self.phi = np.ascontiguousarray(phi, dtype=np.int64)
        P = mdp.kernel[self.phi, np.arange(mdp.n_states)]
        self.Minv = np.linalg.inv(np.eye(mdp.n_states) - mdp.discount * P)
        self.w = mdp.initial @ self.Minv
        self.V = self.Minv @ self.cexp[self.phi, np.arange(mdp.n_states)]
        self.J = float(mdp.initial @ self.V)

    def gains(self, ptr, states):
        return kernels.fiber_gains(
            self.kernel, self.cexp, self.phi, self.Minv, self.w, self.V,
            np.ascontiguousarray(ptr, dtype=np.int64), np.ascontiguousarray(states, dtype=np.int64), self.mdp.discount,
        )


def _accept(gain, J):
    return gain > ACCEPT_TOL * max(1.0, abs(J))


def coordinate_control_update(model: AugmentedModel, enc: EncoderVec, phi0, order="round_robin", max_passes=1000, trace=None):
    """Re-optimize the action of one message fiber at a time until no fiber moves.

    ``round_robin`` sweeps fibers in message order; ``greedy`` applies the
    single best fiber change each step (ties: lowest fiber, then lowest action).
    """
    if order not in ("round_robin", "greedy"):
        raise ValueError("order must be 'round_robin' or 'greedy'")
    mdp = model.mdp
    phi = check_control_map(mdp, phi0).copy()
    if not decodable(mdp, phi, enc)[0]:
        raise InfeasiblePairError("starting control map is not constant on message fibers")
    _, ptr, states = message_fibers(mdp, enc)
    ev = _Evaluator(model, enc, phi)
    F = ptr.size - 1
    for _ in range(max_passes):
        moved = False
        if order == "greedy":
            g = ev.gains(ptr, states)
            f, a = np.unravel_index(int(np.argmax(g)), g.shape)
            if _accept(g[f, a], ev.J):
                phi[states[ptr[f] : ptr[f + 1]]] = a
                ev.set_phi(phi)
                moved = True
                if trace is not None:
                    trace.append(ev.J)
        else:
            for f in range(F):
                sub = states[ptr[f] : ptr[f + 1]]
                g = ev.gains(np.array([0, sub.size]), sub)[0]
                a = int(np.argmax(g))
                if _accept(g[a], ev.J):
                    phi[sub] = a
                    ev.set_phi(phi)
                    moved = True
                    if trace is not None:
                        trace.append(ev.J)
        if not moved:
            return phi
    return phi


def control_update(model: AugmentedModel, enc: EncoderVec, phi0=None, budget=100_000):
    """Best control map that is a function of ``enc``'s messages.

    Singleton fibers reduce to an ordinary MDP with penalized rewards; small
    message alphabets are enumerated; otherwise coordinate updates are used.
    """
    mdp = model.mdp
    uniq, ptr, states = message_fibers(mdp, enc)
    F = uniq.size
    cexp = model.penalized_rewards(enc)
    if F == mdp.n_states:
        penal = FactoredMdp(
            mdp.locals, mdp.actions, mdp.kernel,
            mdp.reward - model.state_cost(enc)[None, :, None], mdp.discount, mdp.initial, name=mdp.name,
        )
        return policy_iteration(penal)[0]
    if mdp.n_actions ** F <= budget:
        fiber_of = np.empty(mdp.n_states, dtype=np.int64)
        for f in range(F):
            fiber_of[states[ptr[f] : ptr[f + 1]]] = f
        best = None
        eye = np.eye(mdp.n_states)
        s_idx = np.arange(mdp.n_states)
        for table in itertools.product(range(mdp.n_actions), repeat=F):
            phi = np.asarray(table, dtype=np.int64)[fiber_of]
            P = mdp.kernel[phi, s_idx]
            w = np.linalg.solve((eye - mdp.discount * P).T, mdp.initial)
            J = float(w @ cexp[phi, s_idx])
            if best is None or J > best[0] + ACCEPT_TOL * max(1.0, abs(best[0])):
                best = (J, phi)
        return best[1]
    if phi0 is None:
        phi0 = np.zeros(mdp.n_states, dtype=np.int64)
    return coordinate_control_update(model, enc, phi0, "round_robin")


# --------------------------------------------------------------------------
# alternating optimization


def initial_pair(model: AugmentedModel):
    """Unpenalized optimal map (lowest-index ties) with every node relaying its full state."""
    mdp = model.mdp
    phi = extract_policy(mdp, value_iteration(mdp))
    w = discounted_occupancy(mdp, phi, normalized=True).weights
    enc = EncoderVec.identity(mdp, mdp.local_marginals(w), model.length_model)
    return phi, enc


def alternate_optimize(model: AugmentedModel, order="round_robin", max_iters=100, init=None) -> JointSolution:
    """Alternate fiber-wise control updates and encoder updates until neither moves."""
    phi, enc = initial_pair(model) if init is None else init
    J = augmented_expected_reward(model, phi, enc)
    trace = [J]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        phi_new = coordinate_control_update(model, enc, phi, order, trace=trace)
        enc_new, phi_new = quantizer_update(model, phi_new)
        J_new = augmented_expected_reward(model, phi_new, enc_new)
        trace.append(J_new)
        same = np.array_equal(phi_new, phi) and enc_new.same_partition(enc)
        phi, enc, J = phi_new, enc_new, J_new
        if same:
            converged = True
            break
    method = order
    return evaluate(model, phi, enc, method, trace, converged, it)


def nash_check(model: AugmentedModel, solution: JointSolution):
    """Look for a single-fiber action change or an encoder change that raises the objective.

    Returns ``(ok, violations)``; each violation is a dict naming the deviation.
    """
    mdp = model.mdp
    phi, enc = solution.phi, solution.enc
    violations = []
    ev = _Evaluator(model, enc, phi)
    tol = NASH_TOL * max(1.0, abs(ev.J))
    uniq, ptr, states = message_fibers(mdp, enc)
    g = ev.gains(ptr, states)
    shape = enc.n_colors
    for f, a in zip(*np.nonzero(g > tol)):
        msg = tuple(int(x) for x in np.unravel_index(int(uniq[f]), shape))
        violations.append({"kind": "control", "message": msg, "action": mdp.actions[a], "gain": float(g[f, a])})
    best_enc, phi_p = quantizer_update(model, phi)
    J_enc = augmented_expected_reward(model, phi_p, best_enc)
    if J_enc > ev.J + tol:
        violations.append({"kind": "encoder", "gain": J_enc - ev.J})
    return not violations, violations


# --------------------------------------------------------------------------
# exhaustive search and sweeps


def _exhaustive_raw(mdp: FactoredMdp, lambdas, budget, refresh=256):
    S, A = mdp.n_states, mdp.n_actions
    total = A ** S
    if total > budget:
        raise BudgetExceededError(
            f"{A}^{S} = {total} control maps exceed the budget {budget}; use alternate_optimize instead"
        )
    choices = np.tile(np.arange(A, dtype=np.int64), (S, 1))
    n_choices = np.full(S, A, dtype=np.int64)
    return kernels.exhaustive_search(
        np.ascontiguousarray(mdp.kernel), np.ascontiguousarray(mdp.expected_reward), np.ascontiguousarray(mdp.initial),
        float(mdp.discount), np.ascontiguousarray(mdp.indexer.digits, dtype=np.int64),
        np.array(mdp.dims, dtype=np.int64), choices, n_choices, np.asarray(lambdas, dtype=float), refresh,
    )


def _model_index(length_model):
    return 0 if length_model == "entropy" else 1


def exhaustive_joint_search(model: AugmentedModel, budget=10_000_000) -> JointSolution:
    """Global optimum over all control maps, each paired with its fewest-bits encoder."""
    return exhaustive_sweep(model.mdp, [model.lam], model.length_model, budget)[0]


def exhaustive_sweep(mdp: FactoredMdp, lambdas, length_model="huffman", budget=10_000_000):
    """One enumeration shared by every ``lambda``; ties prefer fewer bits, then the lowest map."""
    lambdas = [float(x) for x in lambdas]
    best_phi, best_J, _, _, _ = _exhaustive_raw(mdp, lambdas, budget)
    m = _model_index(length_model)
    out = []
    for l, lam in enumerate(lambdas):
        model = AugmentedModel(mdp, lam, length_model)
        enc, phi = quantizer_update(model, best_phi[l, m])
        sol = evaluate(model, phi, enc, "exhaustive")
        if abs(sol.reward - best_J[l, m]) > 1e-6 * max(1.0, abs(sol.reward)):
            raise ArithmeticError(f"enumeration and direct evaluation disagree at lambda={lam}")
        out.append(sol)
    return out


def blind_baseline(model: AugmentedModel) -> JointSolution:
    """Best constant map; it needs no messages at all."""
    mdp = model.mdp
    enc = EncoderVec.constant(mdp, model.length_model)
    best = None
    for a in range(mdp.n_actions):
        phi = constant_map(mdp, a)
        J = augmented_expected_reward(model, phi, enc)
        if best is None or J > best[0] + ACCEPT_TOL * max(1.0, abs(best[0])):
            best = (J, phi)
    return evaluate(model, best[1], enc, "blind")


@dataclass
class TradeoffCurve:
    points: list
    baseline: list
    errors: list = field(default_factory=list)

    def rows(self, include_baseline=True):
        items = list(self.points) + (list(self.baseline) if include_baseline else [])
        return [_row(s) for s in items]

    def to_csv(self, include_baseline=True) -> str:
        buf = io.StringIO()
        buf.write(f"# {CSV_VERSION}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows(include_baseline):
            writer.writerow(row)
        for lam, method, msg in self.errors:
            buf.write(f"# error lambda={_g(lam)} method={method}: {msg}\n")
        return buf.getvalue()


def _g(x):
    return f"{x:.6g}"


def _row(s: JointSolution):
    return (
        _g(s.lam), s.method, _g(s.reward), _g(s.throughput), _g(s.drops), _g(s.bits), int(bool(s.converged)),
        "" if s.nash_ok is None else int(bool(s.nash_ok)),
        _g(s.long_run_throughput), _g(s.long_run_drops), _g(s.long_run_bits), s.length_model, int(s.negative),
    )


def tradeoff_sweep(mdp: FactoredMdp, lambda_grid, method="round_robin", length_model="huffman", budget=10_000_000, max_iters=100, check_nash=True):
    """One solution per ``lambda`` plus the zero-message baseline row for each."""
    if method not in ("exhaustive", "round_robin", "greedy"):
        raise ValueError("method must be exhaustive, round_robin or greedy")
    lambdas = [float(x) for x in lambda_grid]
    points, errors = [], []
    if method == "exhaustive":
        try:
            points = exhaustive_sweep(mdp, lambdas, length_model, budget)
        except BudgetExceededError as exc:
            errors = [(lam, method, str(exc)) for lam in lambdas]
    else:
        for lam in lambdas:
            model = AugmentedModel(mdp, lam, length_model)
            try:
                points.append(alternate_optimize(model, method, max_iters))
            except BudgetExceededError as exc:
                errors.append((lam, method, str(exc)))
    if check_nash:
        for s in points:
            s.nash_ok = nash_check(AugmentedModel(mdp, s.lam, length_model), s)[0]
    baseline = [blind_baseline(AugmentedModel(mdp, lam, length_model)) for lam in lambdas]
    return TradeoffCurve(points, baseline, errors)
