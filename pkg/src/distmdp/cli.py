"""Command line front end: ``distmdp {solve,rate,tradeoff,simulate} --spec FILE``."""

from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction

import numpy as np

from . import coding, interactive, joint, sim
from .errors import DistMdpError, ModelValidationError
from .mdp import candidate_control_set, policy_iteration, state_weighting, value_iteration
from .modelspec import CHOICES, load_spec, parse_grid

log = logging.getLogger("distmdp")


def _g(x):
    return f"{x:.6g}"


def _setting(args, spec, key, default=None):
    v = getattr(args, key, None)
    if v is not None:
        return v
    return spec.run.get(key, default)


def _emit(args, text):
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _solve_core(mdp):
    V = value_iteration(mdp)
    cands = candidate_control_set(mdp, V)
    return V, cands


def _policy(mdp, spec, args, cands):
    which = _setting(args, spec, "policy", "highest")
    if which == "lowest":
        return cands.lowest()
    if which == "highest":
        return cands.highest()
    lam = float(_setting(args, spec, "lambda", 0))
    method = (_setting(args, spec, "method", ["round_robin"]) or ["round_robin"])[0]
    model = joint.AugmentedModel(mdp, lam, _setting(args, spec, "length_model", "huffman"))
    if method == "exhaustive":
        sol = joint.exhaustive_joint_search(model, budget=_setting(args, spec, "budget", 10_000_000))
    else:
        sol = joint.alternate_optimize(model, method, _setting(args, spec, "max_iters", 100))
    return sol.phi


def cmd_solve(args, spec) -> str:
    mdp = spec.build()
    V, cands = _solve_core(mdp)
    phi_pi, V_pi = policy_iteration(mdp)
    v0, v1 = float(mdp.initial @ V), float(mdp.initial @ V_pi)
    out = [
        f"# model {mdp.name}: {mdp.n_states} states, {mdp.n_actions} actions, discount {_g(mdp.discount)}",
        f"value_iteration {v0:.6f}",
        f"policy_iteration {v1:.6f}",
        f"candidate_maps {cands.size()}",
        f"tied_states {int(np.sum(cands.sizes() > 1))}",
        "# state\tvalue\tactions",
    ]
    for i in range(mdp.n_states):
        st = " ".join(str(x) for x in mdp.indexer.state(i))
        acts = ",".join(str(mdp.actions[a]) for a in cands.actions(i))
        out.append(f"{st}\t{_g(V[i])}\t{acts}")
    return "\n".join(out) + "\n"


def _symbols(mdp):
    return [ls.symbols for ls in mdp.locals]


def cmd_rate(args, spec) -> str:
    mdp = spec.build()
    mode = _setting(args, spec, "rate_mode", "noninteractive")
    weighting = _setting(args, spec, "weighting", "stationary")
    lm = _setting(args, spec, "length_model", "huffman")
    V, cands = _solve_core(mdp)
    out = [f"# model {mdp.name}: mode {mode}, weighting {weighting}, length model {lm}"]
    if mode == "noninteractive":
        if _setting(args, spec, "policy") is not None:
            r = coding.noninteractive_rate(mdp, _policy(mdp, spec, args, cands), weighting, lm)
            scope = "fixed map"
        else:
            r = coding.noninteractive_min_rate(mdp, cands, weighting=weighting, length_model=lm,
                                               cap=_setting(args, spec, "budget", 1_000_000))
            scope = "min over candidate maps"
        out += [
            f"scope {scope}",
            f"entropy_rate {r.entropy_rate:.6f}",
            f"huffman_rate {r.huffman_rate:.6f}",
            f"exact {int(r.exact)}",
            r.enc.to_text(mdp).rstrip("\n"),
        ]
        return "\n".join(out) + "\n"

    w = state_weighting(mdp, cands.lowest(), weighting)
    marg = coding.ProductDistribution.from_weights(mdp, w).marginals
    rounds = _setting(args, spec, "rounds", 2)
    if mode == "interactive":
        k = _setting(args, spec, "grid_res")
        grid = interactive.SimplexGrid(mdp.dims, k) if k else None
        b = interactive.interactive_rate_bound(marg, cands, rounds, grid)
        out += [
            f"rounds {b.rounds}",
            f"grid_k {b.k}",
            f"rate_bound {b.rate:.6f}",
            f"joint_entropy {b.joint_entropy:.6f}",
            f"grid_holds_restrictions {int(b.grid_holds_restrictions)}",
            f"approximate {int(b.approximate)}",
        ]
        return "\n".join(out) + "\n"
    pmode = _setting(args, spec, "protocol_mode", "heterogeneous")
    proto, val = interactive.optimal_scalar_protocol(marg, cands, rounds, _setting(args, spec, "max_alphabet"),
                                                     pmode, lm, _setting(args, spec, "budget", 5_000_000))
    out += [f"rounds {rounds}", f"protocol_mode {pmode}", f"expected_bits {_g(val)}"]
    if proto is not None:
        out.append(proto.dump(_symbols(mdp), mdp.actions).rstrip("\n"))
    else:
        out.append("# no protocol finishes within the round limit")
    return "\n".join(out) + "\n"


def cmd_tradeoff(args, spec) -> str:
    mdp = spec.build()
    grid = _setting(args, spec, "lambda_grid", [Fraction(0)])
    methods = _setting(args, spec, "method", ["round_robin"])
    lm = _setting(args, spec, "length_model", "huffman")
    budget = _setting(args, spec, "budget", 10_000_000)
    curves = []
    for method in methods:
        log.info("sweep %s over %d multipliers", method, len(grid))
        curves.append(joint.tradeoff_sweep(mdp, grid, method, lm, budget, _setting(args, spec, "max_iters", 100)))
    merged = joint.TradeoffCurve(
        [p for c in curves for p in c.points],
        curves[0].baseline if curves else [],
        [e for c in curves for e in c.errors],
    )
    return merged.to_csv()


def cmd_simulate(args, spec) -> str:
    mdp = spec.build()
    _, cands = _solve_core(mdp)
    phi = _policy(mdp, spec, args, cands)
    weighting = _setting(args, spec, "weighting", "stationary")
    r = coding.noninteractive_rate(mdp, phi, weighting, _setting(args, spec, "length_model", "huffman"))
    stats = sim.estimate(
        mdp,
        r.phi,
        r.enc,
        episodes=_setting(args, spec, "episodes", 200),
        horizon=_setting(args, spec, "horizon", 1000),
        seed=_setting(args, spec, "seed", 0),
    )
    return sim.stats_csv([stats])


COMMANDS = {"solve": cmd_solve, "rate": cmd_rate, "tradeoff": cmd_tradeoff, "simulate": cmd_simulate}


def _grid_arg(text):
    try:
        return parse_grid(text)
    except ModelValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = argparse.ArgumentParser(prog="distmdp", description="Distributed control of factored MDPs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", required=True, help="model specification file")
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--seed", type=int)
    common.add_argument("--lambda-grid", dest="lambda_grid", type=_grid_arg, help="'0 1 2', '0,1,2' or start:stop:count")
    common.add_argument("--method", type=lambda s: s.replace(",", " ").split(), help="round_robin, greedy, exhaustive")
    common.add_argument("--length-model", dest="length_model", choices=CHOICES["length_model"])
    common.add_argument("--grid-res", dest="grid_res", type=int)
    common.add_argument("--budget", type=int)
    common.add_argument("--weighting", choices=CHOICES["weighting"])
    common.add_argument("--policy", choices=CHOICES["policy"])
    common.add_argument("--lambda", dest="lambda", type=Fraction)
    common.add_argument("--episodes", type=int)
    common.add_argument("--horizon", type=int)
    sub.add_parser("solve", parents=[common], help="optimal value, policy and candidate maps")
    rp = sub.add_parser("rate", parents=[common], help="message rates for the optimal control")
    rp.add_argument("--mode", dest="rate_mode", choices=CHOICES["rate_mode"])
    rp.add_argument("--rounds", type=int)
    rp.add_argument("--protocol-mode", dest="protocol_mode", choices=CHOICES["protocol_mode"])
    rp.add_argument("--max-alphabet", dest="max_alphabet", type=int)
    sub.add_parser("tradeoff", parents=[common], help="reward versus control-bits sweep (CSV)")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo rollouts (CSV)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.method:
        bad = [m for m in args.method if m not in CHOICES["method"]]
        if bad:
            parser.error(f"unknown method {bad[0]!r}")
    try:
        spec = load_spec(args.spec)
        _emit(args, COMMANDS[args.command](args, spec))
    except DistMdpError as exc:
        print(f"distmdp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"distmdp: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
