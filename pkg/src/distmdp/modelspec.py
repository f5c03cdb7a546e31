"""Plain-text model specifications.

A spec is a list of ``[section]`` blocks with ``key = value`` lines.
Exactly one model section is required:

``[wireless]``  downlink scheduling generator::

    users = 2
    channel_support = 0 1 2 3
    channel_probs = 1/4 1/4 1/4 1/4        # i.i.d. channels, or
    channel_transition.2 = 1/2 1/2 ; 1/4 3/4 # per-user Markov rows
    arrival_support = 0 1 2
    arrival_probs = 1/2 1/3 1/6
    buffer_max = 3
    discount = 9/10

``[argmax]``  independent nodes, action ``a`` earns node ``a``'s value::

    supports = 0 1          # shared, or supports.2 = ...
    probs.1 = 1/3 2/3

``[mdp]``  explicit tables, states indexed lexicographically::

    discount = 9/10
    node 1 = a b
    node 2 = 0 1 2
    actions = 1 2
    initial_state = a 0
    kernel 1 0 = 1/2 1/2 0 0 0 0       # dense row, or sparse "j:p" tokens
    reward 1 0 = 1                      # one value, or a full row
    channel throughput 1 0 = 1

An optional ``[run]`` block carries run parameters.  Numbers may be written
as rationals (``1/3``); they are kept exact until the model is built.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .coding import argmax_mdp
from .errors import ModelValidationError
from .mdp import FactoredMdp, LocalStateSpace, StateIndexer
from .wireless import WirelessConfig, build_mdp

MODEL_SECTIONS = ("wireless", "argmax", "mdp")

RUN_KEYS = {
    "name": str,
    "lambda_grid": "grid",
    "method": "list",
    "length_model": str,
    "grid_res": int,
    "seed": int,
    "budget": int,
    "episodes": int,
    "horizon": int,
    "weighting": str,
    "rate_mode": str,
    "rounds": int,
    "max_alphabet": int,
    "protocol_mode": str,
    "policy": str,
    "lambda": Fraction,
    "max_iters": int,
}

CHOICES = {
    "length_model": ("huffman", "entropy"),
    "weighting": ("stationary", "occupancy"),
    "rate_mode": ("noninteractive", "interactive", "scalar-protocol"),
    "protocol_mode": ("heterogeneous", "homogeneous"),
    "policy": ("lowest", "highest", "joint"),
    "method": ("round_robin", "greedy", "exhaustive"),
}


def number(tok, line=None) -> Fraction:
    try:
        return Fraction(tok)
    except (ValueError, ZeroDivisionError):
        raise ModelValidationError(f"not a number: {tok!r}", line=line) from None


def fmt_number(x: Fraction) -> str:
    return str(x)


def symbol(tok):
    """Integers stay integers; tuples like ``(0,1)`` become tuples; anything else is a string."""
    if re.fullmatch(r"[+-]?\d+", tok):
        return int(tok)
    m = re.fullmatch(r"\(([^()]*)\)", tok)
    if m:
        inner = [t for t in m.group(1).replace(" ", "").split(",") if t]
        return tuple(symbol(t) for t in inner)
    return tok


def fmt_symbol(s) -> str:
    if isinstance(s, tuple):
        return "(" + ",".join(fmt_symbol(x) for x in s) + ")"
    return str(s)


def parse_grid(text, line=None) -> list:
    """``0 1 2``, ``0,1,2`` or ``start:stop:count`` (inclusive, evenly spaced)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ModelValidationError(f"grid range must be start:stop:count, got {text!r}", line=line)
        a, b = number(parts[0], line), number(parts[1], line)
        n = int(parts[2])
        if n < 1:
            raise ModelValidationError("grid count must be positive", line=line)
        if n == 1:
            return [a]
        return [a + (b - a) * Fraction(k, n - 1) for k in range(n)]
    vals = [number(t, line) for t in re.split(r"[,\s]+", text) if t]
    if not vals:
        raise ModelValidationError("empty grid", line=line)
    return vals


def _tokens(v):
    return v.split()


def _prob_row(tokens, line, what):
    row = [number(t, line) for t in tokens]
    if not row or any(x < 0 for x in row) or sum(row) != 1:
        total = float(sum(row)) if row else 0.0
        # exact rationals must sum to one; decimal literals get float slack
        if not row or any(x < 0 for x in row) or abs(total - 1.0) > 1e-9:
            raise ModelValidationError(f"{what} is not a probability vector (sums to {total:.12g})", line=line)
    return row


@dataclass
class ModelSpec:
    kind: str
    model: dict
    run: dict = field(default_factory=dict)
    name: str = ""

    # ------------------------------------------------------------------
    def build(self) -> FactoredMdp:
        name = self.name or self.run.get("name") or self.kind
        if self.kind == "wireless":
            return build_mdp(self.wireless_config(), initial_state=self._wireless_initial(), name=name)
        if self.kind == "argmax":
            m = self.model
            return argmax_mdp(m["supports"], float(m.get("discount", 0)), [[float(x) for x in p] for p in m["probs"]], name=name)
        return self._build_raw(name)

    def wireless_config(self) -> WirelessConfig:
        m = self.model
        kw = {}
        if "max_states" in m:
            kw["max_states"] = m["max_states"]
        return WirelessConfig(
            m["users"],
            tuple(tuple(s) for s in m["channel_support"]),
            tuple(np.array([[float(x) for x in r] for r in mat]) for mat in m["channel_transition"]),
            tuple(m["arrival_support"]),
            tuple(float(x) for x in m["arrival_probs"]),
            m["buffer_max"],
            float(m.get("discount", Fraction(9, 10))),
            **kw,
        )

    def _wireless_initial(self):
        st = self.model.get("initial_state")
        if st is None:
            return None
        n = self.model["users"]
        return tuple(st[:n]) + (tuple(st[n:]),)

    def _build_raw(self, name):
        m = self.model
        locals_ = [LocalStateSpace(k + 1, syms) for k, syms in enumerate(m["nodes"])]
        idx = StateIndexer(locals_)
        S = math.prod(len(ls) for ls in locals_)
        A = len(m["actions"])
        kernel = np.zeros((A, S, S))
        reward = np.zeros((A, S, S))
        for (a, i), row in m["kernel"].items():
            kernel[a, i] = [float(x) for x in row]
        for (a, i), row in m["reward"].items():
            reward[a, i] = [float(x) for x in row]
        channels = {}
        for (key, a, i), row in m["channels"].items():
            channels.setdefault(key, np.zeros((A, S, S)))[a, i] = [float(x) for x in row]
        if "initial" in m:
            initial = np.array([float(x) for x in m["initial"]])
        else:
            initial = np.zeros(S)
            initial[idx.index(tuple(m.get("initial_state", [ls.symbols[0] for ls in locals_])))] = 1.0
        return FactoredMdp(locals_, tuple(m["actions"]), kernel, reward, float(m["discount"]), initial,
                           bool(m.get("independence", False)), channels, name=name)

    # ------------------------------------------------------------------
    def serialize(self) -> str:
        out = [f"[{self.kind}]"]
        m = self.model
        if self.kind == "wireless":
            out.append(f"users = {m['users']}")
            for u in range(m["users"]):
                out.append(f"channel_support.{u + 1} = " + " ".join(map(str, m["channel_support"][u])))
                rows = [" ".join(map(fmt_number, r)) for r in m["channel_transition"][u]]
                out.append(f"channel_transition.{u + 1} = " + " ; ".join(rows))
            out.append("arrival_support = " + " ".join(map(str, m["arrival_support"])))
            out.append("arrival_probs = " + " ".join(map(fmt_number, m["arrival_probs"])))
            out.append(f"buffer_max = {m['buffer_max']}")
            out.append(f"discount = {fmt_number(m['discount'])}")
            if "initial_state" in m:
                out.append("initial_state = " + " ".join(map(str, m["initial_state"])))
            if "max_states" in m:
                out.append(f"max_states = {m['max_states']}")
        elif self.kind == "argmax":
            for k, (s, p) in enumerate(zip(m["supports"], m["probs"])):
                out.append(f"supports.{k + 1} = " + " ".join(map(str, s)))
                out.append(f"probs.{k + 1} = " + " ".join(map(fmt_number, p)))
            out.append(f"discount = {fmt_number(m.get('discount', Fraction(0)))}")
        else:
            out.append(f"discount = {fmt_number(m['discount'])}")
            for k, syms in enumerate(m["nodes"]):
                out.append(f"node {k + 1} = " + " ".join(map(fmt_symbol, syms)))
            out.append("actions = " + " ".join(map(fmt_symbol, m["actions"])))
            if m.get("independence"):
                out.append("independence = true")
            if "initial" in m:
                out.append("initial = " + " ".join(map(fmt_number, m["initial"])))
            elif "initial_state" in m:
                out.append("initial_state = " + " ".join(map(fmt_symbol, m["initial_state"])))
            acts = m["actions"]
            for (a, i), row in sorted(m["kernel"].items()):
                out.append(f"kernel {fmt_symbol(acts[a])} {i} = {_fmt_row(row)}")
            for (a, i), row in sorted(m["reward"].items()):
                out.append(f"reward {fmt_symbol(acts[a])} {i} = {_fmt_row(row)}")
            for (key, a, i), row in sorted(m["channels"].items()):
                out.append(f"channel {key} {fmt_symbol(acts[a])} {i} = {_fmt_row(row)}")
        if self.run:
            out.append("")
            out.append("[run]")
            for k, v in self.run.items():
                if k == "lambda_grid":
                    v = " ".join(map(fmt_number, v))
                elif k == "method":
                    v = " ".join(v)
                elif isinstance(v, Fraction):
                    v = fmt_number(v)
                out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"


def _fmt_row(row):
    if len(set(row)) == 1:
        return fmt_number(row[0])
    nz = [(j, x) for j, x in enumerate(row) if x != 0]
    if len(nz) * 2 < len(row):
        return " ".join(f"{j}:{fmt_number(x)}" for j, x in nz)
    return " ".join(map(fmt_number, row))


def _split_lines(text):
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield n, line


def parse_spec(text: str) -> ModelSpec:
    """Parse spec text; every problem is reported with its line number."""
    sections = {}
    order = []
    current = None
    for n, line in _split_lines(text):
        m = re.fullmatch(r"\[\s*([A-Za-z_-]+)\s*\]", line)
        if m:
            current = m.group(1).lower()
            if current not in MODEL_SECTIONS + ("run",):
                raise ModelValidationError(f"unknown section [{current}]", line=n)
            if current in sections:
                raise ModelValidationError(f"section [{current}] appears twice", line=n)
            sections[current] = []
            order.append((current, n))
            continue
        if current is None:
            raise ModelValidationError("content before the first [section]", line=n)
        if "=" not in line:
            raise ModelValidationError(f"expected 'key = value', got {line!r}", line=n)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ModelValidationError("empty key", line=n)
        sections[current].append((n, key, value))
    kinds = [s for s, _ in order if s in MODEL_SECTIONS]
    if len(kinds) != 1:
        where = order[1][1] if len(kinds) > 1 else None
        raise ModelValidationError("exactly one of [wireless], [argmax], [mdp] is required", line=where)
    kind = kinds[0]
    parser = {"wireless": _parse_wireless, "argmax": _parse_argmax, "mdp": _parse_mdp}[kind]
    model = parser(sections[kind])
    run = _parse_run(sections.get("run", []))
    spec = ModelSpec(kind, model, run, name=run.get("name", ""))
    return spec


def load_spec(path) -> ModelSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


def _indexed(key, base, line):
    # "base" or "base.k" -> None or k-1
    if key == base:
        return None
    m = re.fullmatch(re.escape(base) + r"\.(\d+)", key)
    if not m:
        return False
    k = int(m.group(1))
    if k < 1:
        raise ModelValidationError(f"index in {key!r} must be >= 1", line=line)
    return k - 1


def _per_user(entries, n_users, what, line_of):
    shared = entries.get(None)
    out = []
    for u in range(n_users):
        v = entries.get(u, shared)
        if v is None:
            raise ModelValidationError(f"missing {what} for user {u + 1}", line=line_of)
        out.append(v)
    extra = [u for u in entries if u is not None and u >= n_users]
    if extra:
        raise ModelValidationError(f"{what}.{extra[0] + 1} refers to a missing user", line=line_of)
    return out


def _int(tok, line, what):
    try:
        return int(tok)
    except ValueError:
        raise ModelValidationError(f"{what} must be an integer, got {tok!r}", line=line) from None


def _parse_wireless(entries):
    m = {}
    supports, probs, trans = {}, {}, {}
    last = entries[-1][0] if entries else None
    seen = set()
    for n, key, v in entries:
        if key in seen and "." not in key:
            raise ModelValidationError(f"duplicate key {key!r}", line=n)
        seen.add(key)
        if key == "users":
            m["users"] = _int(v, n, "users")
            if m["users"] < 1:
                raise ModelValidationError("users must be >= 1", line=n)
        elif key in ("buffer_max", "max_states"):
            m[key] = _int(v, n, key)
        elif key == "discount":
            m["discount"] = number(v, n)
            if not 0 <= m["discount"] < 1:
                raise ModelValidationError("discount must lie in [0, 1)", line=n)
        elif key == "arrival_support":
            m["arrival_support"] = [_int(t, n, key) for t in _tokens(v)]
        elif key == "arrival_probs":
            m["arrival_probs"] = _prob_row(_tokens(v), n, "arrival_probs")
        elif key == "initial_state":
            m["initial_state"] = [_int(t, n, key) for t in _tokens(v)]
        elif (u := _indexed(key, "channel_support", n)) is not False:
            supports[u] = [_int(t, n, key) for t in _tokens(v)]
        elif (u := _indexed(key, "channel_probs", n)) is not False:
            probs[u] = (_prob_row(_tokens(v), n, key), n)
        elif (u := _indexed(key, "channel_transition", n)) is not False:
            rows = [_prob_row(_tokens(r), n, f"{key} row {k + 1}") for k, r in enumerate(v.split(";"))]
            trans[u] = (rows, n)
        else:
            raise ModelValidationError(f"unknown [wireless] key {key!r}", line=n)
    for req in ("users", "arrival_support", "arrival_probs", "buffer_max"):
        if req not in m:
            raise ModelValidationError(f"[wireless] is missing {req!r}", line=last)
    N = m["users"]
    m["channel_support"] = _per_user(supports, N, "channel_support", last)
    mats = []
    for u in range(N):
        d = len(m["channel_support"][u])
        if u in trans or (None in trans and u not in probs):
            rows, n = trans.get(u, trans.get(None))
            if len(rows) != d or any(len(r) != d for r in rows):
                raise ModelValidationError(f"channel_transition for user {u + 1} must be {d}x{d}", line=n)
            mats.append(rows)
        elif u in probs or None in probs:
            p, n = probs.get(u, probs.get(None))
            if len(p) != d:
                raise ModelValidationError(f"channel_probs for user {u + 1} needs {d} entries", line=n)
            mats.append([list(p) for _ in range(d)])
        else:
            raise ModelValidationError(f"user {u + 1} needs channel_probs or channel_transition", line=last)
    m["channel_transition"] = mats
    if len(m["arrival_probs"]) != len(m["arrival_support"]):
        raise ModelValidationError("arrival_probs and arrival_support differ in length", line=last)
    m.setdefault("discount", Fraction(9, 10))
    if "initial_state" in m and len(m["initial_state"]) != 2 * N:
        raise ModelValidationError(f"initial_state needs {2 * N} entries (channels then backlogs)", line=last)
    return m


def _parse_argmax(entries):
    supports, probs = {}, {}
    m = {}
    last = entries[-1][0] if entries else None
    for n, key, v in entries:
        if key == "discount":
            m["discount"] = number(v, n)
            if not 0 <= m["discount"] < 1:
                raise ModelValidationError("discount must lie in [0, 1)", line=n)
        elif key == "nodes":
            m["nodes"] = _int(v, n, "nodes")
        elif (k := _indexed(key, "supports", n)) is not False:
            vals = [number(t, n) for t in _tokens(v)]
            supports[k] = [int(x) if x.denominator == 1 else float(x) for x in vals]
        elif (k := _indexed(key, "probs", n)) is not False:
            probs[k] = _prob_row(_tokens(v), n, key)
        else:
            raise ModelValidationError(f"unknown [argmax] key {key!r}", line=n)
    N = m.pop("nodes", None) or max([k + 1 for k in list(supports) + list(probs) if k is not None] or [0])
    if N < 1:
        raise ModelValidationError("[argmax] needs 'nodes' or indexed supports", line=last)
    m["supports"] = _per_user(supports, N, "supports", last)
    if probs:
        m["probs"] = _per_user(probs, N, "probs", last)
    else:
        m["probs"] = [[Fraction(1, len(s))] * len(s) for s in m["supports"]]
    for k, (s, p) in enumerate(zip(m["supports"], m["probs"])):
        if len(s) != len(p):
            raise ModelValidationError(f"node {k + 1}: support and probs differ in length", line=last)
    m.setdefault("discount", Fraction(0))
    return m


def _row_values(tokens, S, line, what):
    if len(tokens) == 1 and ":" not in tokens[0]:
        return [number(tokens[0], line)] * S
    if all(":" in t for t in tokens):
        row = [Fraction(0)] * S
        for t in tokens:
            j, x = t.split(":", 1)
            j = _int(j, line, "column")
            if not 0 <= j < S:
                raise ModelValidationError(f"{what}: column {j} outside 0..{S - 1}", line=line)
            row[j] = number(x, line)
        return row
    if len(tokens) != S:
        raise ModelValidationError(f"{what}: expected {S} values, got {len(tokens)}", line=line)
    return [number(t, line) for t in tokens]


def _parse_mdp(entries):
    m = {"nodes": [], "kernel": {}, "reward": {}, "channels": {}}
    tables = []
    last = entries[-1][0] if entries else None
    for n, key, v in entries:
        head = key.split()
        if key == "discount":
            m["discount"] = number(v, n)
            if not 0 <= m["discount"] < 1:
                raise ModelValidationError("discount must lie in [0, 1)", line=n)
        elif head[0] == "node" and len(head) == 2:
            k = _int(head[1], n, "node id")
            if k != len(m["nodes"]) + 1:
                raise ModelValidationError(f"nodes must be declared in order 1, 2, ...; got node {k}", line=n)
            syms = [symbol(t) for t in _tokens(v)]
            if not syms or len(set(syms)) != len(syms):
                raise ModelValidationError(f"node {k}: symbols must be nonempty and distinct", line=n)
            m["nodes"].append(syms)
        elif key == "actions":
            acts = [symbol(t) for t in _tokens(v)]
            if not acts or len(set(acts)) != len(acts):
                raise ModelValidationError("actions must be nonempty and distinct", line=n)
            m["actions"] = acts
        elif key == "initial":
            m["initial_raw"] = (_tokens(v), n)
        elif key == "initial_state":
            m["initial_state"] = [symbol(t) for t in _tokens(v)]
            m["initial_state_line"] = n
        elif key == "independence":
            if v.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ModelValidationError("independence must be true or false", line=n)
            m["independence"] = v.lower() in ("true", "yes", "1")
        elif head[0] in ("kernel", "reward", "channel"):
            tables.append((n, head, v))
        else:
            raise ModelValidationError(f"unknown [mdp] key {key!r}", line=n)
    for req in ("discount", "actions"):
        if req not in m:
            raise ModelValidationError(f"[mdp] is missing {req!r}", line=last)
    if not m["nodes"]:
        raise ModelValidationError("[mdp] declares no nodes", line=last)
    S = math.prod(len(s) for s in m["nodes"])
    act_index = {fmt_symbol(a): k for k, a in enumerate(m["actions"])}
    for n, head, v in tables:
        kind = head[0]
        want = 4 if kind == "channel" else 3
        if len(head) != want:
            raise ModelValidationError(f"expected '{kind} {'<name> ' if kind == 'channel' else ''}<action> <state>'", line=n)
        a_tok, i_tok = head[-2], head[-1]
        if a_tok not in act_index:
            raise ModelValidationError(f"unknown action {a_tok!r}", line=n)
        a = act_index[a_tok]
        i = _int(i_tok, n, "state index")
        if not 0 <= i < S:
            raise ModelValidationError(f"state index {i} outside 0..{S - 1}", line=n)
        row = _row_values(_tokens(v), S, n, kind)
        if kind == "kernel":
            if any(x < 0 for x in row) or abs(float(sum(row)) - 1.0) > 1e-9:
                raise ModelValidationError(f"kernel row (action {a_tok}, state {i}) sums to {float(sum(row)):.12g}", line=n)
            target, k = m["kernel"], (a, i)
        elif kind == "reward":
            target, k = m["reward"], (a, i)
        else:
            target, k = m["channels"], (head[1], a, i)
        if k in target:
            raise ModelValidationError(f"duplicate {kind} row", line=n)
        target[k] = row
    missing = [(a, i) for a in range(len(m["actions"])) for i in range(S) if (a, i) not in m["kernel"]]
    if missing:
        a, i = missing[0]
        raise ModelValidationError(f"missing kernel row for action {fmt_symbol(m['actions'][a])}, state {i}", line=last)
    if "initial_raw" in m:
        toks, n = m.pop("initial_raw")
        m["initial"] = _prob_row(toks, n, "initial")
        if len(m["initial"]) != S:
            raise ModelValidationError(f"initial needs {S} entries", line=n)
    if "initial_state" in m:
        n = m.pop("initial_state_line")
        st = m["initial_state"]
        if len(st) != len(m["nodes"]) or any(s not in syms for s, syms in zip(st, m["nodes"])):
            raise ModelValidationError("initial_state does not name one symbol per node", line=n)
        if "initial" in m:
            raise ModelValidationError("give either initial or initial_state, not both", line=n)
    return m


def _parse_run(entries):
    run = {}
    for n, key, v in entries:
        kind = RUN_KEYS.get(key)
        if kind is None:
            raise ModelValidationError(f"unknown [run] key {key!r}", line=n)
        if key in run:
            raise ModelValidationError(f"duplicate key {key!r}", line=n)
        if kind == "grid":
            val = parse_grid(v, n)
            if any(x < 0 for x in val):
                raise ModelValidationError("lambda values must be >= 0", line=n)
        elif kind == "list":
            val = _tokens(v)
        elif kind is int:
            val = _int(v, n, key)
        elif kind is Fraction:
            val = number(v, n)
        else:
            val = v
        allowed = CHOICES.get(key)
        if allowed is not None:
            for x in val if isinstance(val, list) else [val]:
                if x not in allowed:
                    raise ModelValidationError(f"{key} must be one of {', '.join(allowed)}; got {x!r}", line=n)
        run[key] = val
    return run


def spec_from_mdp(mdp: FactoredMdp, run=None) -> ModelSpec:
    """Explicit-table spec for an existing model (floats become exact binary fractions)."""
    def fr(x):
        x = float(x)
        q = Fraction(x).limit_denominator(10**9)
        return q if float(q) == x else Fraction(x)

    S = mdp.n_states
    m = {
        "discount": fr(mdp.discount),
        "nodes": [list(ls.symbols) for ls in mdp.locals],
        "actions": list(mdp.actions),
        "kernel": {},
        "reward": {},
        "channels": {},
        "initial": [fr(x) for x in mdp.initial],
    }
    if mdp.independence_flag:
        m["independence"] = True
    for a in range(mdp.n_actions):
        for i in range(S):
            m["kernel"][(a, i)] = [fr(x) for x in mdp.kernel[a, i]]
            if np.any(mdp.reward[a, i] != 0):
                m["reward"][(a, i)] = [fr(x) for x in mdp.reward[a, i]]
            for key, table in mdp.channels.items():
                if np.any(table[a, i] != 0):
                    m["channels"][(key, a, i)] = [fr(x) for x in table[a, i]]
    return ModelSpec("mdp", m, dict(run or {}), name=mdp.name)
