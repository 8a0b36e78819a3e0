"""UAI network / evidence parsing and result writing."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ModelError, ParseError, UnsupportedFormatError
from .factor import FactorTable
from .network import BayesNet


@dataclass
class UaiProblem:
    network: BayesNet
    evidence: dict = field(default_factory=dict)


class _Tokens:
    """Whitespace tokenizer that remembers the line of every token."""

    def __init__(self, text):
        if isinstance(text, (bytes, bytearray)):
            text = text.decode("utf-8", errors="replace")
        self.toks = []
        for ln, line in enumerate(text.splitlines(), 1):
            for t in line.split():
                self.toks.append((t, ln))
        self.i = 0

    def line(self) -> int | None:
        if self.i < len(self.toks):
            return self.toks[self.i][1]
        return self.toks[-1][1] if self.toks else None

    def done(self) -> bool:
        return self.i >= len(self.toks)

    def word(self, what: str) -> str:
        if self.i >= len(self.toks):
            raise ParseError(f"unexpected end of input while reading {what}", self.line())
        t = self.toks[self.i][0]
        self.i += 1
        return t

    def int(self, what: str, lo: int | None = 0) -> int:
        ln = self.line()
        t = self.word(what)
        try:
            v = int(t)
        except ValueError:
            raise ParseError(f"expected integer for {what}, got {t!r}", ln) from None
        if lo is not None and v < lo:
            raise ParseError(f"{what} must be >= {lo}, got {v}", ln)
        return v

    def float(self, what: str) -> float:
        ln = self.line()
        t = self.word(what)
        try:
            v = float(t)
        except ValueError:
            raise ParseError(f"expected number for {what}, got {t!r}", ln) from None
        if not math.isfinite(v) or v < 0:
            raise ParseError(f"{what} must be finite and nonnegative, got {t}", ln)
        return v


def parse_uai(text, check_cpds: bool = True) -> BayesNet:
    """Read a BAYES-preamble UAI network. In each scope the child is listed last."""
    tk = _Tokens(text)
    head = tk.word("preamble")
    if head.upper() == "MARKOV":
        raise UnsupportedFormatError("MARKOV networks are not supported (need BAYES)", 1)
    if head.upper() != "BAYES":
        raise ParseError(f"unknown preamble {head!r}", tk.toks[0][1] if tk.toks else None)
    n = tk.int("variable count")
    cards = {v: tk.int(f"cardinality of variable {v}", lo=1) for v in range(n)}
    nf = tk.int("factor count")
    if nf != n:
        raise ParseError(f"BAYES network needs one CPD per variable: {n} variables, {nf} factors", tk.line())
    scopes = []
    for k in range(nf):
        ln = tk.line()
        m = tk.int(f"scope size of factor {k}", lo=1)
        sc = []
        for _ in range(m):
            v = tk.int(f"variable in scope of factor {k}")
            if v >= n:
                raise ParseError(f"factor {k} refers to unknown variable {v}", ln)
            sc.append(v)
        if len(set(sc)) != len(sc):
            raise ParseError(f"factor {k} has repeated variables", ln)
        scopes.append((sc, ln))
    parents, cpds = {}, {}
    for k, (sc, ln) in enumerate(scopes):
        child = sc[-1]
        if child in parents:
            raise ParseError(f"factor {k}: variable {child} already has a CPD", ln)
        ln_t = tk.line()
        cnt = tk.int(f"table length of factor {k}")
        want = int(np.prod([cards[v] for v in sc], dtype=np.int64))
        if cnt != want:
            raise ParseError(f"factor {k} declares {cnt} entries, scope needs {want}", ln_t)
        vals = []
        for j in range(cnt):
            if tk.done():
                raise ParseError(f"factor {k} ends after {j} of {cnt} entries", tk.line())
            vals.append(tk.float(f"entry {j} of factor {k}"))
        parents[child] = tuple(sc[:-1])
        cpds[child] = FactorTable.from_ordered(sc, [cards[v] for v in sc], vals)
    if not tk.done():
        raise ParseError("trailing tokens after the last factor", tk.line())
    try:
        net = BayesNet(cards, parents, cpds)
        if check_cpds:
            net.check_cpds()
    except ModelError as e:
        raise ParseError(str(e), None) from None
    return net


def parse_evidence(text) -> dict:
    """``n v1 s1 ... vn sn``; the older multi-sample layout ``1 n v1 s1 ...`` is also accepted."""
    tk = _Tokens(text)
    if tk.done():
        return {}
    first = tk.int("evidence count")
    if first == 1 and len(tk.toks) % 2 == 0:
        # sample count, then one sample with its own count
        first = tk.int("evidence count")
    out = {}
    for _ in range(first):
        ln = tk.line()
        v = tk.int("evidence variable")
        s = tk.int(f"state of variable {v}")
        if v in out and out[v] != s:
            raise ParseError(f"variable {v} observed in states {out[v]} and {s}", ln)
        out[v] = s
    if not tk.done():
        raise ParseError("trailing tokens in evidence file", tk.line())
    return out


def check_evidence(net: BayesNet, evidence: dict):
    for v, s in evidence.items():
        if v not in net.cards:
            raise ParseError(f"evidence on unknown variable {v}", None)
        if not 0 <= s < net.cards[v]:
            raise ParseError(f"evidence state {s} out of range for variable {v}", None)


def load_problem(net_path, evid_path=None) -> UaiProblem:
    net = parse_uai(Path(net_path).read_bytes())
    ev = parse_evidence(Path(evid_path).read_bytes()) if evid_path else {}
    check_evidence(net, ev)
    return UaiProblem(net, ev)


def _fmt(x: float) -> str:
    return "%.10g" % x


def write_uai(net: BayesNet) -> str:
    lines = ["BAYES", str(len(net.cards)), " ".join(str(net.cards[v]) for v in net.variables),
             str(len(net.cards))]
    for v in net.variables:
        sc = list(net.parents[v]) + [v]
        lines.append(" ".join([str(len(sc))] + [str(u) for u in sc]))
    lines.append("")
    for v in net.variables:
        sc = list(net.parents[v]) + [v]
        f = net.cpds[v]
        vals = np.moveaxis(f.values, [f.axis(u) for u in sc], list(range(len(sc)))).reshape(-1)
        lines.append(str(vals.size))
        lines.append(" ".join(repr(float(x)) for x in vals))
        lines.append("")
    return "\n".join(lines)


def write_evidence(evidence: dict) -> str:
    items = sorted(evidence.items())
    return " ".join([str(len(items))] + [f"{v} {s}" for v, s in items]) + "\n"


def write_results(task: str, result) -> str:
    """UAI result layout: log10 PR for PR, one line of marginals for MAR tasks."""
    if task == "PR":
        return "PR\n" + _fmt(result.log10_pr) + "\n"
    parts = [str(len(result.marginals))]
    for v in sorted(result.marginals):
        p = result.marginals[v]
        parts.append(str(len(p)))
        parts.extend(_fmt(float(x)) for x in p)
    return "MAR\n" + " ".join(parts) + "\n"


def parse_results(text) -> tuple[str, object]:
    """Inverse of write_results: ("PR", log10) or ("MAR", {var: array})."""
    tk = _Tokens(text)
    kind = tk.word("result kind")
    if kind == "PR":
        ln = tk.line()
        t = tk.word("PR value")
        try:
            return "PR", float(t)
        except ValueError:
            raise ParseError(f"bad PR value {t!r}", ln) from None
    if kind != "MAR":
        raise ParseError(f"unknown result kind {kind!r}", 1)
    n = tk.int("variable count")
    out = {}
    for v in range(n):
        c = tk.int(f"cardinality of variable {v}", lo=1)
        out[v] = np.array([tk.float(f"marginal of variable {v}") for _ in range(c)])
    return "MAR", out


def result_json(result) -> str:
    """Deterministic JSON record (no timings)."""
    meta = {k: v for k, v in result.metadata.items() if k != "time_s"}
    rec = {
        "task": result.task,
        "log_pr": result.log_pr if math.isfinite(result.log_pr) else None,
        "log10_pr": result.log10_pr if math.isfinite(result.log_pr) else None,
        "pr_is_zero": not math.isfinite(result.log_pr),
        "marginals": {str(v): [float(x) for x in result.marginals[v]] for v in sorted(result.marginals)},
        "metadata": meta,
    }
    return json.dumps(rec, indent=1, sort_keys=True)
