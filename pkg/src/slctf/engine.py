"""Build the sequence of linked forests for one DAG and answer PR / MAR queries."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .approximate import InterfaceMap, approximate_ctf, update_interface_map
from .build import build_ctf, check_cpd_sizes
from .errors import BuildError, ContractError, UnsatisfiableApproximationError
from .factor import divide, marginalize, product
from .forest import CliqueForest, calibrate, propagate_from
from .network import BayesNet, simplify, topo_levels

log = logging.getLogger(__name__)

TASKS = ("PR", "MAR", "MAR_P")
LINK_THRESHOLD = 1e-4
UPDATE_CLAMP = 1e-16


@dataclass
class Slctf:
    dag: BayesNet
    ctfs: list = field(default_factory=list)       # calibrated forests
    ims: list = field(default_factory=list)        # InterfaceMap per boundary
    approx: list = field(default_factory=list)     # approximate forest per boundary
    added: list = field(default_factory=list)      # variables introduced by each forest
    i_e: int = 0                                   # 1-based, 0 = no evidence
    relaxed: list = field(default_factory=list)    # (forest index, mcs_im used) after a stall

    @property
    def n_ctf(self) -> int:
        return len(self.ctfs)

    def first_ctf(self) -> dict:
        """variable -> 0-based index of the first forest holding it"""
        out = {}
        for k, s in enumerate(self.added):
            for v in s:
                out.setdefault(v, k)
        return out


def construct_slctf(dag: BayesNet, evidence: Mapping[int, int], E: bool, mcs_p: float, mcs_im: float,
                    link: bool = False, on_step=None) -> Slctf:
    """Alternate build, calibrate and approximate until every variable is placed.

    ``link`` also fills in successors of the interface maps (needed for the
    backward belief update). ``on_step`` is passed to every build.
    """
    check_cpd_sizes(dag, mcs_p)
    levels = topo_levels(dag)
    remaining = set(dag.variables)
    pending = set(evidence)
    s = Slctf(dag)
    start = CliqueForest(dag.cards)
    last_iv: set = set()

    def attempt(start):
        rem = set(remaining)
        out = build_ctf(start.copy(), dag, rem, evidence, mcs_p, levels, protect=True, on_step=on_step)
        if not out.added:
            # the interface-preserving split stalled; fall back to plain halving
            rem = set(remaining)
            out = build_ctf(start.copy(), dag, rem, evidence, mcs_p, levels, protect=False, on_step=on_step)
        return out, rem

    while remaining:
        out, rem = attempt(start)
        lim = mcs_im
        while not out.added and s.ctfs and lim > 1:
            # parents of the stuck variables are spread too widely; shrink the
            # previous approximation further and try again
            lim -= 1
            try:
                a, im = approximate_ctf(s.ctfs[-1], last_iv, lim, E)
            except UnsatisfiableApproximationError:
                break
            out, rem = attempt(a)
            if out.added:
                log.info("forest %d: relaxed mcs_im to %g", len(s.ctfs) + 1, lim)
                s.approx[-1], s.ims[-1] = a, im
                s.relaxed.append((len(s.ctfs) + 1, lim))
        if not out.added:
            raise BuildError(f"no variable could be added (forest {len(s.ctfs) + 1}, "
                             f"{len(remaining)} left, mcs_p={mcs_p})")
        remaining.intersection_update(rem)
        ctf = calibrate(out.ctf)
        s.ctfs.append(ctf)
        s.added.append(set(out.added))
        pending -= out.added
        if evidence and not pending and s.i_e == 0:
            s.i_e = len(s.ctfs)
        if link and s.ims:
            update_interface_map(s.ims[-1], ctf)
        if remaining:
            a, im = approximate_ctf(ctf, out.interface_vars, mcs_im, E)
            s.approx.append(a)
            s.ims.append(im)
            last_iv = set(out.interface_vars)
            start = a
    return s


def infer_pr(s: Slctf) -> float:
    """Natural-log probability of the evidence absorbed by this DAG."""
    last = s.ctfs[-1]
    return float(sum(last.log_z_by_tree().values()))


def _read_marginals(s: Slctf) -> dict:
    first = s.first_ctf()
    return {v: s.ctfs[k].marginal(v) for v, k in first.items()}


def infer_mar_p(s: Slctf) -> dict:
    return _read_marginals(s)


@dataclass
class Link:
    src: int          # clique in CTF_k
    succ: int         # clique in CTF_{k+1}
    vars: frozenset   # link variables
    diff: float       # max marginal difference over the link variables


def _links(im: InterfaceMap, ctf_k: CliqueForest, diffs: dict) -> list[Link]:
    out = []
    for src, e, succ in im.links():
        lv = ctf_k.cliques[src].vars & e.vars
        if not lv or succ is None:
            continue
        out.append(Link(src, succ, frozenset(lv), max(diffs[v] for v in lv)))
    return out


def select_update_links(im: InterfaceMap, ctf_k: CliqueForest, ctf_k1: CliqueForest,
                        threshold: float = LINK_THRESHOLD, all_links: bool = False) -> list[Link]:
    """Links to use for the backward update, in application order."""
    lvars = set()
    for e in im.entries:
        lvars |= e.vars
    diffs = {v: float(np.max(np.abs(ctf_k.marginal(v) - ctf_k1.marginal(v)))) for v in sorted(lvars)}
    cands = _links(im, ctf_k, diffs)
    key = lambda l: (l.diff, l.src, l.succ)
    if all_links:
        return sorted(cands, key=key)
    todo = {v for v, d in diffs.items() if d >= threshold}
    chosen: list[Link] = []
    while todo:
        best = min(cands, key=lambda l: (-len(l.vars & todo), l.src, l.succ))
        if not best.vars & todo:
            break
        chosen.append(best)
        todo -= best.vars
    tm = ctf_k.tree_map()
    covered = {tm[l.src] for l in chosen}
    for root in sorted(set(tm.values()) - covered):
        pool = [l for l in cands if tm[l.src] == root]
        if pool:
            chosen.append(min(pool, key=lambda l: (-l.diff, l.src, l.succ)))
    return sorted(chosen, key=key)


def apply_link(ctf_k: CliqueForest, ctf_k1: CliqueForest, link: Link, clamp: float = UPDATE_CLAMP):
    """Rescale the source clique to the successor's link-variable marginal,
    then pass messages outward from it."""
    c = ctf_k.cliques[link.src]
    target = marginalize(ctf_k1.cliques[link.succ].belief, link.vars).normalized()[0]
    cur = marginalize(c.belief, link.vars)
    c.belief = product(c.belief, divide(target, cur, clamp=clamp)).normalized()[0]
    propagate_from(ctf_k, link.src, clamp=clamp)


def infer_mar_e(s: Slctf, threshold: float = LINK_THRESHOLD, all_links: bool = False) -> dict:
    """Backward update from I_E down to the first forest, then read each
    variable from the first forest that introduced it."""
    if s.i_e > 1:
        if len(s.ims) < s.i_e - 1 or any(e.successor is None for im in s.ims[: s.i_e - 1] for e in im.entries):
            raise ContractError("interface maps lack successors; build with link=True")
    for k in range(s.i_e - 1, 0, -1):
        ctf_k, ctf_k1, im = s.ctfs[k - 1], s.ctfs[k], s.ims[k - 1]
        for lk in select_update_links(im, ctf_k, ctf_k1, threshold, all_links):
            apply_link(ctf_k, ctf_k1, lk)
    return _read_marginals(s)


# whole-network queries

@dataclass
class QueryResult:
    task: str
    log_pr: float
    marginals: dict
    metadata: dict = field(default_factory=dict)

    @property
    def log10_pr(self) -> float:
        return self.log_pr / math.log(10) if math.isfinite(self.log_pr) else -math.inf


def _resolve(sm, v):
    inv = False
    seen = set()
    while v in sm.collapsed and v not in seen:
        seen.add(v)
        v, flip = sm.collapsed[v]
        inv ^= flip
    return v, inv


def _point(card, state):
    p = np.zeros(card)
    p[state] = 1.0
    return p


def run(net: BayesNet, evidence: Mapping[int, int] | None, task: str = "MAR", mcs_p: float = 20,
        mcs_im: float | None = None, all_links: bool = False, threshold: float = LINK_THRESHOLD) -> QueryResult:
    """Simplify, split, build per DAG and answer ``task``."""
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    if mcs_im is None:
        mcs_im = mcs_p - 5
    t0 = time.perf_counter()
    evidence = dict(evidence or {})
    if task == "MAR_P":
        evidence = {}
    sm = simplify(net, evidence)
    meta = {"mcs_p": mcs_p, "mcs_im": mcs_im, "n_dags": len(sm.dags), "n_ctf": [], "i_e": [],
            "max_clique_size": [], "over_limit": 0, "inconsistent": sm.inconsistent}
    cards = net.cards
    if sm.inconsistent:
        marg = {v: (_point(cards[v], evidence[v]) if v in evidence else np.full(cards[v], 1.0 / cards[v]))
                for v in net.variables}
        meta["warning"] = "evidence has probability zero"
        meta["time_s"] = time.perf_counter() - t0
        return QueryResult(task, -math.inf, marg, meta)
    log_pr = sm.log_const
    found: dict = {}
    for dag, ev in zip(sm.dags, sm.evidence):
        E = task in ("PR", "MAR") and bool(ev)
        s = construct_slctf(dag, ev, E, mcs_p, mcs_im, link=(task == "MAR" and E))
        meta["n_ctf"].append(s.n_ctf)
        meta["i_e"].append(s.i_e)
        meta["max_clique_size"].append(max(c.max_size() for c in s.ctfs))
        meta["over_limit"] += sum(len(im.over_limit) for im in s.ims)
        meta["relaxed"] = meta.get("relaxed", 0) + len(s.relaxed)
        if E:
            log_pr += infer_pr(s)
        if task != "PR":
            found.update(infer_mar_e(s, threshold, all_links) if task == "MAR" and E else infer_mar_p(s))
    marg = {}
    if task != "PR":
        for v in net.variables:
            r, inv = _resolve(sm, v)
            if r in sm.fixed:
                p = _point(cards[r], sm.fixed[r])
            elif r in found:
                p = np.asarray(found[r], dtype=float)
            else:
                raise BuildError(f"variable {v} was not placed in any forest")
            marg[v] = p[::-1].copy() if inv else p
    meta["time_s"] = time.perf_counter() - t0
    return QueryResult(task, float(log_pr), marg, meta)
