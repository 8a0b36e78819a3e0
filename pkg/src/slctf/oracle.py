"""Ground truth for small networks: brute-force joint and full junction-tree compilation."""
from __future__ import annotations

import math
from typing import Mapping

import numpy as np

from .chordal import junction_edges, min_fill_order, moral_graph
from .engine import QueryResult, TASKS
from .errors import ContractError, InconsistentEvidenceError, OracleCapacityError
from .factor import FactorTable, clique_size, product
from .forest import CliqueForest, calibrate
from .network import BayesNet

ORACLE_BITS = 24


def enumerate_joint(net: BayesNet, evidence: Mapping[int, int] | None = None,
                    max_bits: float = ORACLE_BITS) -> FactorTable:
    """Product of all CPDs times evidence indicators, over every variable."""
    bits = clique_size(net.cards.values())
    if bits > max_bits + 1e-9:
        raise OracleCapacityError(f"joint needs {bits:.3g} bits > {max_bits}")
    out = FactorTable.scalar()
    for v in net.variables:
        out = product(out, net.cpds[v])
    for v, s in (evidence or {}).items():
        out = product(out, FactorTable.indicator(v, net.cards[v], s))
    return out


def full_compile(net: BayesNet) -> CliqueForest:
    """Moralize, triangulate by min-fill, join maximal cliques by a max-weight
    spanning forest and place each CPD in the first clique covering it."""
    adj = moral_graph(net.parents)
    _, cliques = min_fill_order(adj)
    ctf = CliqueForest(net.cards)
    ids = [ctf.add_clique(c) for c in cliques]
    for i, j in junction_edges(cliques):
        ctf.connect(ids[i], ids[j])
    for v in net.variables:
        fam = set(net.cpds[v].scope)
        home = min((c for c in ids if fam <= ctf.cliques[c].vars), key=lambda c: (len(ctf.cliques[c].vars), c))
        ctf.cliques[home].factors.append(net.cpds[v])
    return ctf


def fill_edges(net: BayesNet) -> set:
    """Edges in the triangulated graph that are neither arcs nor moral edges."""
    moral = moral_graph(net.parents)
    _, cliques = min_fill_order(moral)
    tri = set()
    for c in cliques:
        cs = sorted(c)
        for i, a in enumerate(cs):
            for b in cs[i + 1:]:
                tri.add((a, b))
    base = {(min(a, b), max(a, b)) for a in moral for b in moral[a]}
    return tri - base


def _marginals_from_joint(joint: FactorTable) -> dict:
    vals = joint.values
    out = {}
    for ax, v in enumerate(joint.scope):
        m = vals.sum(axis=tuple(i for i in range(vals.ndim) if i != ax))
        s = m.sum()
        out[v] = m / s if s > 0 else np.full(m.shape, 1.0 / m.size)
    return out


def exact_query(net: BayesNet, evidence: Mapping[int, int] | None = None, task: str = "MAR",
                max_bits: float = ORACLE_BITS) -> QueryResult:
    """Exact PR and singleton marginals; enumeration when it fits, otherwise a
    full junction tree with the evidence indicators folded in."""
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}")
    evidence = {} if task == "MAR_P" else dict(evidence or {})
    if clique_size(net.cards.values()) <= max_bits:
        joint = enumerate_joint(net, evidence, max_bits)
        log_pr = joint.log_total()
        marg = _marginals_from_joint(joint) if math.isfinite(log_pr) else {}
    else:
        ctf = full_compile(net)
        if ctf.max_size() > max_bits:
            raise OracleCapacityError(f"junction tree clique of {ctf.max_size():.3g} bits > {max_bits}")
        for v, s in evidence.items():
            home = min(ctf.cliques_with(v), key=lambda c: (ctf.size(c), c))
            ctf.cliques[home].factors.append(FactorTable.indicator(v, net.cards[v], s))
        try:
            calibrate(ctf)
            log_pr = float(sum(ctf.log_z_by_tree().values()))
            marg = {v: ctf.marginal(v) for v in net.variables}
        except InconsistentEvidenceError:
            log_pr, marg = -math.inf, {}
    if not marg:
        marg = {v: np.full(net.cards[v], 1.0 / net.cards[v]) for v in net.variables}
    for v, s in evidence.items():
        p = np.zeros(net.cards[v])
        p[s] = 1.0
        marg[v] = p
    return QueryResult(task, float(log_pr), marg, {"oracle": True})
