"""Bayesian network container, topological levels, component split and
evidence-driven simplification."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ContractError, InconsistentEvidenceError, ModelError
from .factor import FactorTable, clique_size, reduce_evidence


class BayesNet:
    """DAG over discrete variables with one CPD per variable.

    ``cpds[v]`` is a FactorTable over ``parents[v] + (v,)`` in sorted scope order.
    """

    def __init__(self, cards: Mapping[int, int], parents: Mapping[int, tuple], cpds: Mapping[int, FactorTable],
                 names: Mapping[int, str] | None = None):
        self.cards = {int(v): int(c) for v, c in cards.items()}
        self.parents = {int(v): tuple(int(p) for p in parents.get(v, ())) for v in self.cards}
        self.cpds = dict(cpds)
        self.names = dict(names) if names else {}
        for v in self.cards:
            if v not in self.cpds:
                raise ModelError(f"variable {v} has no CPD")
            scope = tuple(sorted(self.parents[v] + (v,)))
            if self.cpds[v].scope != scope:
                raise ModelError(f"CPD of {v} has scope {self.cpds[v].scope}, expected {scope}")
            for p in self.parents[v]:
                if p not in self.cards:
                    raise ModelError(f"parent {p} of {v} is not a variable")

    @property
    def variables(self) -> list[int]:
        return sorted(self.cards)

    def __len__(self):
        return len(self.cards)

    def children(self) -> dict[int, list[int]]:
        ch = {v: [] for v in self.cards}
        for v in self.variables:
            for p in self.parents[v]:
                ch[p].append(v)
        return ch

    def name(self, v: int) -> str:
        return self.names.get(v, str(v))

    def max_cpd_size(self) -> float:
        return max((clique_size(self.cpds[v].cards) for v in self.cards), default=0.0)

    def check_cpds(self, tol: float = 1e-9):
        """Every CPD sums to one over the child for each parent configuration."""
        for v in self.variables:
            f = self.cpds[v]
            s = f.dense().sum(axis=f.axis(v))
            if not np.allclose(s, 1.0, atol=tol, rtol=0):
                raise ModelError(f"CPD of variable {self.name(v)} does not normalize (max dev "
                                 f"{float(np.abs(s - 1).max()):.3g})")

    def subnet(self, keep) -> "BayesNet":
        keep = set(keep)
        for v in keep:
            if not set(self.parents[v]) <= keep:
                raise ContractError(f"variable {v} kept without all of its parents")
        return BayesNet({v: self.cards[v] for v in keep}, {v: self.parents[v] for v in keep},
                        {v: self.cpds[v] for v in keep}, {v: n for v, n in self.names.items() if v in keep})

    def __repr__(self):
        return f"BayesNet({len(self)} variables, {sum(map(len, self.parents.values()))} edges)"


def topo_levels(net: BayesNet) -> dict[int, int]:
    """Level 0 for roots, otherwise one more than the deepest parent."""
    indeg = {v: len(net.parents[v]) for v in net.cards}
    ch = net.children()
    level = {}
    q = deque(sorted(v for v, d in indeg.items() if d == 0))
    for v in q:
        level[v] = 0
    seen = 0
    while q:
        v = q.popleft()
        seen += 1
        for c in ch[v]:
            level[c] = max(level.get(c, 0), level[v] + 1)
            indeg[c] -= 1
            if indeg[c] == 0:
                q.append(c)
    if seen != len(net.cards):
        raise ModelError("network contains a directed cycle")
    return level


def topo_order(net: BayesNet) -> list[int]:
    lv = topo_levels(net)
    return sorted(net.cards, key=lambda v: (lv[v], v))


class _UnionFind:
    def __init__(self, items):
        self.p = {x: x for x in items}

    def find(self, x):
        while self.p[x] != x:
            self.p[x] = self.p[self.p[x]]
            x = self.p[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                ra, rb = rb, ra
            self.p[ra] = rb


def component_sets(net: BayesNet) -> list[list[int]]:
    uf = _UnionFind(net.cards)
    for v, ps in net.parents.items():
        for p in ps:
            uf.union(v, p)
    groups: dict[int, list[int]] = {}
    for v in net.variables:
        groups.setdefault(uf.find(v), []).append(v)
    return sorted(groups.values(), key=lambda g: g[0])


def split_components(net: BayesNet) -> list[BayesNet]:
    """Weakly connected components, ordered by smallest variable id."""
    return [net.subnet(g) for g in component_sets(net)]


# simplification

@dataclass
class SimplifiedModel:
    dags: list                       # list of BayesNet
    evidence: list                   # per dag: {var: state} (observed or fixed vars in it)
    fixed: dict                      # every observed or fixed variable -> state
    collapsed: dict                  # var -> (source var, inverted)
    log_const: float = 0.0           # log-probability of folded single-variable parts
    inconsistent: bool = False
    original: BayesNet | None = None
    user_evidence: dict = field(default_factory=dict)

    def source_of(self, v):
        return self.collapsed.get(v, (v, False))


class _Work:
    """Mutable copy of the network used while simplifying."""

    def __init__(self, net: BayesNet):
        self.cards = dict(net.cards)
        self.parents = {v: list(ps) for v, ps in net.parents.items()}
        self.cpds = dict(net.cpds)
        self.alive = set(net.cards)

    def children(self, x):
        return [c for c in sorted(self.alive) if x in self.parents[c]]


_TOL = 1e-12


def _slice_children(w: _Work, obs) -> bool:
    changed = False
    for x in sorted(obs):
        if x not in w.alive:
            continue
        for c in w.children(x):
            w.cpds[c] = reduce_evidence(w.cpds[c], x, obs[x])
            w.parents[c].remove(x)
            changed = True
    return changed


def _observed_cpd_rules(w: _Work, obs, fixed_only) -> bool:
    """All-ones reduced CPDs lose their parents; forced parents become fixed."""
    changed = False
    for x in sorted(obs):
        if x not in w.alive or not w.parents[x]:
            continue
        red = reduce_evidence(w.cpds[x], x, obs[x])
        vals = red.values
        if not np.any(vals > 0):
            raise InconsistentEvidenceError(f"observed state of {x} has zero probability")
        if np.allclose(vals, 1.0, atol=_TOL, rtol=0):
            card = w.cards[x]
            prior = np.zeros(card)
            prior[obs[x]] = 1.0
            w.cpds[x] = FactorTable((x,), (card,), prior)
            w.parents[x] = []
            changed = True
            continue
        support = np.argwhere(vals > 0)
        for ax, p in enumerate(red.scope):
            col = np.unique(support[:, ax])
            if col.size == 1:
                st = int(col[0])
                if p in obs and obs[p] != st:
                    raise InconsistentEvidenceError(f"variable {p} forced to two states")
                if p not in obs:
                    obs[p] = st
                    fixed_only.add(p)
                    changed = True
    # parentless variables whose prior is a point mass
    for x in sorted(w.alive):
        if x in obs or w.parents[x]:
            continue
        vals = w.cpds[x].values
        nz = np.flatnonzero(vals > 0)
        if nz.size == 1 and abs(vals[nz[0]] - 1.0) <= _TOL:
            obs[x] = int(nz[0])
            fixed_only.add(x)
            changed = True
    return changed


def _fixed_point(w: _Work, obs, fixed_only):
    while True:
        a = _slice_children(w, obs)
        b = _observed_cpd_rules(w, obs, fixed_only)
        if not (a or b):
            break


def _drop_independent_parents(w: _Work) -> bool:
    changed = False
    for x in sorted(w.alive):
        for p in list(w.parents[x]):
            f = w.cpds[x]
            ax = f.axis(p)
            ref = np.take(f.values, [0], axis=ax)
            if np.allclose(f.values, ref, atol=_TOL, rtol=0):
                w.cpds[x] = reduce_evidence(f, p, 0)
                w.parents[x].remove(p)
                changed = True
    return changed


def _parent_child_matrix(f: FactorTable, parent: int, child: int) -> np.ndarray:
    m = f.values
    if f.axis(parent) > f.axis(child):
        m = m.T
    return m


def _collapse_copies(w: _Work, obs, collapsed) -> bool:
    """Fold single-parent equality / binary negation nodes into their source."""
    changed = False
    order = _alive_topo(w)
    for x in order:
        if x in obs or len(w.parents[x]) != 1:
            continue
        a = w.parents[x][0]
        if w.cards[a] != w.cards[x]:
            continue
        m = _parent_child_matrix(w.cpds[x], a, x)
        k = w.cards[x]
        if np.allclose(m, np.eye(k), atol=_TOL, rtol=0):
            inv = False
        elif k == 2 and np.allclose(m, np.array([[0.0, 1.0], [1.0, 0.0]]), atol=_TOL, rtol=0):
            inv = True
        else:
            continue
        for c in w.children(x):
            f = w.cpds[c]
            vals = f.values
            axx = f.axis(x)
            if inv:
                vals = np.flip(vals, axis=axx)
            if a in f.scope:
                axa = f.axis(a)
                # keep the diagonal a == x, then drop the x axis
                vals = np.diagonal(vals, axis1=axa, axis2=axx)
                scope = [v for v in f.scope if v not in (a, x)] + [a]
            else:
                scope = [a if v == x else v for v in f.scope]
                vals = np.asarray(vals)
            cards = [w.cards[v] for v in scope]
            w.cpds[c] = FactorTable.from_ordered(scope, cards, np.ascontiguousarray(vals))
            w.parents[c] = [a if p == x else p for p in w.parents[c]]
            # dedupe while keeping order
            seen = []
            for p in w.parents[c]:
                if p not in seen:
                    seen.append(p)
            w.parents[c] = seen
        src, par = collapsed.get(a, (a, False))
        collapsed[x] = (src, par ^ inv)
        w.alive.discard(x)
        changed = True
    return changed


def _alive_topo(w: _Work):
    indeg = {v: sum(1 for p in w.parents[v] if p in w.alive) for v in w.alive}
    q = deque(sorted(v for v, d in indeg.items() if d == 0))
    out = []
    ch = {v: [] for v in w.alive}
    for v in sorted(w.alive):
        for p in w.parents[v]:
            ch[p].append(v)
    while q:
        v = q.popleft()
        out.append(v)
        for c in ch[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                q.append(c)
    return out


def simplify(net: BayesNet, evidence: Mapping[int, int] | None = None) -> SimplifiedModel:
    """Evidence-driven simplification followed by a split into connected DAGs.

    Order: (slice / all-ones / forcing) to a fixed point, independent-parent
    edge removal, copy collapse, then the first group again.
    """
    evidence = {int(k): int(s) for k, s in (evidence or {}).items()}
    for v, s in evidence.items():
        if v not in net.cards:
            raise ContractError(f"evidence on unknown variable {v}")
        if not 0 <= s < net.cards[v]:
            raise ContractError(f"evidence state {s} out of range for variable {v}")
    w = _Work(net)
    obs = dict(evidence)
    fixed_only: set = set()
    collapsed: dict = {}
    try:
        _fixed_point(w, obs, fixed_only)
        _drop_independent_parents(w)
        _collapse_copies(w, obs, collapsed)
        _fixed_point(w, obs, fixed_only)
    except InconsistentEvidenceError:
        return SimplifiedModel([], [], dict(obs), collapsed, -math.inf, True, net, evidence)

    alive = sorted(w.alive)
    sub = BayesNet({v: w.cards[v] for v in alive}, {v: tuple(w.parents[v]) for v in alive},
                   {v: w.cpds[v] for v in alive}, net.names)
    dags, evs = [], []
    log_const = 0.0
    for g in component_sets(sub):
        if len(g) == 1 and g[0] in obs and not sub.parents[g[0]]:
            x = g[0]
            p = float(sub.cpds[x].values[obs[x]])
            if p <= 0.0:
                return SimplifiedModel([], [], dict(obs), collapsed, -math.inf, True, net, evidence)
            log_const += math.log(p)
            continue
        dags.append(sub.subnet(g))
        evs.append({v: obs[v] for v in g if v in obs})
    return SimplifiedModel(dags, evs, dict(obs), collapsed, log_const, False, net, evidence)


# random networks for tests and benchmarks

def random_bayesnet(n: int, rng: np.random.Generator | int, max_parents: int = 3, cards=(2,),
                    window: int | None = None, det_frac: float = 0.0, alpha: float = 1.0) -> BayesNet:
    """Random DAG in topological id order with Dirichlet CPDs.

    ``window`` limits parents to the previous ``window`` ids, which keeps the
    treewidth moderate for larger nets. ``det_frac`` makes that fraction of
    CPD rows deterministic.
    """
    rng = np.random.default_rng(rng)
    card = {v: int(rng.choice(cards)) for v in range(n)}
    parents, cpds = {}, {}
    for v in range(n):
        lo = 0 if window is None else max(0, v - window)
        pool = list(range(lo, v))
        k = int(rng.integers(0, min(max_parents, len(pool)) + 1)) if pool else 0
        ps = tuple(sorted(int(p) for p in rng.choice(pool, size=k, replace=False))) if k else ()
        parents[v] = ps
        rows = int(np.prod([card[p] for p in ps], dtype=np.int64)) if ps else 1
        tab = rng.dirichlet(np.full(card[v], alpha), size=rows)
        if det_frac > 0:
            for r in range(rows):
                if rng.random() < det_frac:
                    tab[r] = 0.0
                    tab[r, rng.integers(card[v])] = 1.0
        scope = list(ps) + [v]
        cpds[v] = FactorTable.from_ordered(scope, [card[u] for u in scope], tab.reshape(-1))
    return BayesNet(card, parents, cpds)


def random_evidence(net: BayesNet, k: int, rng, candidates=None) -> dict:
    """Sample k evidence variables with states drawn from the prior (nonzero PR)."""
    rng = np.random.default_rng(rng)
    order = topo_order(net)
    state = {}
    for v in order:
        f = net.cpds[v]
        idx = tuple(state[u] if u != v else slice(None) for u in f.scope)
        p = np.asarray(f.values[idx], dtype=float)
        state[v] = int(rng.choice(len(p), p=p / p.sum()))
    pool = sorted(candidates if candidates is not None else net.cards)
    pick = rng.choice(pool, size=min(k, len(pool)), replace=False)
    return {int(v): state[int(v)] for v in sorted(pick)}
