"""Incremental clique-tree construction under a clique-size bound."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .chordal import junction_edges, min_fill_order, moral_graph
from .errors import BuildError, ConfigError
from .factor import FactorTable, clique_size, product
from .forest import CliqueForest, msg_subgraph
from .network import BayesNet, _UnionFind, topo_levels

_EPS = 1e-9


@dataclass
class BuildOutcome:
    ctf: CliqueForest
    added: set = field(default_factory=set)
    deferred: set = field(default_factory=set)
    interface_vars: set = field(default_factory=set)


def family_factor(dag: BayesNet, v: int, evidence: Mapping[int, int]) -> FactorTable:
    """CPD of v, multiplied by the indicator of its observed state if any."""
    f = dag.cpds[v]
    if v in evidence:
        f = product(f, FactorTable.indicator(v, dag.cards[v], evidence[v]))
    return f


def check_cpd_sizes(dag: BayesNet, mcs_p: float):
    for v in dag.variables:
        s = clique_size(dag.cpds[v].cards)
        if s > mcs_p + _EPS:
            raise ConfigError(f"CPD of variable {dag.name(v)} has size {s:.3g} > mcs_p={mcs_p}")


# case analysis

def _components(ctf: CliqueForest, ids: set) -> list[set]:
    out, seen = [], set()
    for s in sorted(ids):
        if s in seen:
            continue
        comp, stack = {s}, [s]
        seen.add(s)
        while stack:
            x = stack.pop()
            for n in ctf.adj[x] & ids:
                if n not in seen:
                    seen.add(n)
                    comp.add(n)
                    stack.append(n)
        out.append(comp)
    return out


def _span(ctf: CliqueForest, ids: set) -> set:
    """Smallest set of cliques containing ``ids`` that is connected inside each tree."""
    keep = set()
    for t in ctf.trees():
        want = ids & set(t)
        if not want:
            continue
        sub = set(t)
        leaves = [c for c in sorted(sub) if len(ctf.adj[c] & sub) <= 1 and c not in want]
        while leaves:
            c = leaves.pop()
            if c not in sub or len(sub) == 1:
                continue
            nb = ctf.adj[c] & sub
            sub.discard(c)
            for n in nb:
                if n not in want and len(ctf.adj[n] & sub) <= 1:
                    leaves.append(n)
        keep |= sub
    return keep


def classify(ctf: CliqueForest, parents) -> tuple[int, object]:
    """Return (case, data): (1, clique id), (2, [clique ids]) or (3, set of ids)."""
    pa = set(parents)
    holders = [c for c in ctf.cliques.values() if pa <= c.vars]
    if holders:
        best = min(holders, key=lambda c: (ctf.size(c.id), c.id))
        return 1, best.id
    ids = msg_subgraph(ctf, pa)
    comps = _components(ctf, ids)
    if all(len(c) == 1 for c in comps):
        return 2, sorted(next(iter(c)) for c in comps)
    return 3, ids


def _add_case1(ctf: CliqueForest, v, pa, cid, factor):
    cv = frozenset(pa) | {v}
    c = ctf.cliques[cid]
    if c.vars <= cv:
        c.vars = cv
        c.factors.append(factor)
        ctf.calibrated = False
        return cid
    new = ctf.add_clique(cv, [factor])
    ctf.connect(new, cid)
    return new


def _add_case2(ctf: CliqueForest, v, pa, cids, factor):
    cv = frozenset(pa) | {v}
    new = ctf.add_clique(cv, [factor])
    for c in cids:
        ctf.connect(new, c)
    for c in cids:
        if ctf.cliques[c].vars <= cv:
            ctf.absorb(c, new)
    return new


# case 3

@dataclass
class _Plan:
    sg: set
    S: frozenset
    retained: list
    st: list            # triangulated cliques (frozensets)
    st_edges: list
    max_size: float


def plan_group(ctf: CliqueForest, dag: BayesNet, group, sg: set) -> _Plan:
    S = set()
    for v in group:
        S |= set(dag.parents[v])
    for a in sg:
        for b in ctf.adj[a] & sg:
            S |= ctf.sepset(a, b)
    S = frozenset(S)
    retained = sorted(c for c in sg if not ctf.cliques[c].vars <= S)
    adj = {x: set() for x in S}

    def complete(vs):
        vs = sorted(vs)
        for i, a in enumerate(vs):
            for b in vs[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)

    for c in sg:
        complete(ctf.cliques[c].vars & S)
    for v in group:
        complete(dag.parents[v])
    _, cliques = min_fill_order(adj)
    edges = junction_edges(cliques)
    ms = max((ctf.scope_size(c) for c in cliques), default=0.0)
    for v in group:
        ms = max(ms, ctf.scope_size(set(dag.parents[v]) | {v}))
    for c in retained:
        ms = max(ms, ctf.size(c))
    return _Plan(set(sg), S, retained, cliques, edges, ms)


def _pick(ctf, nodes, need: frozenset, prefer=frozenset()):
    cand = [n for n in nodes if need <= ctf.cliques[n].vars]
    if not cand:
        raise BuildError(f"no clique in rebuilt subtree contains {sorted(need)}")
    return min(cand, key=lambda n: (-len(ctf.cliques[n].vars & prefer), n))


def apply_plan(ctf: CliqueForest, dag: BayesNet, group, plan: _Plan, evidence) -> list[int]:
    sg, S = plan.sg, plan.S
    retained = set(plan.retained)
    boundary = []
    for c in sorted(sg):
        for n in sorted(ctf.adj[c] - sg):
            boundary.append((c, n, ctf.sepset(c, n)))
    orphans = []
    for c in sorted(sg):
        if c not in retained:
            orphans.extend(ctf.cliques[c].factors)
    for c in sorted(sg):
        if c in retained:
            for n in list(ctf.adj[c] & sg):
                ctf.disconnect(c, n)
        else:
            ctf.remove_clique(c)
    ids = [ctf.add_clique(cl) for cl in plan.st]
    for i, j in plan.st_edges:
        ctf.connect(ids[i], ids[j])
    nodes = list(ids)
    for v in sorted(group):
        pa = frozenset(dag.parents[v])
        cv = pa | {v}
        fac = family_factor(dag, v, evidence)
        tgt = _pick(ctf, nodes, pa)
        if ctf.cliques[tgt].vars <= cv:
            ctf.cliques[tgt].vars = cv
            ctf.cliques[tgt].factors.append(fac)
        else:
            new = ctf.add_clique(cv, [fac])
            ctf.connect(new, tgt)
            nodes.append(new)
    for c in plan.retained:
        cvars = ctf.cliques[c].vars
        tgt = _pick(ctf, nodes, cvars & S, cvars)
        if ctf.cliques[tgt].vars <= cvars:
            ctf.absorb(tgt, c)
            nodes.remove(tgt)
        else:
            ctf.connect(c, tgt)
        nodes.append(c)
    nodes.sort()
    for f in orphans:
        fs = set(f.scope)
        home = next((n for n in nodes if fs <= ctf.cliques[n].vars), None)
        if home is None:
            raise BuildError(f"no home for factor over {f.scope}")
        ctf.cliques[home].factors.append(f)
    for x, n, sep in boundary:
        if x in retained:
            continue
        tgt = _pick(ctf, nodes, sep, ctf.cliques[n].vars)
        ctf.connect(n, tgt)
    return nodes


# ModifyCTF / BuildCTF

def _group(ctf, dag, vars_):
    """Union-find over variables whose impacted subgraphs share a clique."""
    msg = {v: msg_subgraph(ctf, dag.parents[v]) for v in vars_}
    uf = _UnionFind(vars_)
    owner = {}
    for v in sorted(vars_):
        for c in msg[v]:
            if c in owner:
                uf.union(v, owner[c])
            else:
                owner[c] = v
    groups: dict = {}
    for v in sorted(vars_):
        groups.setdefault(uf.find(v), []).append(v)
    out = sorted(groups.values(), key=lambda g: g[0])
    return [(g, set().union(*(msg[v] for v in g))) for g in out], msg


def modify_ctf(ctf: CliqueForest, batch, dag: BayesNet, mcs_p: float, evidence: Mapping[int, int],
               protect: set | None = None) -> tuple[list, list]:
    """Add a batch of active variables. Returns (added, deferred).

    ``protect`` is a set of variables already deferred in this build; when a
    group has to be split, a variable is only kept if its impacted subgraph
    leaves the cliques holding parents of deferred variables untouched.
    """
    added, deferred, case3 = [], [], []
    for v in sorted(batch):
        pa = dag.parents[v]
        fac = family_factor(dag, v, evidence)
        if not pa:
            ctf.add_clique([v], [fac])
            added.append(v)
            continue
        case, data = classify(ctf, pa)
        if case == 1:
            _add_case1(ctf, v, pa, data, fac)
            added.append(v)
        elif case == 2:
            _add_case2(ctf, v, pa, data, fac)
            added.append(v)
        else:
            case3.append(v)
    if not case3:
        return added, deferred
    groups, _ = _group(ctf, dag, case3)
    queue = list(groups)
    while queue:
        g, sg = queue.pop(0)
        # earlier groups may have turned this one into case 1/2
        if len(g) == 1:
            case, data = classify(ctf, dag.parents[g[0]])
            if case != 3:
                v = g[0]
                fac = family_factor(dag, v, evidence)
                (_add_case1 if case == 1 else _add_case2)(ctf, v, dag.parents[v], data, fac)
                added.append(v)
                continue
            sg = data
        else:
            sg = _span(ctf, set().union(*(msg_subgraph(ctf, dag.parents[v]) for v in g)))
        plan = plan_group(ctf, dag, g, sg)
        if plan.max_size <= mcs_p + _EPS:
            apply_plan(ctf, dag, g, plan, evidence)
            added.extend(g)
            continue
        if len(g) == 1:
            deferred.append(g[0])
            if protect is not None:
                protect.add(g[0])
            continue
        order = sorted(g, key=lambda v: (v not in evidence,
                                         ctf.scope_size(set(dag.parents[v]) | {v}), v))
        keep, drop = order[: len(order) // 2], order[len(order) // 2:]
        deferred.extend(drop)
        if protect is not None:
            protect.update(drop)
            blocked = set()
            for u in protect:
                blocked |= set(dag.parents[u])
            ok = []
            for v in keep:
                touched = msg_subgraph(ctf, dag.parents[v])
                if any(ctf.cliques[c].vars & blocked for c in touched):
                    deferred.append(v)
                    protect.add(v)
                else:
                    ok.append(v)
            keep = ok
        if keep:
            sub, _ = _group(ctf, dag, keep)
            queue = sub + queue
    return added, deferred


def build_ctf(start: CliqueForest, dag: BayesNet, remaining: set, evidence: Mapping[int, int], mcs_p: float,
              levels: Mapping[int, int] | None = None, protect: bool = True, on_step=None) -> BuildOutcome:
    """Grow ``start`` with variables from ``remaining`` until nothing more fits.

    ``remaining`` is the set of DAG variables not yet in any forest; it is
    updated in place. Levels come from the full DAG and are not recomputed.
    """
    ctf = start
    levels = levels if levels is not None else topo_levels(dag)
    added: set = set()
    if not ctf.cliques:
        for v in sorted(remaining):
            if not dag.parents[v]:
                ctf.add_clique([v], [family_factor(dag, v, evidence)])
                added.add(v)
        remaining -= added
    present = ctf.variables()
    children = dag.children()

    def is_active(v):
        return all(p not in remaining for p in dag.parents[v])

    for v in remaining:
        if is_active(v):
            missing = [p for p in dag.parents[v] if p not in present]
            if missing:
                raise BuildError(f"parents {missing} of active variable {v} are missing from the forest")
    active = {v for v in remaining if is_active(v)}
    deferred: set = set()
    guard = set() if protect else None
    while active:
        lvl = min(levels[v] for v in active)
        batch = sorted(v for v in active if levels[v] == lvl)
        active -= set(batch)
        got, dfr = modify_ctf(ctf, batch, dag, mcs_p, evidence, guard)
        deferred |= set(dfr)
        remaining -= set(got)
        added |= set(got)
        if on_step is not None:
            on_step(ctf)
        for v in got:
            for c in children[v]:
                if c in remaining and c not in deferred and c not in active and is_active(c):
                    active.add(c)
    iv = {u for u in ctf.variables() if any(c in remaining for c in children[u])}
    return BuildOutcome(ctf, added, deferred, iv)


# incremental vs full compilation

@dataclass
class SizeReport:
    mcs_ibia: float
    mcs_f: float
    n_vars: int

    @property
    def delta(self) -> float:
        return self.mcs_ibia - self.mcs_f


def compare_full_compile(ctf: CliqueForest, dag: BayesNet) -> SizeReport:
    """Max clique size of ``ctf`` against min-fill compilation of the
    sub-network induced by its variables."""
    vs = ctf.variables()
    sub = dag.subnet(vs)
    _, cliques = min_fill_order(moral_graph(sub.parents))
    mcs_f = max((clique_size(sub.cards[v] for v in c) for c in cliques), default=0.0)
    return SizeReport(ctf.max_size(), mcs_f, len(vs))
