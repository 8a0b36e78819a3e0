"""Reduce a calibrated forest to a smaller one over the interface variables.

Exact marginalization (sum out / collapse) runs first; remaining oversized
cliques are shrunk by local marginalization guided by mutual information.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import BuildError, UnsatisfiableApproximationError
from .factor import FactorTable, divide, marginalize, product, sum_out
from .forest import CliqueForest, msg_subgraph

_EPS = 1e-9


@dataclass
class LinkEntry:
    """One approximate clique C' with its source cliques and successor."""
    cid: int
    vars: frozenset
    sources: list
    successor: int | None = None


@dataclass
class InterfaceMap:
    entries: list = field(default_factory=list)
    over_limit: list = field(default_factory=list)   # cliques left above mcs_im
    local: list = field(default_factory=list)        # variables removed by local marginalization

    @property
    def exact_only(self) -> bool:
        return not self.local

    def by_id(self) -> dict:
        return {e.cid: e for e in self.entries}

    def links(self):
        """(source clique, approx entry, successor) triples."""
        for e in self.entries:
            for s in e.sources:
                yield s, e, e.successor


# mutual information

def mutual_information(joint: np.ndarray) -> float:
    """MI in nats of a 2-D joint table (normalized internally); 0 log 0 = 0."""
    p = np.asarray(joint, dtype=float)
    s = p.sum()
    if s <= 0:
        return 0.0
    p = p / s
    px = p.sum(axis=1, keepdims=True)
    py = p.sum(axis=0, keepdims=True)
    den = px * py
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / den[nz]))))


def pair_mi(belief: FactorTable, v: int, x: int) -> float:
    m = marginalize(belief, [v, x]).values
    if v > x:
        m = m.T
    return mutual_information(m)


def _pairs_with(vals: np.ndarray, x_ax: int, axes: list, out: dict):
    """Joint tables of (axis a, axis x_ax) for every a in ``axes``; sums the
    other half away at each level so the total work stays near one pass."""
    if len(axes) == 1:
        a = axes[0]
        rest = tuple(i for i in range(vals.ndim) if i not in (a, x_ax))
        m = vals.sum(axis=rest) if rest else vals
        out[a] = m if a < x_ax else m.T
        return
    h = len(axes) // 2
    for part, other in ((axes[:h], axes[h:]), (axes[h:], axes[:h])):
        sub = vals.sum(axis=tuple(other), keepdims=True)
        _pairs_with(sub, x_ax, part, out)


def mi_with(belief: FactorTable, x: int, others) -> dict:
    """MI between x and each variable of ``others`` inside one belief."""
    others = [v for v in others if v != x]
    if not others:
        return {}
    xa = belief.axis(x)
    tabs: dict = {}
    _pairs_with(belief.values, xa, [belief.axis(v) for v in others], tabs)
    return {v: mutual_information(tabs[belief.axis(v)]) for v in others}


@dataclass
class MiScores:
    mlmi: dict = field(default_factory=dict)     # (var, clique id) -> value
    maxmi: dict = field(default_factory=dict)    # var -> value


def mi_scores(ctf: CliqueForest, iv: Iterable[int], candidates: Iterable[int]) -> MiScores:
    """MLMI for every (variable, containing clique) and maxMI per variable,
    for the variables that occur in the candidate cliques."""
    iv = set(iv)
    idx = ctf.var_index()
    vars_ = set()
    for c in candidates:
        vars_ |= ctf.cliques[c].vars
    need = sorted({c for v in vars_ for c in idx[v]})
    out = MiScores()
    for cid in need:
        c = ctf.cliques[cid]
        best = {v: 0.0 for v in c.vars}
        for x in sorted(c.vars & iv):
            for v, val in mi_with(c.belief, x, sorted(c.vars)).items():
                best[v] = max(best[v], val)
        for v, val in best.items():
            out.mlmi[(v, cid)] = val
    for v in sorted(vars_):
        out.maxmi[v] = max(out.mlmi[(v, c)] for c in idx[v])
    return out


# helpers on the working forest

def _collapse(a: CliqueForest, cl: list[int], v: int, sources: dict) -> int:
    """Fuse the connected cliques ``cl`` and sum out ``v`` exactly."""
    cs = set(cl)
    joint = None
    for cid in sorted(cl):
        b = a.cliques[cid].belief
        joint = b if joint is None else product(joint, b)
    for x, y in a.edges():
        if x in cs and y in cs:
            joint = divide(joint, marginalize(a.cliques[x].belief, a.sepset(x, y)))
    joint = sum_out(joint, [v]).normalized()[0]
    logz = a.cliques[cl[0]].log_z
    outside = sorted({n for c in cl for n in a.adj[c] if n not in cs})
    src = set()
    for c in cl:
        src |= sources.pop(c)
    for c in cl:
        a.remove_clique(c)
    new = a.add_clique(joint.scope)
    a.cliques[new].belief = joint
    a.cliques[new].log_z = logz
    for n in outside:
        a.connect(new, n)
    sources[new] = src
    return new


def _drop_var(a: CliqueForest, cid: int, v: int):
    c = a.cliques[cid]
    c.vars = c.vars - {v}
    c.belief = sum_out(c.belief, [v])


def _prune(a: CliqueForest, sources: dict):
    for gone, _ in a.remove_nonmaximal():
        sources.pop(gone, None)


def _exact_marginalization(a: CliqueForest, iv: set, mcs_im: float, sources: dict):
    while True:
        idx = a.var_index()
        nivs = sorted((v for v in idx if v not in iv), key=lambda v: (len(idx[v]), v))
        done = True
        for v in nivs:
            cl = idx[v]
            if len(cl) == 1:
                cid = cl[0]
                if a.cliques[cid].vars == {v}:
                    continue
                _drop_var(a, cid, v)
            else:
                union = set().union(*(a.cliques[c].vars for c in cl))
                if a.scope_size(union) > mcs_im + _EPS:
                    continue
                _collapse(a, cl, v, sources)
            done = False
            break
        if done:
            return
        _prune(a, sources)


def _retained_subtree(a: CliqueForest, cl: list[int], crv: int, mcs_im: float) -> list[int]:
    cs = set(cl)
    seen, q = {crv}, deque([crv])
    while q:
        x = q.popleft()
        for n in sorted(a.adj[x] & cs):
            if n not in seen and a.size(n) <= mcs_im + _EPS:
                seen.add(n)
                q.append(n)
    return sorted(seen)


def _local_marginalization(a: CliqueForest, iv: set, mcs_im: float, evidence: bool, sources: dict,
                           src_forest: CliqueForest, removed: list) -> list[int]:
    lc = {c for c in a.cliques if a.size(c) > mcs_im + _EPS}
    if not lc:
        return []
    sc = mi_scores(a, iv, lc)
    in_lc = set().union(*(a.cliques[c].vars for c in lc))
    niv = sorted((v for v in in_lc if v not in iv), key=lambda v: (sc.maxmi[v], v))
    ivs = sorted((v for v in in_lc if v in iv), key=lambda v: (sc.maxmi[v], v))
    for v in niv + ivs:
        if not lc:
            break
        cl = a.cliques_with(v)
        if not any(c in lc for c in cl):
            continue
        small = [c for c in cl if a.size(c) <= mcs_im + _EPS]
        if small:
            def score(c):
                if (v, c) not in sc.mlmi:
                    co = sorted((a.cliques[c].vars & iv) - {v})
                    sc.mlmi[(v, c)] = max((pair_mi(a.cliques[c].belief, v, x) for x in co), default=0.0)
                return sc.mlmi[(v, c)]
            crv = min(small, key=lambda c: (-score(c), c))
            st_r = _retained_subtree(a, cl, crv, mcs_im)
        else:
            st_r = []
        lm = [c for c in cl if c not in st_r]
        if evidence:
            seps = [len(a.sepset(x, y)) for x in lm for y in a.adj[x] if v in a.cliques[y].vars]
            ms = min(seps) if seps else math.inf
            if ms == 1 or (not st_r and v in iv):
                continue
        elif not st_r and v in iv:
            home = cl[0]
            marg = marginalize(a.cliques[home].belief, [v]).normalized()[0]
            src = sorted(s for s in sources[home] if v in src_forest.cliques[s].vars)
            new = a.add_clique([v])
            a.cliques[new].belief = marg
            a.cliques[new].log_z = a.cliques[home].log_z
            sources[new] = set(src)
        removed.append(v)
        for c in lm:
            _drop_var(a, c, v)
        for c in lm:
            if c in a.cliques and not a.cliques[c].vars:
                a.remove_clique(c)
                sources.pop(c, None)
        for x, y in a.edges():
            if not a.sepset(x, y):
                a.disconnect(x, y)
        _prune(a, sources)
        lc = {c for c in lc if c in a.cliques and a.size(c) > mcs_im + _EPS}
    return sorted(lc)


def reassign_factors(a: CliqueForest):
    """Root (lowest id per tree) gets its belief, every other clique its
    belief conditioned on the sepset towards the root."""
    for tree in a.trees():
        root = tree[0]
        rc = a.cliques[root]
        rc.factors = [rc.belief.with_scale(rc.log_z)]
        ts = set(tree)
        seen, q = {root}, deque([root])
        while q:
            x = q.popleft()
            for n in sorted(a.adj[x] & ts):
                if n in seen:
                    continue
                seen.add(n)
                q.append(n)
                b = a.cliques[n].belief
                a.cliques[n].factors = [divide(b, marginalize(b, a.sepset(x, n)))]


def approximate_ctf(ctf_in: CliqueForest, iv: Iterable[int], mcs_im: float, evidence: bool
                    ) -> tuple[CliqueForest, InterfaceMap]:
    """Return the approximate forest over the minimal subgraph of ``iv`` and
    its interface map back to ``ctf_in``."""
    iv = set(iv)
    if not ctf_in.calibrated:
        raise BuildError("approximation needs a calibrated forest")
    ids = msg_subgraph(ctf_in, iv) if iv else set()
    a = ctf_in.subforest(ids)
    a.sep_beliefs = {}
    for c in a.cliques.values():
        c.factors = []
    sources = {cid: {cid} for cid in a.cliques}
    _exact_marginalization(a, iv, mcs_im, sources)
    im = InterfaceMap()
    left = _local_marginalization(a, iv, mcs_im, evidence, sources, ctf_in, im.local)
    if left and evidence:
        for c in left:
            if a.cliques[c].vars <= iv:
                names = sorted(a.cliques[c].vars)
                raise UnsatisfiableApproximationError(
                    f"clique {c} over {names} holds only interface variables and cannot be "
                    f"reduced to size {mcs_im}", clique=names)
    im.over_limit = left
    reassign_factors(a)
    for cid in sorted(a.cliques):
        cv = a.cliques[cid].vars
        src = sorted(s for s in sources[cid] if ctf_in.cliques[s].vars & cv)
        im.entries.append(LinkEntry(cid, cv, src))
    a.calibrated = True
    return a, im


def update_interface_map(im: InterfaceMap, ctf_next: CliqueForest) -> InterfaceMap:
    """Give every approximate clique a containing clique in the next forest."""
    for e in im.entries:
        c = ctf_next.cliques.get(e.cid)
        if c is not None and e.vars <= c.vars:
            e.successor = e.cid
            continue
        cand = [x for x in ctf_next.cliques.values() if e.vars <= x.vars]
        if not cand:
            raise BuildError(f"approximate clique {sorted(e.vars)} has no container in the next forest")
        e.successor = min(cand, key=lambda x: (ctf_next.size(x.id), x.id)).id
    return im
