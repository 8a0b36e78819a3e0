"""Clique tree forests: structure, validity checks, minimal subgraphs and
two-pass calibration."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ContractError, InconsistentEvidenceError
from .factor import FactorTable, clique_size, divide, marginalize, product, product_all


@dataclass
class Clique:
    id: int
    vars: frozenset
    factors: list = field(default_factory=list)
    belief: FactorTable | None = None
    log_z: float = 0.0

    @property
    def scope(self) -> tuple:
        return tuple(sorted(self.vars))


def _ekey(a, b):
    return (a, b) if a < b else (b, a)


class CliqueForest:
    """Cliques joined into trees by sepset edges; sepset scope is the
    intersection of the endpoint scopes."""

    def __init__(self, cards: Mapping[int, int]):
        self.cards = dict(cards)
        self.cliques: dict[int, Clique] = {}
        self.adj: dict[int, set] = {}
        self.sep_beliefs: dict[tuple, FactorTable] = {}
        self.next_id = 0
        self.calibrated = False

    # structure edits
    def add_clique(self, vars: Iterable[int], factors=(), cid: int | None = None) -> int:
        vars = frozenset(vars)
        if not vars:
            raise ContractError("clique scope must be nonempty")
        for v in vars:
            if v not in self.cards:
                raise ContractError(f"unknown variable {v}")
        if cid is None:
            cid = self.next_id
        if cid in self.cliques:
            raise ContractError(f"clique id {cid} already used")
        self.next_id = max(self.next_id, cid + 1)
        self.cliques[cid] = Clique(cid, vars, list(factors))
        self.adj[cid] = set()
        self.calibrated = False
        return cid

    def remove_clique(self, cid: int):
        for n in list(self.adj[cid]):
            self.disconnect(cid, n)
        del self.adj[cid]
        del self.cliques[cid]
        self.calibrated = False

    def connect(self, a: int, b: int):
        if a == b:
            raise ContractError("self loop")
        self.adj[a].add(b)
        self.adj[b].add(a)
        self.calibrated = False

    def disconnect(self, a: int, b: int):
        self.adj[a].discard(b)
        self.adj[b].discard(a)
        self.sep_beliefs.pop(_ekey(a, b), None)

    def absorb(self, cid: int, into: int):
        """Remove ``cid`` (a subset of ``into``); its neighbours and factors move over."""
        c = self.cliques[cid]
        self.cliques[into].factors.extend(c.factors)
        for n in sorted(self.adj[cid]):
            if n != into:
                self.connect(n, into)
        self.remove_clique(cid)

    def remove_nonmaximal(self, protect=()) -> list[tuple[int, int]]:
        """Absorb cliques whose scope sits inside a neighbour. Returns (gone, into) pairs."""
        merged = []
        changed = True
        while changed:
            changed = False
            for cid in sorted(self.cliques):
                if cid in protect:
                    continue
                c = self.cliques[cid]
                for n in sorted(self.adj[cid], key=lambda x: (-len(self.cliques[x].vars), x)):
                    if c.vars <= self.cliques[n].vars:
                        self.absorb(cid, n)
                        merged.append((cid, n))
                        changed = True
                        break
                if changed:
                    break
        return merged

    # queries
    def sepset(self, a: int, b: int) -> frozenset:
        return self.cliques[a].vars & self.cliques[b].vars

    def edges(self) -> list[tuple[int, int]]:
        return sorted({_ekey(a, b) for a, ns in self.adj.items() for b in ns})

    def size(self, cid: int) -> float:
        return clique_size(self.cards[v] for v in self.cliques[cid].vars)

    def scope_size(self, vars) -> float:
        return clique_size(self.cards[v] for v in vars)

    def max_size(self) -> float:
        return max((self.size(c) for c in self.cliques), default=0.0)

    def variables(self) -> set:
        out = set()
        for c in self.cliques.values():
            out |= c.vars
        return out

    def cliques_with(self, v: int) -> list[int]:
        return sorted(c.id for c in self.cliques.values() if v in c.vars)

    def var_index(self) -> dict[int, list[int]]:
        idx: dict[int, list[int]] = {}
        for cid in sorted(self.cliques):
            for v in self.cliques[cid].vars:
                idx.setdefault(v, []).append(cid)
        return idx

    def trees(self) -> list[list[int]]:
        seen, out = set(), []
        for s in sorted(self.cliques):
            if s in seen:
                continue
            comp, q = [], deque([s])
            seen.add(s)
            while q:
                x = q.popleft()
                comp.append(x)
                for n in self.adj[x]:
                    if n not in seen:
                        seen.add(n)
                        q.append(n)
            out.append(sorted(comp))
        return out

    def tree_map(self) -> dict[int, int]:
        """Clique id -> smallest clique id of its tree."""
        m = {}
        for t in self.trees():
            for c in t:
                m[c] = t[0]
        return m

    def all_factors(self) -> list:
        out = []
        for cid in sorted(self.cliques):
            out.extend(self.cliques[cid].factors)
        return out

    def copy(self) -> "CliqueForest":
        f = CliqueForest(self.cards)
        for cid, c in self.cliques.items():
            f.cliques[cid] = Clique(cid, c.vars, list(c.factors), c.belief, c.log_z)
            f.adj[cid] = set(self.adj[cid])
        f.sep_beliefs = dict(self.sep_beliefs)
        f.next_id = self.next_id
        f.calibrated = self.calibrated
        return f

    def subforest(self, ids: Iterable[int]) -> "CliqueForest":
        ids = set(ids)
        f = CliqueForest(self.cards)
        for cid in sorted(ids):
            c = self.cliques[cid]
            f.cliques[cid] = Clique(cid, c.vars, list(c.factors), c.belief, c.log_z)
            f.adj[cid] = self.adj[cid] & ids
        f.sep_beliefs = {k: v for k, v in self.sep_beliefs.items() if k[0] in ids and k[1] in ids}
        f.next_id = self.next_id
        f.calibrated = self.calibrated
        return f

    def sep_belief(self, a: int, b: int) -> FactorTable:
        k = _ekey(a, b)
        if k in self.sep_beliefs:
            return self.sep_beliefs[k]
        return marginalize(self.cliques[a].belief, self.sepset(a, b))

    def marginal(self, v: int) -> np.ndarray:
        """Normalized singleton marginal from the lowest-id clique holding v."""
        for cid in sorted(self.cliques):
            c = self.cliques[cid]
            if v in c.vars:
                m = marginalize(c.belief, [v]).values
                s = m.sum()
                return m / s if s > 0 else np.full(m.shape, 1.0 / m.size)
        raise ContractError(f"variable {v} not in forest")

    def log_z_by_tree(self) -> dict[int, float]:
        return {t[0]: self.cliques[t[0]].log_z for t in self.trees()}

    def dump(self, names: Mapping[int, str] | None = None) -> str:
        nm = (lambda v: names.get(v, str(v))) if names else str
        lines = []
        for t in self.trees():
            lines.append(f"tree {t[0]}")
            for cid in t:
                sc = " ".join(nm(v) for v in sorted(self.cliques[cid].vars))
                lines.append(f"  clique {cid} size={self.size(cid):.3g} [{sc}]")
            for a, b in self.edges():
                if a in t:
                    sp = " ".join(nm(v) for v in sorted(self.sepset(a, b)))
                    lines.append(f"  edge {a}-{b} [{sp}]")
        return "\n".join(lines)

    def __repr__(self):
        return f"CliqueForest({len(self.cliques)} cliques, {len(self.trees())} trees)"


# validity

@dataclass
class ValidityReport:
    problems: list = field(default_factory=list)

    def add(self, kind: str, detail):
        self.problems.append((kind, detail))

    @property
    def ok(self) -> bool:
        return not self.problems

    def kinds(self) -> set:
        return {k for k, _ in self.problems}

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "valid"
        return "\n".join(f"{k}: {d}" for k, d in self.problems)


def check_valid(ctf: CliqueForest, expected_factors=None) -> ValidityReport:
    """Forest shape, maximality, running intersection and factor coverage."""
    rep = ValidityReport()
    for a, ns in ctf.adj.items():
        for b in ns:
            if a not in ctf.adj.get(b, ()):
                rep.add("forest", f"asymmetric edge {a}-{b}")
    trees = ctf.trees()
    for t in trees:
        ts = set(t)
        ne = sum(len(ctf.adj[c] & ts) for c in t) // 2
        if ne != len(t) - 1:
            rep.add("forest", f"tree {t[0]} has {len(t)} cliques and {ne} edges")
    for t in trees:
        for i in t:
            for j in t:
                if i != j and ctf.cliques[i].vars <= ctf.cliques[j].vars:
                    if ctf.cliques[i].vars == ctf.cliques[j].vars and i > j:
                        continue
                    rep.add("maximality", (i, j))
    idx = ctf.var_index()
    tm = ctf.tree_map()
    for v, cids in idx.items():
        roots = {tm[c] for c in cids}
        if len(roots) > 1:
            rep.add("rip", f"variable {v} appears in trees {sorted(roots)}")
            continue
        s = set(cids)
        seen, q = {cids[0]}, deque([cids[0]])
        while q:
            x = q.popleft()
            for n in ctf.adj[x]:
                if n in s and n not in seen:
                    seen.add(n)
                    q.append(n)
        if seen != s:
            rep.add("rip", f"variable {v}: cliques {sorted(s)} not connected")
    held = {}
    for cid, c in ctf.cliques.items():
        for f in c.factors:
            if not set(f.scope) <= c.vars:
                rep.add("coverage", f"factor over {f.scope} in clique {cid} outside its scope")
            held[id(f)] = held.get(id(f), 0) + 1
    if expected_factors is not None:
        for f in expected_factors:
            n = held.get(id(f), 0)
            if n != 1:
                rep.add("coverage", f"factor over {f.scope} held {n} times")
        exp_ids = {id(f) for f in expected_factors}
        for k in held:
            if k not in exp_ids:
                rep.add("coverage", "unexpected factor present")
    return rep


# minimal subgraph

def msg_subgraph(ctf: CliqueForest, V: Iterable[int]) -> set:
    """Clique ids of the minimal subgraph needed for the joint belief of V.

    Per tree: the smallest subtree touching every clique with a V variable,
    then leaves whose V-content is covered by their neighbour are pruned
    (lowest id first) until none qualify.
    """
    V = set(V)
    idx = ctf.var_index()
    for v in V:
        if v not in idx:
            raise ContractError(f"variable {v} is in no clique")
    term = set()
    for v in V:
        term.update(idx[v])
    keep = set()
    for t in ctf.trees():
        ts = set(t)
        tt = ts & term
        if not tt:
            continue
        sub = set(ts)
        deg = {c: len(ctf.adj[c] & sub) for c in sub}
        leaves = deque(sorted(c for c in sub if deg[c] <= 1 and c not in tt))
        while leaves:
            c = leaves.popleft()
            if c not in sub or len(sub) == 1:
                continue
            sub.discard(c)
            for n in ctf.adj[c]:
                if n in sub:
                    deg[n] -= 1
                    if deg[n] <= 1 and n not in tt:
                        leaves.append(n)
        keep |= _prune_covered_leaves(ctf, sub, V)
    return keep


def _prune_covered_leaves(ctf, sub: set, V: set) -> set:
    sub = set(sub)
    while len(sub) > 1:
        done = True
        for c in sorted(sub):
            nbs = ctf.adj[c] & sub
            if len(nbs) != 1:
                continue
            n = next(iter(nbs))
            if (ctf.cliques[c].vars & V) <= (ctf.cliques[n].vars & V):
                sub.discard(c)
                done = False
                break
        if done:
            break
    return sub


# calibration

def clique_potential(ctf: CliqueForest, cid: int) -> FactorTable:
    c = ctf.cliques[cid]
    sc = c.scope
    return product_all(c.factors, sc, [ctf.cards[v] for v in sc])


def _tree_schedule(ctf: CliqueForest, tree: list[int], root: int):
    """(parent, child) pairs in BFS order from the root."""
    ts = set(tree)
    order, seen, q = [], {root}, deque([root])
    while q:
        x = q.popleft()
        for n in sorted(ctf.adj[x] & ts):
            if n not in seen:
                seen.add(n)
                order.append((x, n))
                q.append(n)
    return order


def calibrate(ctf: CliqueForest, root_choice: Mapping[int, int] | None = None) -> CliqueForest:
    """Collect/distribute sum-product passes; beliefs are stored normalized and
    each clique carries the natural-log normalization constant of its tree."""
    beliefs = {cid: clique_potential(ctf, cid) for cid in ctf.cliques}
    seps: dict[tuple, FactorTable] = {}
    for tree in ctf.trees():
        root = tree[0] if root_choice is None else root_choice.get(tree[0], tree[0])
        sched = _tree_schedule(ctf, tree, root)
        for p, c in reversed(sched):
            msg = marginalize(beliefs[c], ctf.sepset(p, c))
            beliefs[p] = product(beliefs[p], msg)
            seps[_ekey(p, c)] = msg
        for p, c in sched:
            k = _ekey(p, c)
            msg = marginalize(beliefs[p], ctf.sepset(p, c))
            beliefs[c] = product(beliefs[c], divide(msg, seps[k]))
            seps[k] = msg
        _, logz = beliefs[root].normalized()
        if logz == -math.inf:
            raise InconsistentEvidenceError(f"tree {tree[0]} has zero normalization constant")
        for cid in tree:
            b, _ = beliefs[cid].normalized()
            ctf.cliques[cid].belief = b
            ctf.cliques[cid].log_z = logz
        for p, c in sched:
            k = _ekey(p, c)
            seps[k] = seps[k].normalized()[0]
    ctf.sep_beliefs = seps
    ctf.calibrated = True
    return ctf


def propagate_from(ctf: CliqueForest, root: int, clamp: float = 1e-16):
    """Single outward pass from ``root`` after its belief changed."""
    tree = next(t for t in ctf.trees() if root in t)
    for p, c in _tree_schedule(ctf, tree, root):
        k = _ekey(p, c)
        new = marginalize(ctf.cliques[p].belief, ctf.sepset(p, c)).normalized()[0]
        old = ctf.sep_belief(p, c)
        upd = product(ctf.cliques[c].belief, divide(new, old, clamp=clamp))
        ctf.cliques[c].belief = upd.normalized()[0]
        ctf.sep_beliefs[k] = new


def forest_joint(ctf: CliqueForest, use_beliefs: bool = False) -> FactorTable:
    """Dense product of assigned factors, or of beliefs over sepset beliefs
    (scaled by the tree constants). Small forests only."""
    out = FactorTable.scalar()
    if not use_beliefs:
        for f in ctf.all_factors():
            out = product(out, f)
        for v in sorted(ctf.variables() - set(out.scope)):
            out = product(out, FactorTable.ones((v,), (ctf.cards[v],)))
        return out
    for t in ctf.trees():
        part = FactorTable.scalar(1.0, ctf.cliques[t[0]].log_z)
        for cid in t:
            part = product(part, ctf.cliques[cid].belief)
        for a, b in ctf.edges():
            if a in t:
                part = divide(part, ctf.sep_belief(a, b))
        out = product(out, part)
    return out
