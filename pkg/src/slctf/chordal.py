"""Greedy triangulation and junction-tree assembly for small undirected graphs."""
from __future__ import annotations

from typing import Iterable, Mapping


def _fill(adj, v):
    nb = list(adj[v])
    n = 0
    for i in range(len(nb)):
        ai = adj[nb[i]]
        for j in range(i + 1, len(nb)):
            if nb[j] not in ai:
                n += 1
    return n


def min_fill_order(adj: Mapping[int, Iterable[int]]) -> tuple[list[int], list[frozenset]]:
    """Eliminate by min-fill, then fewest neighbours, then lowest id.

    Returns the order and the maximal cliques it induces. Fill counts are
    refreshed only around the eliminated vertex.
    """
    g = {v: set(n) for v, n in adj.items()}
    for v, ns in list(g.items()):
        for u in ns:
            g.setdefault(u, set()).add(v)
    fill = {v: _fill(g, v) for v in g}
    order, cliques = [], []
    while g:
        v = min(g, key=lambda x: (fill[x], len(g[x]), x))
        nb = g[v]
        cliques.append(frozenset(nb | {v}))
        touched = set(nb)
        nbl = sorted(nb)
        for i, a in enumerate(nbl):
            for b in nbl[i + 1:]:
                if b not in g[a]:
                    g[a].add(b)
                    g[b].add(a)
        for u in nb:
            g[u].discard(v)
            touched |= g[u]
        del g[v]
        del fill[v]
        order.append(v)
        for u in touched:
            if u in g:
                fill[u] = _fill(g, u)
    return order, maximal_sets(cliques)


def maximal_sets(sets: Iterable[frozenset]) -> list[frozenset]:
    """Drop sets contained in another; keep first occurrence order."""
    uniq = []
    for s in sets:
        if s not in uniq:
            uniq.append(s)
    by_size = sorted(range(len(uniq)), key=lambda i: -len(uniq[i]))
    keep = []
    for i in by_size:
        if not any(uniq[i] <= uniq[j] for j in keep):
            keep.append(i)
    return [uniq[i] for i in sorted(keep)]


def junction_edges(cliques: list[frozenset]) -> list[tuple[int, int]]:
    """Maximum-weight spanning forest over clique indices (weight = |intersection|)."""
    cand = []
    for i in range(len(cliques)):
        for j in range(i + 1, len(cliques)):
            w = len(cliques[i] & cliques[j])
            if w:
                cand.append((-w, i, j))
    cand.sort()
    parent = list(range(len(cliques)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in cand:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j))
    return edges


def moral_graph(parents: Mapping[int, Iterable[int]]) -> dict[int, set]:
    adj: dict[int, set] = {v: set() for v in parents}
    for v, ps in parents.items():
        fam = list(ps) + [v]
        for i, a in enumerate(fam):
            adj.setdefault(a, set())
            for b in fam[i + 1:]:
                if a != b:
                    adj[a].add(b)
                    adj.setdefault(b, set()).add(a)
    return adj
