"""Small hand-built networks used by tests, docs and the CLI examples."""
from __future__ import annotations

import numpy as np

from .factor import FactorTable
from .network import BayesNet

SEVEN_EDGES = [("a", "d"), ("b", "d"), ("b", "e"), ("c", "e"), ("e", "f"), ("d", "g"), ("f", "g")]

SEVENTEEN_EDGES = [
    ("a", "e"), ("a", "f"), ("b", "e"), ("b", "f"), ("c", "j"), ("d", "g"), ("d", "h"), ("d", "k"),
    ("d", "o"), ("f", "g"), ("f", "n"), ("f", "p"), ("g", "h"), ("h", "i"), ("h", "j"), ("h", "k"),
    ("i", "l"), ("j", "m"), ("k", "q"), ("l", "q"), ("m", "o"), ("m", "n"), ("o", "p"), ("o", "q"),
]


def from_edges(names: str, edges, seed=0, card: int = 2, alpha: float = 1.0) -> BayesNet:
    """Binary (or ``card``-ary) net over single-letter names with Dirichlet CPDs."""
    rng = np.random.default_rng(seed)
    ids = {n: i for i, n in enumerate(names)}
    parents = {i: [] for i in ids.values()}
    for p, c in edges:
        parents[ids[c]].append(ids[p])
    cards = {i: card for i in ids.values()}
    cpds = {}
    for v in sorted(parents):
        ps = tuple(sorted(parents[v]))
        parents[v] = ps
        tab = rng.dirichlet(np.full(card, alpha), size=card ** len(ps))
        scope = list(ps) + [v]
        cpds[v] = FactorTable.from_ordered(scope, [card] * len(scope), tab.reshape(-1))
    return BayesNet(cards, parents, cpds, {i: n for n, i in ids.items()})


def seven_variable_net(seed=0) -> BayesNet:
    return from_edges("abcdefg", SEVEN_EDGES, seed)


def seventeen_variable_net(seed=0) -> BayesNet:
    return from_edges("abcdefghijklmnopq", SEVENTEEN_EDGES, seed)


# evidence on e and p (ids 4 and 15)
SEVENTEEN_EVIDENCE = {4: 0, 15: 1}
