import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import marginals_by_loops
from slctf.demo import seven_variable_net, seventeen_variable_net
from slctf.errors import ContractError, ModelError
from slctf.factor import FactorTable
from slctf.network import (BayesNet, random_bayesnet, random_evidence, simplify, split_components, topo_levels,
                           topo_order)
from slctf.oracle import enumerate_joint


def make_net(parents: dict, tables: dict, card=2):
    """Binary net from {child: parents} and {child: table in (parents..., child) order}."""
    cards = {v: card for v in parents}
    cpds = {v: FactorTable.from_ordered(list(parents[v]) + [v], [card] * (len(parents[v]) + 1), tables[v])
            for v in parents}
    return BayesNet(cards, {v: tuple(sorted(p)) for v, p in parents.items()}, cpds)


def _check_preserved(net, ev):
    """Simplified model answers PR and free-variable marginals like the original."""
    z, ref = marginals_by_loops(net, ev)
    sm = simplify(net, ev)
    if z == 0:
        assert sm.inconsistent
        return
    assert not sm.inconsistent
    log_pr = sm.log_const
    got = {}
    for dag, e in zip(sm.dags, sm.evidence):
        j = enumerate_joint(dag, e)
        log_pr += j.log_total()
        tot = j.values.sum()
        for v in dag.variables:
            ax = tuple(i for i, u in enumerate(j.scope) if u != v)
            got[v] = j.values.sum(axis=ax) / tot
    assert log_pr == pytest.approx(math.log(z), rel=1e-9, abs=1e-12)
    covered = set(sm.fixed) | set(sm.collapsed) | set().union(*(d.variables for d in sm.dags))
    assert covered == set(net.variables)
    for v in net.variables:
        src, inv = sm.source_of(v)
        while src in sm.collapsed:
            s2, i2 = sm.collapsed[src]
            src, inv = s2, inv ^ i2
        if src in sm.fixed:
            p = np.zeros(net.cards[src])
            p[sm.fixed[src]] = 1.0
        else:
            p = got[src]
        if inv:
            p = p[::-1]
        np.testing.assert_allclose(p, ref[v], atol=1e-9)


def test_bayesnet_validation():
    f = FactorTable((0,), (2,), [0.5, 0.5])
    with pytest.raises(ModelError):
        BayesNet({0: 2, 1: 2}, {1: (0,)}, {0: f})
    with pytest.raises(ModelError):
        BayesNet({0: 2, 1: 2}, {1: (0,)}, {0: f, 1: FactorTable((1,), (2,), [0.5, 0.5])})
    bad = make_net({0: ()}, {0: [0.6, 0.3]})
    with pytest.raises(ModelError):
        bad.check_cpds()
    net = seven_variable_net(0)
    with pytest.raises(ContractError):
        net.subnet({3})


def test_topo_levels_seven():
    lv = topo_levels(seven_variable_net(0))
    assert lv == {0: 0, 1: 0, 2: 0, 3: 1, 4: 1, 5: 2, 6: 3}
    assert topo_order(seven_variable_net(0)) == [0, 1, 2, 3, 4, 5, 6]


def test_topo_levels_small_cases():
    assert topo_levels(make_net({0: ()}, {0: [0.5, 0.5]})) == {0: 0}
    net = seventeen_variable_net(0)
    lv = topo_levels(net)
    # longest incoming path by plain recursion
    def depth(v):
        return max((1 + depth(p) for p in net.parents[v]), default=0)
    assert lv == {v: depth(v) for v in net.variables}
    assert lv[16] == 7        # q, via a f g h j m o q


def test_cycle_detected():
    net = make_net({0: (), 1: (0,)}, {0: [0.5, 0.5], 1: [0.5, 0.5, 0.5, 0.5]})
    net.parents[0] = (1,)
    with pytest.raises(ModelError):
        topo_levels(net)


def test_split_components():
    net = make_net({0: (), 1: (0,), 2: (), 3: (2,)},
                   {0: [.5, .5], 1: [.9, .1, .2, .8], 2: [.5, .5], 3: [.9, .1, .2, .8]})
    parts = split_components(net)
    assert [p.variables for p in parts] == [[0, 1], [2, 3]]
    assert len(split_components(seven_variable_net(0))) == 1


@pytest.mark.parametrize("seed", range(10))
def test_components_match_union_find(seed):
    net = random_bayesnet(20, seed, 2)
    ev = random_evidence(net, 5, seed)
    sm = simplify(net, ev)
    # a plain union-find over the surviving edges
    root = {v: v for d in sm.dags for v in d.variables}

    def find(x):
        while root[x] != x:
            x = root[x]
        return x
    for d in sm.dags:
        for v in d.variables:
            for p in d.parents[v]:
                root[find(v)] = find(p)
    groups = {}
    for v in root:
        groups.setdefault(find(v), set()).add(v)
    assert sorted(map(sorted, groups.values())) == sorted(d.variables for d in sm.dags)


def test_forcing_cpd_fixes_parents():
    # c = a AND b observed true
    net = make_net({0: (), 1: (), 2: (0, 1)},
                   {0: [.3, .7], 1: [.6, .4], 2: [1, 0, 1, 0, 1, 0, 0, 1]})
    sm = simplify(net, {2: 1})
    assert sm.fixed == {0: 1, 1: 1, 2: 1}
    assert sm.dags == []
    assert sm.log_const == pytest.approx(math.log(0.7 * 0.4))
    _check_preserved(net, {2: 1})


def test_buffer_and_inverter_collapse():
    # a -> b (copy) -> c, and a -> d (negation) -> e
    net = make_net({0: (), 1: (0,), 2: (1,), 3: (0,), 4: (3,)},
                   {0: [.3, .7], 1: [1, 0, 0, 1], 2: [.9, .1, .2, .8], 3: [0, 1, 1, 0], 4: [.6, .4, .1, .9]})
    sm = simplify(net, {})
    assert sm.collapsed == {1: (0, False), 3: (0, True)}
    (dag,) = sm.dags
    assert dag.parents[2] == (0,) and dag.parents[4] == (0,)
    _check_preserved(net, {})
    _check_preserved(net, {4: 1})


def test_no_evidence_identity():
    net = seventeen_variable_net(2)
    sm = simplify(net, {})
    assert not sm.fixed and not sm.collapsed
    (dag,) = sm.dags
    assert dag.parents == net.parents


def test_independent_parent_dropped():
    # P(c | a, b) does not depend on a
    net = make_net({0: (), 1: (), 2: (0, 1)},
                   {0: [.5, .5], 1: [.5, .5], 2: [.9, .1, .3, .7, .9, .1, .3, .7]})
    sm = simplify(net, {})
    assert [d.variables for d in sm.dags] == [[0], [1, 2]]
    _check_preserved(net, {})


def test_inconsistent_evidence():
    net = make_net({0: (), 1: (0,)}, {0: [1.0, 0.0], 1: [1, 0, 0, 1]})
    sm = simplify(net, {1: 1})
    assert sm.inconsistent and sm.log_const == -math.inf
    with pytest.raises(ContractError):
        simplify(net, {1: 5})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 5), st.sampled_from([0.0, 0.3]))
def test_simplify_preserves_queries(seed, k, det):
    rng = np.random.default_rng(seed)
    net = random_bayesnet(int(rng.integers(3, 12)), rng, 3, det_frac=det)
    ev = random_evidence(net, k, rng)
    _check_preserved(net, ev)


@pytest.mark.parametrize("seed", range(15))
def test_simplify_reaches_fixed_point(seed):
    rng = np.random.default_rng(seed)
    net = random_bayesnet(12, rng, 3, det_frac=0.3)
    ev = random_evidence(net, 3, rng)
    sm = simplify(net, ev)
    if sm.inconsistent or not sm.dags:
        return
    cards, parents, cpds, e = {}, {}, {}, {}
    for d, de in zip(sm.dags, sm.evidence):
        cards.update(d.cards)
        parents.update(d.parents)
        cpds.update(d.cpds)
        e.update(de)
    again = simplify(BayesNet(cards, parents, cpds), e)
    assert not again.collapsed
    assert again.fixed == e
    assert [(d.variables, d.parents) for d in again.dags] == [(d.variables, d.parents) for d in sm.dags]
