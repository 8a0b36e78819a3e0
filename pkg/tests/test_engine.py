import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import marginals_by_loops
from slctf.approximate import InterfaceMap, LinkEntry
from slctf.demo import SEVENTEEN_EVIDENCE, seventeen_variable_net
from slctf.engine import (Link, apply_link, construct_slctf, infer_mar_e, infer_mar_p, infer_pr, run,
                          select_update_links)
from slctf.errors import ContractError, UnsatisfiableApproximationError
from slctf.factor import FactorTable, marginalize
from slctf.forest import CliqueForest, calibrate, check_valid
from slctf.network import BayesNet, random_bayesnet, random_evidence
from slctf.oracle import exact_query


def test_running_example_sequence():
    net = seventeen_variable_net(0)
    s = construct_slctf(net, SEVENTEEN_EVIDENCE, True, 4, 3, link=True)
    assert s.n_ctf == 2 and s.i_e == 2
    assert len(s.ims) == 1
    assert all(e.successor in s.ctfs[1].cliques for e in s.ims[0].entries)
    assert s.added[1] == {15, 16}


def test_large_bound_single_forest():
    net = seventeen_variable_net(0)
    s = construct_slctf(net, SEVENTEEN_EVIDENCE, True, 20, 15)
    assert s.n_ctf == 1 and not s.ims and s.i_e == 1


@pytest.mark.parametrize("seed", range(5))
def test_every_variable_placed(seed):
    net = random_bayesnet(40, seed, 3, window=12)
    s = construct_slctf(net, {}, False, 10, 7)
    placed = set().union(*s.added)
    assert placed == set(net.variables)
    for ctf in s.ctfs:
        assert check_valid(ctf).ok
        assert ctf.max_size() <= 10 + 1e-9
    assert s.i_e == 0


def test_pr_examples():
    net = seventeen_variable_net(0)
    assert run(net, {}, "PR", 4, 3).log_pr == 0.0
    res = run(net, SEVENTEEN_EVIDENCE, "PR", 20, 15)
    z, _ = marginals_by_loops(net, SEVENTEEN_EVIDENCE)
    assert res.log_pr == pytest.approx(math.log(z), rel=1e-9)
    res = run(net, SEVENTEEN_EVIDENCE, "PR", 4, 3)
    assert abs(res.log_pr - math.log(z)) <= 0.5
    assert res.metadata["n_ctf"] == [2]


def test_prior_marginals():
    net = seventeen_variable_net(1)
    s = construct_slctf(net, {}, False, 4, 3)
    _, ref = marginals_by_loops(net)
    got = infer_mar_p(s)
    for v in s.added[0]:
        np.testing.assert_allclose(got[v], ref[v], atol=1e-12)
    for v in net.variables:
        holders = [c for c in s.ctfs if v in c.variables()]
        for c in holders[1:]:
            np.testing.assert_allclose(c.marginal(v), holders[0].marginal(v), atol=1e-9)


def test_deterministic_source_marginal():
    cpds = {0: FactorTable((0,), (2,), [1.0, 0.0]),
            1: FactorTable((0, 1), (2, 2), [0.3, 0.7, 0.6, 0.4])}
    net = BayesNet({0: 2, 1: 2}, {1: (0,)}, cpds)
    res = run(net, {}, "MAR_P", 4, 3)
    np.testing.assert_allclose(res.marginals[0], [1.0, 0.0])
    np.testing.assert_allclose(res.marginals[1], [0.3, 0.7])


def test_posterior_running_example():
    net = seventeen_variable_net(0)
    res = run(net, SEVENTEEN_EVIDENCE, "MAR", 4, 3)
    ref = exact_query(net, SEVENTEEN_EVIDENCE, "MAR")
    worst = max(np.abs(res.marginals[v] - ref.marginals[v]).max() for v in net.variables)
    assert worst <= 0.1
    for v, s in SEVENTEEN_EVIDENCE.items():
        assert res.marginals[v][s] == 1.0


def test_no_update_when_evidence_in_first_forest():
    net = seventeen_variable_net(0)
    ev = {4: 0}
    s = construct_slctf(net, ev, True, 4, 3, link=True)
    assert s.i_e == 1
    before = {v: s.ctfs[k].marginal(v) for v, k in s.first_ctf().items()}
    after = infer_mar_e(s)
    for v in before:
        np.testing.assert_array_equal(after[v], before[v])


def test_missing_successors_rejected():
    net = seventeen_variable_net(0)
    s = construct_slctf(net, SEVENTEEN_EVIDENCE, True, 4, 3, link=False)
    with pytest.raises(ContractError):
        infer_mar_e(s)


# link selection on hand-made boundaries

def _chain(tables, cards):
    """Calibrated forest with one clique per table, edges given by shared variables in order."""
    ctf = CliqueForest(cards)
    ids = [ctf.add_clique(t.scope, [t]) for t in tables]
    for i, a in enumerate(ids):
        for b in ids[:i]:
            if ctf.cliques[a].vars & ctf.cliques[b].vars:
                ctf.connect(a, b)
                break
    return calibrate(ctf), ids


def _identity_map(ctf):
    return InterfaceMap([LinkEntry(c, ctf.cliques[c].vars, [c], c) for c in sorted(ctf.cliques)])


def test_links_fallback_one_per_tree():
    cards = {v: 2 for v in range(5)}
    t = [FactorTable((0, 1), (2, 2), [.1, .2, .3, .4]), FactorTable((1, 2), (2, 2), [.5, .1, .2, .2]),
         FactorTable((3, 4), (2, 2), [.4, .1, .1, .4])]
    k, ids = _chain(t, cards)
    k1, _ = _chain(t, cards)
    links = select_update_links(_identity_map(k), k, k1)
    assert len(links) == 2
    assert {k.tree_map()[l.src] for l in links} == {ids[0], ids[2]}
    assert all(l.diff == 0 for l in links)


def test_single_differing_variable_single_link():
    cards = {v: 2 for v in range(3)}
    a = FactorTable((0, 1), (2, 2), [.1, .2, .3, .4])
    k, ids = _chain([a, FactorTable((1, 2), (2, 2), [.5, .5, .5, .5])], cards)
    k1, _ = _chain([a, FactorTable((1, 2), (2, 2), [.9, .1, .9, .1])], cards)
    links = select_update_links(_identity_map(k), k, k1)
    assert [(l.src, l.succ, set(l.vars)) for l in links] == [(ids[1], ids[1], {1, 2})]
    assert links[0].diff == pytest.approx(0.4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_chosen_links_cover_changed_variables(seed):
    rng = np.random.default_rng(seed)
    net = random_bayesnet(14, rng, 3)
    ev = random_evidence(net, 3, rng)
    try:
        s = construct_slctf(net, ev, True, 4, 3, link=True)
    except UnsatisfiableApproximationError:
        return
    for k in range(s.n_ctf - 1):
        im, a, b = s.ims[k], s.ctfs[k], s.ctfs[k + 1]
        links = select_update_links(im, a, b)
        lvars = set().union(*(e.vars for e in im.entries)) if im.entries else set()
        changed = {v for v in lvars if np.abs(a.marginal(v) - b.marginal(v)).max() >= 1e-4}
        covered = set().union(*(l.vars for l in links)) if links else set()
        assert changed <= covered
        assert [l.diff for l in links] == sorted(l.diff for l in links)
        trees = {a.tree_map()[l.src] for l in links}
        with_links = {a.tree_map()[src] for src, e, succ in im.links() if a.cliques[src].vars & e.vars}
        assert with_links <= trees


def test_update_is_identity_when_consistent():
    cards = {v: 2 for v in range(3)}
    t = [FactorTable((0, 1), (2, 2), [.1, .2, .3, .4]), FactorTable((1, 2), (2, 2), [.5, .1, .2, .2])]
    k, ids = _chain(t, cards)
    k1, _ = _chain(t, cards)
    before = {c: k.cliques[c].belief.values.copy() for c in ids}
    apply_link(k, k1, Link(ids[1], ids[1], frozenset({1, 2}), 0.0))
    for c in ids:
        np.testing.assert_allclose(k.cliques[c].belief.values, before[c], atol=1e-12)


def test_update_pass_keeps_agreement():
    cards = {v: 2 for v in range(4)}
    rng = np.random.default_rng(3)
    t = [FactorTable((0, 1), (2, 2), rng.random(4)), FactorTable((1, 2), (2, 2), rng.random(4)),
         FactorTable((2, 3), (2, 2), rng.random(4))]
    k, ids = _chain(t, cards)
    k1, _ = _chain([t[0], t[1], FactorTable((2, 3), (2, 2), rng.random(4))], cards)
    apply_link(k, k1, Link(ids[2], ids[2], frozenset({2, 3}), 1.0))
    np.testing.assert_allclose(marginalize(k.cliques[ids[2]].belief, {2, 3}).values,
                               k1.cliques[ids[2]].belief.values, atol=1e-12)
    for a, b in k.edges():
        s = k.sepset(a, b)
        np.testing.assert_allclose(marginalize(k.cliques[a].belief, s).values,
                                   marginalize(k.cliques[b].belief, s).values, atol=1e-12)
    assert all(c.belief.values.min() >= 0 for c in k.cliques.values())


# whole-network queries

def test_query_result_contract():
    net = random_bayesnet(12, 4, 3)
    ev = random_evidence(net, 2, 4)
    res = run(net, ev, "MAR", 4, 3)
    assert set(res.marginals) == set(net.variables)
    for v, p in res.marginals.items():
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
    for v, s in ev.items():
        assert res.marginals[v][s] == 1.0
    for key in ("n_ctf", "i_e", "max_clique_size", "mcs_p", "mcs_im", "time_s"):
        assert key in res.metadata
    with pytest.raises(ContractError):
        run(net, ev, "MPE")


def test_inconsistent_evidence_gives_zero_pr():
    cpds = {0: FactorTable((0,), (2,), [1.0, 0.0]), 1: FactorTable((0, 1), (2, 2), [1, 0, 0, 1])}
    net = BayesNet({0: 2, 1: 2}, {1: (0,)}, cpds)
    res = run(net, {1: 1}, "MAR", 4, 3)
    assert res.log_pr == -math.inf and res.log10_pr == -math.inf
    assert res.metadata["inconsistent"] and "warning" in res.metadata
    np.testing.assert_allclose(res.marginals[1], [0.0, 1.0])


def test_collapsed_variables_reported():
    # 1 copies 0, 2 negates 0
    cpds = {0: FactorTable((0,), (2,), [0.3, 0.7]), 1: FactorTable((0, 1), (2, 2), [1, 0, 0, 1]),
            2: FactorTable((0, 2), (2, 2), [0, 1, 1, 0]), 3: FactorTable((2, 3), (2, 2), [.9, .1, .2, .8])}
    net = BayesNet({v: 2 for v in range(4)}, {1: (0,), 2: (0,), 3: (2,)}, cpds)
    res = run(net, {3: 1}, "MAR", 4, 3)
    _, ref = marginals_by_loops(net, {3: 1})
    for v in net.variables:
        np.testing.assert_allclose(res.marginals[v], ref[v], atol=1e-12)
