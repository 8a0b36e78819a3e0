import math

import numpy as np
import pytest

from oracles import marginals_by_loops
from slctf.demo import SEVENTEEN_EVIDENCE, seven_variable_net, seventeen_variable_net
from slctf.errors import ContractError, OracleCapacityError
from slctf.factor import clique_size
from slctf.forest import calibrate, check_valid
from slctf.network import random_bayesnet, random_evidence
from slctf.oracle import enumerate_joint, exact_query, fill_edges, full_compile

A, B, C, D, E, F, G = range(7)


def test_seven_variable_compile():
    net = seven_variable_net(0)
    ctf = full_compile(net)
    assert {c.vars for c in ctf.cliques.values()} == {frozenset(s) for s in
                                                      ({A, B, D}, {B, C, E}, {B, D, E}, {D, E, F}, {D, F, G})}
    assert check_valid(ctf, [net.cpds[v] for v in net.variables]).ok
    assert fill_edges(net) == {(D, E)}


@pytest.mark.parametrize("seed", range(6))
def test_exact_query_against_loops(seed):
    net = random_bayesnet(9, seed, 3, cards=(2, 3))
    ev = random_evidence(net, 2, seed)
    z, ref = marginals_by_loops(net, ev)
    res = exact_query(net, ev, "MAR")
    assert res.log_pr == pytest.approx(math.log(z), rel=1e-12)
    for v in net.variables:
        np.testing.assert_allclose(res.marginals[v], ref[v], atol=1e-12)
    # junction tree path gives the same numbers
    bound = full_compile(net).max_size() + 1e-6
    assert bound < clique_size(net.cards.values())
    jt = exact_query(net, ev, "MAR", max_bits=bound)
    assert jt.log_pr == pytest.approx(res.log_pr, rel=1e-10)
    for v in net.variables:
        np.testing.assert_allclose(jt.marginals[v], res.marginals[v], atol=1e-10)


def test_prior_task_ignores_evidence():
    net = seventeen_variable_net(0)
    res = exact_query(net, SEVENTEEN_EVIDENCE, "MAR_P")
    _, ref = marginals_by_loops(net)
    assert res.log_pr == pytest.approx(0.0, abs=1e-12)
    for v in net.variables:
        np.testing.assert_allclose(res.marginals[v], ref[v], atol=1e-12)


def test_total_of_compiled_tree():
    net = random_bayesnet(12, 7, 3)
    ctf = calibrate(full_compile(net))
    assert sum(ctf.log_z_by_tree().values()) == pytest.approx(enumerate_joint(net).log_total(), abs=1e-12)


def test_capacity_and_task_errors():
    net = random_bayesnet(30, 1, 4, window=30)
    with pytest.raises(OracleCapacityError):
        enumerate_joint(net)
    with pytest.raises(OracleCapacityError):
        exact_query(net, {}, "MAR", max_bits=2)
    with pytest.raises(ContractError):
        exact_query(net, {}, "MAP")
