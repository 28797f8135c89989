import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from cumlog.cost import evaluate, random_strategy
from cumlog.dynamics import Game, StopRule, run
from cumlog.equilibrium import (
    all_or_nothing,
    beckmann_oracle,
    check_wardrop,
    flows_to_csv,
    gap_report,
    relative_gap,
    route_all_or_nothing,
    shortest_paths_to,
    used_routes,
    we_strategy_family_probe,
)
from cumlog.network import Incidence, Network, ODPair, builtin, three_parallel

CANON_MAX_ENTROPY = np.array([0.18, 0.42, 0.12, 0.28])  # routes (0,2), (0,3), (1,2), (1,3)


def inc_of(name):
    net, routes = builtin(name)
    return net, Incidence(net, routes)


def test_aon_examples():
    net = three_parallel()
    np.testing.assert_array_equal(all_or_nothing(net, np.array([2.0, 2.0, 2.25])), [3, 0, 0])
    np.testing.assert_array_equal(all_or_nothing(net, np.array([1.0, 2.0, 3.25])), [3, 0, 0])
    np.testing.assert_array_equal(all_or_nothing(net, np.array([2.0, 1.0, 2.25])), [0, 3, 0])


def test_aon_sioux_falls_against_scipy():
    net = builtin("sioux-falls")[0]
    u = np.array([l.cost.fft for l in net.links])
    g = csr_matrix((u, ([l.tail for l in net.links], [l.head for l in net.links])), shape=(24, 24))
    dist = dijkstra(g)
    for dest in range(net.n_nodes):
        np.testing.assert_allclose(shortest_paths_to(net, u, dest), dist[:, dest])
    # free-flow times are integers, so paths tie; compare the cost of each OD's loaded path
    for w, od in enumerate(net.od_pairs):
        d = np.zeros(len(net.od_pairs))
        d[w] = 1.0
        x = all_or_nothing(net, u, d)
        assert u @ x == pytest.approx(dist[od.origin, od.destination])
        assert set(np.unique(x)) <= {0.0, 1.0}


def test_relative_gap_examples():
    u = np.array([3.0, 1.0, 2.25])
    x = np.array([3.0, 0, 0])
    xa = all_or_nothing(three_parallel(), u)
    assert relative_gap(u, x, xa) == pytest.approx(6 / 9)
    assert relative_gap(u, xa, xa) == 0.0
    with pytest.raises(ValueError):
        relative_gap(np.zeros(3), x, x)
    rep = json.loads(gap_report(u, x, xa).to_json())
    assert rep["delta"] == pytest.approx(2 / 3) and rep["aon_flow"] == [0, 3, 0] and rep["total_cost"] == 9.0


@pytest.mark.parametrize("name", ["three-parallel", "3n4l", "sioux-falls"])
def test_aon_optimality_and_gap_sign(name):
    net, inc = inc_of(name)
    rng = np.random.default_rng(11)
    n = 1000 if name != "sioux-falls" else 50
    for _ in range(n):
        fs = evaluate(inc, net.cost_model, random_strategy(inc, rng))
        xa = all_or_nothing(net, fs.u)
        assert fs.u @ xa <= fs.u @ fs.x * (1 + 1e-12)
        assert relative_gap(fs.u, fs.x, xa) >= 0


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 1000))
def test_gap_scale_invariant(scale, seed):
    net, inc = inc_of("3n4l")
    fs = evaluate(inc, net.cost_model, random_strategy(inc, np.random.default_rng(seed)))
    xa = route_all_or_nothing(inc, fs.c)
    assert relative_gap(scale * fs.u, fs.x, xa) == pytest.approx(relative_gap(fs.u, fs.x, xa), rel=1e-12, abs=1e-15)


def test_check_wardrop_examples():
    net, inc = inc_of("three-parallel")
    cert = check_wardrop(np.array([2 / 3, 1 / 3, 0]), np.array([2.0, 2.0, 2.25]), inc)
    assert cert.max_violated_mass == 0 and cert.certified
    cert = check_wardrop(np.array([1.0, 0, 0]), np.array([3.0, 1.0, 2.25]), inc)
    assert cert.max_violated_mass == 1.0
    assert cert.excess.tolist() == [2.0, 0.0, 1.25]
    assert (cert.excess >= 0).all()
    single = Network(2, net.links[:1], (ODPair(0, 1, 3.0),))
    from cumlog.network import RouteSet

    inc1 = Incidence(single, RouteSet.from_routes([[(0,)]], [(0, 1)]))
    assert check_wardrop(np.array([1.0]), np.array([7.0]), inc1).certified


def test_used_routes_examples():
    _, inc = inc_of("3n4l")
    assert used_routes(np.full(4, 0.25), inc)[0] == 4
    count, sets = used_routes(np.array([1e-6, 1 - 2e-6, 1e-6 - 1e-12, 0.0]), inc)
    assert count == 2 and [s.tolist() for s in sets] == [[0, 1]]


def test_oracle_three_parallel_and_zero_demand():
    net = three_parallel()
    x, gap, _ = beckmann_oracle(net, tol=1e-10)
    np.testing.assert_allclose(x, [2, 1, 0], atol=1e-4)
    assert gap < 1e-10
    x0, gap0, _ = beckmann_oracle(net, demands=np.zeros(1))
    np.testing.assert_array_equal(x0, 0.0)


def test_oracle_3n4l_self_certified():
    net, inc = inc_of("3n4l")
    x, gap, _ = beckmann_oracle(net, tol=1e-12)
    np.testing.assert_allclose(x, [6, 4, 3, 7], atol=1e-4)
    rep = we_strategy_family_probe(inc, x)
    assert rep.feasible
    # Frank-Wolfe flows are accurate to ~1e-5 here, so certify at a matching cost tolerance
    for v in rep.vertices:
        fs = evaluate(inc, net.cost_model, v)
        assert check_wardrop(v, fs.c, inc, rel_eps=1e-4).certified
    csv_text = flows_to_csv(x, net.cost_model(x))
    assert csv_text.splitlines()[0] == "link,flow,cost"


def test_family_probe_3n4l():
    net, inc = inc_of("3n4l")
    x, _, _ = beckmann_oracle(net, tol=1e-12)
    rep = we_strategy_family_probe(inc, x)
    assert rep.dimension == 1
    np.testing.assert_allclose(rep.max_entropy_strategy, CANON_MAX_ENTROPY, atol=2e-3)
    assert rep.max_entropy == pytest.approx(12.84, abs=0.01)
    # the family contains every entropy value reported for runs from random starts
    assert rep.min_entropy <= 10.77
    # the flow-invariant direction moves (0,2),(1,3) against (0,3),(1,2)
    d = rep.direction / np.abs(rep.direction).max()
    np.testing.assert_allclose(d * np.sign(d[0]), [1, -1, -1, 1], atol=1e-4)


def test_family_probe_three_parallel_is_a_point():
    net, inc = inc_of("three-parallel")
    rep = we_strategy_family_probe(inc, np.array([2.0, 1.0, 0.0]))
    assert rep.dimension == 0
    np.testing.assert_allclose(rep.max_entropy_strategy, [2 / 3, 1 / 3, 0], atol=1e-6)


def test_family_probe_infeasible():
    net, inc = inc_of("3n4l")
    assert not we_strategy_family_probe(inc, np.array([10.0, 10.0, 0.0, 0.0])).feasible


def test_used_route_count_matches_family_support():
    game = Game.builtin("3n4l")
    tr = run(game, r=1.0, stop=StopRule(max_days=200, gap_tol=1e-12))
    x, _, _ = beckmann_oracle(game.network, tol=1e-12)
    rep = we_strategy_family_probe(game.inc, x)
    support = np.zeros(game.n_routes, dtype=bool)
    for v in rep.vertices:
        support |= v > 1e-6
    assert used_routes(tr.final.p, game.inc)[0] == support.sum() == 4


@pytest.mark.parametrize("name,r", [("three-parallel", 1.0), ("3n4l", 1.0), ("sioux-falls", 2.5)])
def test_gap_certificate_agreement(name, r):
    game = Game.builtin(name)
    days = 1000 if name == "sioux-falls" else 400
    tr = run(game, r=r, stop=StopRule(max_days=days, gap_tol=1e-9), record="summary")
    cert = check_wardrop(tr.final.p, tr.final.flow.c, game.inc)
    assert (tr.final_gap < 1e-9) == (cert.max_violated_mass < 1e-6)
