import itertools
import math

import numpy as np
import pytest

from gwboundary.hausdorff import (
    PAIRING_NOTE,
    brute_force_cover_cost,
    c_xi_pairing,
    comparison_check,
    covers_frontier,
    enumerate_covers,
    forest_cover_costs,
    is_antichain,
    min_cover_cost,
    tree_from_support,
)
from gwboundary.offspring import make_offspring
from gwboundary.sampler import RngStream, sample_forest, sample_gw
from gwboundary.tail_gauge import Gauge, PointMassTail
from gwboundary.tree_core import TruncatedTree

LOG2 = math.log(2)


def small_trees(n, seed, max_nodes=40, max_depth=4):
    laws = [make_offspring(s) for s in ("0:0.3,1:0.3,2:0.2,3:0.2", "0:0.2,2:0.5,3:0.3", "1:0.5,2:0.5")]
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        d = laws[rng.integers(len(laws))]
        t = sample_gw(d, int(rng.integers(1, max_depth + 1)), rng)
        if t.n_nodes <= max_nodes:
            out.append(t)
    return out


@pytest.mark.parametrize("N", [5, 10, 15])
def test_binary_cost_is_one(N):
    t = TruncatedTree.full(2, N)
    sol = min_cover_cost(t, lambda r: r**LOG2, min_gen=1)
    assert abs(sol.cost - 1) <= 1e-12
    gauge = min_cover_cost(t, Gauge(2.0, PointMassTail()))
    assert gauge.min_gen == 2 and abs(gauge.cost - 1) <= 1e-12


def test_small_example_against_enumeration():
    t = TruncatedTree.from_offspring({(): 2, (1,): 0, (2,): 1, (2, 1): 2}, 3)
    g = lambda r: r
    sol = min_cover_cost(t, g, min_gen=1)
    # two balls at e^-3 beat one at e^-2, which beats one at e^-1
    assert sol.antichain == ((2, 1, 1), (2, 1, 2))
    assert sol.cost == pytest.approx(2 * math.exp(-3), rel=1e-15)
    assert sol.cost == pytest.approx(brute_force_cover_cost(t, g, 1), rel=1e-12)


def test_dead_tree_costs_nothing():
    t = TruncatedTree.from_offspring({(): 2, (1,): 0, (2,): 0}, 3)
    sol = min_cover_cost(t, lambda r: r, min_gen=1)
    assert sol.cost == 0 and sol.antichain == () and sol.scale_bounds is None
    assert brute_force_cover_cost(t, lambda r: r, 1) == 0


def test_dp_matches_brute_force():
    gauges = [lambda r: r, lambda r: r**LOG2, lambda r: r**0.3 * (1 + math.log(1 / r))]
    for i, t in enumerate(small_trees(300, 1)):
        g = gauges[i % 3]
        for min_gen in range(1, t.depth + 1):
            sol = min_cover_cost(t, g, min_gen)
            assert abs(sol.cost - brute_force_cover_cost(t, g, min_gen)) <= 1e-12 * max(1.0, sol.cost)
            assert is_antichain(sol.antichain)
            assert covers_frontier(t, sol.antichain)
            assert all(min_gen <= len(u) <= t.depth for u in sol.antichain)


def test_enumerated_covers_are_feasible():
    for t in small_trees(50, 2, max_nodes=20):
        for a in enumerate_covers(t, 1):
            assert is_antichain(a) and covers_frontier(t, a)


def test_cost_monotone_in_gauge():
    base = lambda r: r**0.8
    bigger = lambda r: 1.7 * r**0.8 + r
    for t in small_trees(100, 3):
        assert min_cover_cost(t, base, 1).cost <= min_cover_cost(t, bigger, 1).cost + 1e-15


def test_min_gen_validation():
    t = TruncatedTree.full(2, 3)
    with pytest.raises(ValueError):
        min_cover_cost(t, lambda r: r, min_gen=0)
    with pytest.raises(ValueError):
        min_cover_cost(t, lambda r: r, min_gen=4)
    with pytest.raises(ValueError):
        min_cover_cost(t, Gauge(2.0), min_gen=1)  # e^-1 lies outside the gauge domain
    assert min_cover_cost(t, Gauge(2.0)).min_gen == 2


def test_forest_costs_match_single_trees():
    d = make_offspring("0:0.25,2:0.75")
    g = Gauge(1.5, PointMassTail())
    forest = sample_forest(d, 8, 30, RngStream(4))
    costs = forest_cover_costs(forest, g)
    from gwboundary.tree_core import shift

    for i in range(30):
        t = shift(forest, (i + 1,))
        assert costs[i] == pytest.approx(min_cover_cost(t, g).cost, rel=1e-12, abs=0)


def test_comparison_binary_tight():
    N = 6
    masses = {u: 2.0**-N for u in itertools.product((1, 2), repeat=N)}
    rep = comparison_check(masses, lambda r: r**LOG2, 1.0, min_gen=1)
    assert rep.verdict_lower == "pass" and rep.verdict_upper == "pass"
    assert rep.cost == pytest.approx(1.0, abs=1e-12) and rep.total_mass == pytest.approx(1.0, abs=1e-12)


def test_comparison_adversarial_hypothesis_not_met():
    masses = {(1, 1): 0.9, (1, 2): 0.0, (2, 1): 0.05, (2, 2): 0.05}
    rep = comparison_check(masses, lambda r: r, math.e, min_gen=1)
    assert rep.verdict_lower == "hypothesis not met"
    assert rep.witnesses_lower and rep.witnesses_lower[0][0] == "1.1"
    assert rep.verdict_upper == "hypothesis not met"
    # 1.2 carries no mass but its parent ball reaches the gauge; 2.* never do
    assert rep.witnesses_upper == ("2.1", "2.2")
    with pytest.raises(ValueError):
        comparison_check(masses, lambda r: r, 0.5)


def random_instance(rng):
    N = int(rng.integers(1, 5))
    words = [w for w in itertools.product(range(1, 4), repeat=N) if rng.random() < 0.7] or [(1,) * N]
    raw = rng.random(len(words))
    scale = math.exp(-N) * len(words) * rng.uniform(0.2, 3)
    return {w: float(v / raw.sum() * scale) for w, v in zip(words, raw)}


def test_comparison_never_asserts_falsely():
    rng = np.random.default_rng(5)
    g = lambda r: r
    seen = set()
    for _ in range(200):
        masses = random_instance(rng)
        rep = comparison_check(masses, g, math.e, min_gen=1)
        t = tree_from_support(masses)
        oracle = brute_force_cover_cost(t, g, 1) if t.n_nodes <= 40 else rep.cost
        total = math.fsum(masses.values())
        if rep.verdict_lower != "hypothesis not met":
            assert rep.verdict_lower == ("pass" if oracle >= total / math.e - 1e-9 else "fail")
        if rep.verdict_upper != "hypothesis not met":
            assert rep.verdict_upper == ("pass" if oracle <= math.e * total + 1e-9 else "fail")
        seen.add((rep.verdict_lower, rep.verdict_upper))
        assert "fail" not in (rep.verdict_lower, rep.verdict_upper)
    assert len(seen) >= 2


def test_tree_from_support():
    t = tree_from_support({(2, 1): 0.5, (1, 3): 0.5})
    assert t.k(()) == 2 and t.k((1,)) == 3 and t.k((2,)) == 1
    with pytest.raises(ValueError):
        tree_from_support({(1,): 1.0, (1, 1): 1.0})


def test_pairing_binary_and_dead_trees():
    rep = c_xi_pairing(2.0, [1.0] * 5, [1.0] * 5)
    assert rep.slope == 1.0 and rep.inv_kappa == 0.5 and rep.note == PAIRING_NOTE
    padded = c_xi_pairing(2.0, [1.0] * 5 + [0.0] * 3, [1.0] * 5 + [0.0] * 3)
    assert padded.slope == rep.slope and padded.n_alive == 5 and padded.n_trees == 8
    with pytest.raises(ValueError):
        c_xi_pairing(2.0, [0.0], [0.0])
    with pytest.raises(ValueError):
        c_xi_pairing(2.0, [1.0], [1.0], {"w_depth": 14}, {"w_depth": 12})


def test_cover_json():
    sol = min_cover_cost(TruncatedTree.full(2, 3), lambda r: r**LOG2, 3)
    j = sol.to_json()
    assert j["total"] == pytest.approx(1.0) and len(j["balls"]) == 8 and j["balls"][0]["word"] == "1.1.1"
