import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmu_placement.grid import connectivity
from pmu_placement.observability import (
    Placement,
    PlacementEvaluator,
    ResilienceOptions,
    cost_weights,
    coverage,
    feasible_line_outage,
    feasible_n1_pmu,
    feasible_n1_pmu_algebraic,
    is_feasible,
    observable,
    redundancy,
    system_redundancy,
)

from conftest import make_network, random_connected

ZIB = ResilienceOptions(use_zib=True)


def set_closure(net, pmus, use_zib, order_seed=0, skip_branch=None):
    """Reference observability with plain sets, ZIBs visited in a shuffled order."""
    nb = net.neighbor_sets(skip_branch=skip_branch)
    obs = set()
    for j in pmus:
        obs |= {j} | nb[j]
    if not use_zib:
        return obs
    zibs = list(net.zib_indices)
    rng = random.Random(order_seed)
    while True:
        rng.shuffle(zibs)
        grew = False
        for z in zibs:
            missing = ({z} | nb[z]) - obs
            if len(missing) == 1:
                obs |= missing
                grew = True
        if not grew:
            return obs


def test_coverage_single_pmu(ieee14):
    f = coverage(connectivity(ieee14), Placement.from_buses(ieee14, [6]))
    covered = {ieee14.bus_ids[i] for i in np.flatnonzero(f)}
    assert covered == {5, 6, 11, 12, 13}
    assert set(f[f > 0]) == {1}


def test_coverage_extremes(ieee14):
    a = connectivity(ieee14)
    assert coverage(a, Placement((0,) * 14)).sum() == 0
    f = coverage(a, Placement((1,) * 14))
    assert (f == ieee14.degree + 1).all()
    with pytest.raises(ValueError):
        coverage(a, Placement((1, 0)))


def test_placement_validation():
    with pytest.raises(ValueError):
        Placement((0, 2))
    with pytest.raises(ValueError):
        Placement((1, 0), (1.0, 0.0))
    with pytest.raises(ValueError):
        Placement((1, 0), (1.0,))
    assert Placement((1, 0, 1), (1.0, 2.0, 3.5)).cost == 4.5


def test_observable_examples(ieee14):
    p = Placement.from_buses(ieee14, [2, 6, 9])
    assert observable(ieee14, p, ZIB).fully_observable
    v = observable(ieee14, p)
    assert sum(v.observed) == 13 and v.fraction == pytest.approx(0.9286, abs=1e-4)
    assert not v.observed[ieee14.index[8]]
    assert observable(ieee14, Placement.from_buses(ieee14, [2, 6, 7, 9])).fraction == 1.0


def test_redundancy_examples(ieee14):
    path = make_network(3, [(1, 2), (2, 3)])
    assert redundancy(connectivity(path), Placement((1, 1, 1))) == 7
    assert redundancy(connectivity(ieee14), Placement((0,) * 14)) == 0
    p = Placement.from_buses(ieee14, [2, 6, 7, 9])
    assert system_redundancy(ieee14, p, ResilienceOptions()) == 19
    # one virtual measurement per ZIB
    assert system_redundancy(ieee14, Placement.from_buses(ieee14, [2, 6, 9]), ZIB) == 16


def test_max_redundancy_four_pmus_by_enumeration(ieee14):
    a = connectivity(ieee14)
    best = 0
    for combo in itertools.combinations(ieee14.bus_ids, 4):
        p = Placement.from_buses(ieee14, combo)
        if observable(ieee14, p).fully_observable:
            best = max(best, redundancy(a, p))
    assert best == 19


def test_n1_pmu_examples(ieee14):
    assert not feasible_n1_pmu(ieee14, Placement.from_buses(ieee14, [2, 6, 9]), ZIB)
    # bus 3 is adjacent only to PMU 4 in this set, so losing PMU 4 blinds it
    assert not feasible_n1_pmu(ieee14, Placement.from_buses(ieee14, [1, 4, 5, 6, 9, 10, 13]), ZIB)
    assert feasible_n1_pmu(ieee14, Placement.from_buses(ieee14, [1, 2, 4, 6, 9, 10, 13]), ZIB)
    one = make_network(1, [])
    assert not feasible_n1_pmu(one, Placement((1,)))


def test_line_outage_examples(ieee14, ieee30):
    two = make_network(2, [(1, 2)])
    assert not feasible_line_outage(two, Placement((1, 0)))
    # neither set keeps every bus observed after each single outage
    assert not feasible_line_outage(ieee14, Placement.from_buses(ieee14, [1, 3, 6, 10, 11, 13]), ZIB)
    p30 = Placement.from_buses(ieee30, [1, 3, 4, 10, 12, 13, 15, 16, 17, 19, 23, 26, 29])
    assert not feasible_line_outage(ieee30, p30, ZIB)
    assert not observable(ieee30, p30, ZIB).fully_observable


def test_pendant_bus_needs_own_pmu(ieee14):
    p = Placement.from_buses(ieee14, [1, 3, 6, 7, 9, 10, 13])
    assert observable(ieee14, p, ZIB).fully_observable
    assert not feasible_line_outage(ieee14, p, ZIB)
    skip = ResilienceOptions(use_zib=True, skip_islanding_outages=True)
    with_8 = Placement.from_buses(ieee14, [1, 3, 6, 8, 9, 10, 13])
    assert feasible_line_outage(ieee14, with_8, ZIB)
    assert feasible_line_outage(ieee14, with_8, skip)


def test_cost_weights(ieee14):
    w = cost_weights(ieee14)
    assert w[ieee14.index[4]] == pytest.approx(1.5)
    assert w[ieee14.index[8]] == pytest.approx(1.1)
    assert cost_weights(ieee14, 2.0, [0] * 14) == (2.0,) * 14


def _random_case(seed, n_max=12):
    rng = random.Random(seed)
    n = rng.randint(2, n_max)
    edges = random_connected(rng, n)
    zibs = {b for b in range(2, n + 1) if rng.random() < 0.25}
    return make_network(n, edges, zibs), rng


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_bitmask_matches_set_oracle_in_any_order(seed):
    net, rng = _random_case(seed)
    pmus = [i for i in range(net.n_bus) if rng.random() < 0.3]
    ev = PlacementEvaluator(net, ZIB)
    mask = sum(1 << i for i in pmus)
    got = {i for i in range(net.n_bus) if ev.observed(mask) >> i & 1}
    for order_seed in range(4):
        assert set_closure(net, pmus, True, order_seed) == got


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 100_000))
def test_monotonicity(seed):
    net, rng = _random_case(seed)
    a = connectivity(net)
    x = [int(rng.random() < 0.3) for _ in range(net.n_bus)]
    j = rng.randrange(net.n_bus)
    more = list(x)
    more[j] = 1
    p, q = Placement(tuple(x)), Placement(tuple(more))
    assert (coverage(a, q) >= coverage(a, p)).all()
    for use_zib in (False, True):
        opts = ResilienceOptions(use_zib=use_zib)
        before = observable(net, p, opts).observed
        after = observable(net, q, opts).observed
        assert all(b <= c for b, c in zip(before, after))
        if feasible_n1_pmu(net, p, opts):
            assert feasible_n1_pmu(net, q, opts)
        if feasible_line_outage(net, p, opts):
            assert feasible_line_outage(net, q, opts)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_n1_pmu_scenario_equals_double_cover_without_zibs(seed):
    net, rng = _random_case(seed, 10)
    a = connectivity(net)
    x = tuple(int(rng.random() < 0.6) for _ in range(net.n_bus))
    p = Placement(x)
    scenario = feasible_n1_pmu(net, p)
    assert scenario == feasible_n1_pmu_algebraic(net, p)
    if scenario:
        assert coverage(a, p).min() >= 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_algebraic_surrogate_is_sufficient_with_zibs(seed):
    # a matched virtual measurement can stand in for the lost PMU at most once per ZIB,
    # so the surrogate never accepts what scenario deletion rejects on these small graphs
    net, rng = _random_case(seed, 9)
    x = tuple(int(rng.random() < 0.5) for _ in range(net.n_bus))
    p = Placement(x)
    if feasible_n1_pmu(net, p, ZIB):
        assert observable(net, p, ZIB).fully_observable


def test_is_feasible_combines_options(ieee14):
    p = Placement.from_buses(ieee14, [1, 2, 4, 6, 9, 10, 13])
    both = ResilienceOptions(use_zib=True, n1_pmu_loss=True, n1_line_outage=True)
    assert is_feasible(ieee14, p, ResilienceOptions.for_scenario("pmu_loss"))
    assert is_feasible(ieee14, p, both) == (
        feasible_n1_pmu(ieee14, p, ZIB) and feasible_line_outage(ieee14, p, ZIB)
    )
    with pytest.raises(ValueError):
        ResilienceOptions.for_scenario("nope")
