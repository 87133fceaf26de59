import itertools
import random

import pytest

from pmu_placement.exact import (
    MIN_COST,
    EnumerationGuardError,
    InfeasibleError,
    SolveRequest,
    enumerate_optima,
    max_redundancy_at_optimum,
    solve_min,
)
from pmu_placement.observability import Placement, ResilienceOptions, SCENARIOS

from conftest import make_network, random_connected
from test_observability import set_closure


def _splits(net, skip):
    nb = net.neighbor_sets(skip_branch=skip)
    seen, stack = {0}, [0]
    while stack:
        for j in nb[stack.pop()] - seen:
            seen.add(j)
            stack.append(j)
    return len(seen) < net.n_bus


def oracle_feasible(net, pmus, opts):
    """Scenario-by-scenario check written with plain sets."""
    full = set(range(net.n_bus))
    if set_closure(net, pmus, opts.use_zib) != full:
        return False
    if opts.n1_pmu_loss:
        for j in pmus:
            if set_closure(net, [i for i in pmus if i != j], opts.use_zib) != full:
                return False
    if opts.n1_line_outage:
        for br in net.in_service_branches:
            if opts.skip_islanding_outages and _splits(net, br.id):
                continue
            if set_closure(net, pmus, opts.use_zib, skip_branch=br.id) != full:
                return False
    return True


def brute_force(net, opts, weights=None):
    n = net.n_bus
    weights = weights or [1.0] * n
    best, sets = None, []
    for r in range(n + 1):
        for combo in itertools.combinations(range(n), r):
            if not oracle_feasible(net, combo, opts):
                continue
            c = round(sum(weights[i] for i in combo), 9)
            if best is None or c < best - 1e-9:
                best, sets = c, [combo]
            elif abs(c - best) <= 1e-9:
                sets.append(combo)
    return best, sets


def _random_instance(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 9)
    edges = random_connected(rng, n) if n > 1 else []
    zibs = {b for b in range(2, n + 1) if rng.random() < 0.25}
    net = make_network(n, edges, zibs)
    opts = ResilienceOptions.for_scenario(rng.choice(SCENARIOS))
    return net, opts, rng


@pytest.mark.parametrize("chunk", range(4))
def test_matches_brute_force_on_random_graphs(chunk):
    # 200 random instances in four chunks
    for seed in range(chunk * 50, chunk * 50 + 50):
        net, opts, _ = _random_instance(seed)
        expect, optima = brute_force(net, opts)
        if expect is None:
            with pytest.raises(InfeasibleError):
                solve_min(SolveRequest(net, opts))
            continue
        res = solve_min(SolveRequest(net, opts))
        assert res.proven_optimal
        assert res.optimum_value == expect, (seed, opts)
        assert oracle_feasible(net, [i for i, v in enumerate(res.best.x) if v], opts)
        found = enumerate_optima(SolveRequest(net, opts), expect)
        assert sorted(tuple(i for i, v in enumerate(p.x) if v) for p in found) == sorted(optima)


def test_min_cost_matches_brute_force():
    for seed in range(40):
        net, opts, rng = _random_instance(1000 + seed)
        weights = tuple(round(rng.uniform(0.5, 3.0), 3) for _ in range(net.n_bus))
        expect, _ = brute_force(net, opts, list(weights))
        if expect is None:
            continue
        res = solve_min(SolveRequest(net, opts, MIN_COST, cost_weights=weights))
        assert res.optimum_value == pytest.approx(expect)
        assert res.best.cost == pytest.approx(expect)


def test_cardinality_cap(ieee14):
    with pytest.raises(InfeasibleError):
        solve_min(SolveRequest(ieee14, cardinality_cap=3))
    assert solve_min(SolveRequest(ieee14, cardinality_cap=4)).optimum_value == 4


def test_infeasible_single_bus_pmu_loss():
    one = make_network(1, [])
    with pytest.raises(InfeasibleError):
        solve_min(SolveRequest(one, ResilienceOptions(n1_pmu_loss=True)))
    assert solve_min(SolveRequest(one)).optimum_value == 1


def test_enumeration_guard(ieee118):
    with pytest.raises(EnumerationGuardError):
        enumerate_optima(SolveRequest(ieee118), 32)


def test_unknown_objective(ieee14):
    with pytest.raises(ValueError):
        SolveRequest(ieee14, objective="max").weights()


@pytest.mark.parametrize(
    "scenario, n14, n30",
    [("base", 4, 10), ("zib", 3, 7), ("pmu_loss", 7, 14), ("line_outage", 7, 14)],
)
def test_bundled_optima(ieee14, ieee30, scenario, n14, n30):
    opts = ResilienceOptions.for_scenario(scenario)
    r14 = solve_min(SolveRequest(ieee14, opts))
    r30 = solve_min(SolveRequest(ieee30, opts))
    assert (r14.optimum_value, r30.optimum_value) == (n14, n30)
    assert r14.proven_optimal and r30.proven_optimal


def test_fourteen_bus_optima_and_redundancy(ieee14):
    req = SolveRequest(ieee14)
    optima = [tuple(p.buses(ieee14)) for p in enumerate_optima(req, 4)]
    assert optima == [(2, 6, 7, 9), (2, 6, 8, 9), (2, 7, 10, 13), (2, 7, 11, 13), (2, 8, 10, 13)]
    best = max_redundancy_at_optimum(req)
    assert best.redundancy == 19 and best.proven_optimal
    assert best.placement.buses(ieee14) == [2, 6, 7, 9]
    zib = max_redundancy_at_optimum(SolveRequest(ieee14, ResilienceOptions(use_zib=True)))
    assert zib.redundancy == 16 and zib.placement.buses(ieee14) == [2, 6, 9]


def test_node_budget_reports_unproven(ieee118):
    res = solve_min(SolveRequest(ieee118, ResilienceOptions(use_zib=True), node_budget=200))
    assert not res.proven_optimal
    assert res.nodes_explored <= 201
    assert res.best.count >= 28
