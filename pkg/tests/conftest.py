import random

import pytest
from hypothesis import settings

from pmu_placement.grid import PQ, SLACK, Branch, Bus, Network, load_case

# property runs must be reproducible
settings.register_profile("deterministic", derandomize=True, print_blob=True)
settings.load_profile("deterministic")


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def ieee30():
    return load_case("ieee30")


@pytest.fixture(scope="session")
def ieee118():
    return load_case("ieee118")


def make_network(n, edges, zibs=(), name="rand"):
    """Topology-only network: bus 1 is the slack, every branch has x = 0.1."""
    buses = tuple(
        Bus(i + 1, SLACK if i == 0 else PQ, load_p=0.0 if i + 1 in zibs else 0.1, is_zib=i + 1 in zibs)
        for i in range(n)
    )
    branches = tuple(Branch(k, a, b, 0.01, 0.1) for k, (a, b) in enumerate(edges))
    return Network(buses, branches, name=name)


def random_connected(rng: random.Random, n: int, extra: float = 0.3):
    """Random spanning tree plus extra chords; bus ids 1..n."""
    order = list(range(1, n + 1))
    rng.shuffle(order)
    edges = set()
    for i in range(1, n):
        a, b = order[i], order[rng.randrange(i)]
        edges.add((min(a, b), max(a, b)))
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if (a, b) not in edges and rng.random() < extra / n:
                edges.add((a, b))
    return sorted(edges)
