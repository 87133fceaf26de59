"""Placement evaluation: coverage, ZIB-augmented observability, redundancy, N-1 checks.

Bus sets are held as Python ints used as bitmasks (bit i = internal bus i).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .grid import Network, connectivity, islanding_branches


@dataclass(frozen=True)
class ResilienceOptions:
    use_zib: bool = False
    n1_pmu_loss: bool = False
    n1_line_outage: bool = False
    # Exclude outages that island part of the grid (pendant lines).
    skip_islanding_outages: bool = False

    @classmethod
    def for_scenario(cls, scenario: str) -> "ResilienceOptions":
        """Named scenarios used by the CLI and reports. Contingency scenarios include ZIBs."""
        table = {
            "base": cls(),
            "zib": cls(use_zib=True),
            "pmu_loss": cls(use_zib=True, n1_pmu_loss=True),
            "line_outage": cls(use_zib=True, n1_line_outage=True),
        }
        try:
            return table[scenario]
        except KeyError:
            raise ValueError(f"unknown scenario {scenario!r}") from None


SCENARIOS = ("base", "zib", "pmu_loss", "line_outage")


@dataclass(frozen=True)
class Placement:
    x: tuple[int, ...]
    cost_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if any(v not in (0, 1) for v in self.x):
            raise ValueError("placement entries must be 0 or 1")
        if self.cost_weights is not None:
            if len(self.cost_weights) != len(self.x):
                raise ValueError("cost_weights length differs from placement length")
            if any(w <= 0 for w in self.cost_weights):
                raise ValueError("cost weights must be strictly positive")

    @classmethod
    def from_buses(cls, net: Network, bus_ids: Iterable[int], cost_weights=None) -> "Placement":
        x = [0] * net.n_bus
        for b in bus_ids:
            x[net.index[b]] = 1
        return cls(tuple(x), None if cost_weights is None else tuple(cost_weights))

    @classmethod
    def from_mask(cls, n: int, mask: int, cost_weights=None) -> "Placement":
        return cls(tuple((mask >> i) & 1 for i in range(n)), cost_weights)

    @property
    def mask(self) -> int:
        return sum(1 << i for i, v in enumerate(self.x) if v)

    @property
    def count(self) -> int:
        return sum(self.x)

    @property
    def cost(self) -> float:
        if self.cost_weights is None:
            return float(self.count)
        return float(sum(w for w, v in zip(self.cost_weights, self.x) if v))

    def buses(self, net: Network) -> list[int]:
        return [net.bus_ids[i] for i, v in enumerate(self.x) if v]

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class ObservabilityVerdict:
    observed: tuple[bool, ...]
    fully_observable: bool
    fraction: float


def cost_weights(net: Network, per_pmu_cost: float = 1.0, channels: Sequence[int] | None = None):
    """w_j = (1 + 0.1 n_j) C, with n_j the channel count (default: bus degree)."""
    n = net.degree if channels is None else np.asarray(channels)
    return tuple(float((1.0 + 0.1 * nj) * per_pmu_cost) for nj in n)


def coverage(conn: np.ndarray, p: Placement) -> np.ndarray:
    """f_i = sum_j x_j a_ij."""
    x = np.asarray(p.x, dtype=int)
    if conn.shape != (len(x), len(x)):
        raise ValueError(f"connectivity is {conn.shape}, placement has {len(x)} buses")
    return conn.astype(int) @ x


def redundancy(conn: np.ndarray, p: Placement) -> int:
    return int(coverage(conn, p).sum())


def system_redundancy(net: Network, p: Placement, opts: ResilienceOptions) -> int:
    """Sum of f_i, plus one virtual measurement per ZIB when ZIBs are modelled.

    Each zero-injection bus contributes exactly one auxiliary observation to its
    closed neighbourhood, so the ZIB term adds |ZIB| to the direct sum.
    """
    total = redundancy(connectivity(net), p)
    if opts.use_zib:
        total += len(net.zib_indices)
    return total


# -- bitmask kernel ---------------------------------------------------------------

def closed_masks(neighbors: Sequence[set[int]]) -> list[int]:
    masks = []
    for i, nb in enumerate(neighbors):
        m = 1 << i
        for j in nb:
            m |= 1 << j
        masks.append(m)
    return masks


def direct_mask(pmus: int, nbr: Sequence[int]) -> int:
    obs = 0
    while pmus:
        low = pmus & -pmus
        obs |= nbr[low.bit_length() - 1]
        pmus ^= low
    return obs


def zib_closure(obs: int, zibs: Sequence[int], nbr: Sequence[int]) -> int:
    """Fixpoint of the ZIB rule: a ZIB neighbourhood with one unknown member resolves it."""
    changed = True
    while changed:
        changed = False
        for z in zibs:
            missing = nbr[z] & ~obs
            if missing and not missing & (missing - 1):
                obs |= missing
                changed = True
    return obs


def iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def popcount(mask: int) -> int:
    return bin(mask).count("1")


class PlacementEvaluator:
    """Fast feasibility checks for one network and one set of resilience options.

    A scenario is a closed-neighbourhood table; the PMU-loss scenarios reuse the
    base table with one PMU removed from the placement.
    """

    def __init__(self, net: Network, opts: ResilienceOptions):
        self.net = net
        self.opts = opts
        self.n = net.n_bus
        self.full = (1 << self.n) - 1
        self.nbr = closed_masks(net.neighbor_sets())
        self.zibs = tuple(net.zib_indices) if opts.use_zib else ()
        self.outages: list[tuple[int, list[int]]] = []
        if opts.n1_line_outage:
            skip = islanding_branches(net) if opts.skip_islanding_outages else set()
            for br in net.in_service_branches:
                if br.id in skip:
                    continue
                self.outages.append((br.id, closed_masks(net.neighbor_sets(skip_branch=br.id))))

    def observed(self, pmus: int, nbr: Sequence[int] | None = None) -> int:
        nbr = self.nbr if nbr is None else nbr
        obs = direct_mask(pmus, nbr)
        if self.zibs and obs != self.full:
            obs = zib_closure(obs, self.zibs, nbr)
        return obs

    def scenarios(self, pmus: int):
        """Yield (label, effective PMU mask, neighbourhood table) for every check."""
        yield ("base", pmus, self.nbr)
        if self.opts.n1_pmu_loss:
            for b in iter_bits(pmus):
                yield (("pmu", b), pmus & ~(1 << b), self.nbr)
        for k, nbr in self.outages:
            yield (("line", k), pmus, nbr)

    def failures(self, pmus: int):
        for label, eff, nbr in self.scenarios(pmus):
            obs = self.observed(eff, nbr)
            if obs != self.full:
                yield label, eff, nbr, obs

    def is_feasible(self, pmus: int) -> bool:
        return next(self.failures(pmus), None) is None

    def violations(self, pmus: int) -> int:
        """Unobserved buses in the base case plus the number of failed contingencies."""
        total = 0
        for label, eff, nbr, obs in self.failures(pmus):
            total += self.n - popcount(obs) if label == "base" else 1
        return total

    def cut(self, nbr: Sequence[int], obs: int) -> int:
        """Buses of which any feasible extension must contain at least one.

        Unobserved buses sharing a ZIB neighbourhood form a cluster. The first
        bus of a cluster to become observable cannot be inferred (otherwise the
        current placement would already infer it), so it is observed directly
        by a PMU inside the cluster's closed neighbourhood. The smallest such
        neighbourhood over all clusters is returned.
        """
        unobs = self.full & ~obs
        zib_sets = [nbr[z] & unobs for z in self.zibs]
        best = None
        remaining = unobs
        while remaining:
            low = remaining & -remaining
            cluster = low
            frontier = low
            while frontier:
                grow = 0
                for zs in zib_sets:
                    if zs & frontier:
                        grow |= zs
                frontier = grow & ~cluster
                cluster |= grow
            remaining &= ~cluster
            cand = 0
            for v in iter_bits(cluster):
                cand |= nbr[v]
            if best is None or popcount(cand) < popcount(best):
                best = cand
        return 0 if best is None else best


# -- public predicates -------------------------------------------------------------

def observable(net: Network, p: Placement, opts: ResilienceOptions = ResilienceOptions()) -> ObservabilityVerdict:
    """Base-case observability of ``p``; ZIB inference applied when ``opts.use_zib``."""
    if len(p) != net.n_bus:
        raise ValueError("placement length differs from bus count")
    ev = PlacementEvaluator(net, ResilienceOptions(use_zib=opts.use_zib))
    obs = ev.observed(p.mask)
    flags = tuple(bool(obs >> i & 1) for i in range(net.n_bus))
    count = sum(flags)
    return ObservabilityVerdict(flags, count == net.n_bus, count / net.n_bus if net.n_bus else 1.0)


def feasible_n1_pmu(net: Network, p: Placement, opts: ResilienceOptions = ResilienceOptions()) -> bool:
    """Full observability survives the loss of any single PMU."""
    ev = PlacementEvaluator(net, ResilienceOptions(use_zib=opts.use_zib, n1_pmu_loss=True))
    pmus = p.mask
    if not pmus:
        return False
    return ev.is_feasible(pmus)


def feasible_n1_pmu_algebraic(net: Network, p: Placement, opts: ResilienceOptions = ResilienceOptions()) -> bool:
    """Counting surrogate: f_i plus an assigned ZIB virtual measurement reaches 2 at every bus.

    Each ZIB may grant one virtual measurement to one bus of its closed
    neighbourhood; the assignment is a bipartite matching.
    """
    f = coverage(connectivity(net), p)
    deficit = [i for i in range(net.n_bus) if f[i] < 2]
    if any(f[i] < 1 for i in deficit):
        return False
    if not deficit:
        return True
    if not opts.use_zib:
        return False
    nbrs = net.neighbor_sets()
    options = {i: [z for z in net.zib_indices if z == i or z in nbrs[i]] for i in deficit}
    owner: dict[int, int] = {}

    def augment(i, seen):
        for z in options[i]:
            if z in seen:
                continue
            seen.add(z)
            if z not in owner or augment(owner[z], seen):
                owner[z] = i
                return True
        return False

    return all(augment(i, set()) for i in deficit)


def feasible_line_outage(net: Network, p: Placement, opts: ResilienceOptions = ResilienceOptions()) -> bool:
    """Full observability survives every single in-service line outage."""
    ev = PlacementEvaluator(
        net,
        ResilienceOptions(
            use_zib=opts.use_zib,
            n1_line_outage=True,
            skip_islanding_outages=opts.skip_islanding_outages,
        ),
    )
    return ev.is_feasible(p.mask)


def is_feasible(net: Network, p: Placement, opts: ResilienceOptions) -> bool:
    return PlacementEvaluator(net, opts).is_feasible(p.mask)
