"""Exact minimum placement by branch-and-bound, plus enumeration of all optima.

The feasibility predicate is monotone in the PMU set, so the search branches on
"cuts": sets of buses any feasible extension must intersect (see
``PlacementEvaluator.cut``). Branch i adds cut[i] and forbids cut[:i], which
keeps subtrees disjoint and lets the same search enumerate every optimum.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

from .grid import Network
from .observability import (
    Placement,
    PlacementEvaluator,
    ResilienceOptions,
    cost_weights as default_cost_weights,
    iter_bits,
    popcount,
    system_redundancy,
)

log = logging.getLogger(__name__)

MIN_COUNT, MIN_COST = "min_count", "min_cost"
ENUMERATION_LIMIT = 30
DEFAULT_NODE_BUDGET = 2_000_000


class InfeasibleError(RuntimeError):
    pass


class EnumerationGuardError(ValueError):
    pass


@dataclass(frozen=True)
class SolveRequest:
    net: Network
    opts: ResilienceOptions = ResilienceOptions()
    objective: str = MIN_COUNT
    cardinality_cap: int | None = None
    cost_weights: tuple[float, ...] | None = None
    node_budget: int = DEFAULT_NODE_BUDGET

    def weights(self) -> tuple[float, ...]:
        if self.objective == MIN_COUNT:
            return (1.0,) * self.net.n_bus
        if self.objective != MIN_COST:
            raise ValueError(f"unknown objective {self.objective!r}")
        return self.cost_weights if self.cost_weights is not None else default_cost_weights(self.net)


@dataclass
class SolveResult:
    best: Placement
    optimum_value: float
    all_optima: list[Placement] | None = None
    nodes_explored: int = 0
    proven_optimal: bool = False
    seconds: float = 0.0


class RedundancyResult(NamedTuple):
    placement: Placement
    redundancy: int
    proven_optimal: bool


class _Search:
    def __init__(self, req: SolveRequest, forbid_dominated: bool):
        self.req = req
        self.ev = PlacementEvaluator(req.net, req.opts)
        self.n = req.net.n_bus
        self.w = req.weights()
        self.integral = all(float(w).is_integer() for w in self.w)
        self.cap = req.cardinality_cap
        self.nodes = 0
        self.exhausted = False
        self.forbidden0 = self._dominated() if forbid_dominated else 0
        # buses whose closed neighbourhood contains a ZIB (candidates for inference)
        self.zib_touch = 0
        for z in self.ev.zibs:
            self.zib_touch |= self.ev.nbr[z]

    def _dominated(self) -> int:
        """Buses whose PMU is never better than a PMU elsewhere (base scenarios only).

        Valid only without contingencies: swapping u for a bus v with
        N[u] inside N[v] keeps every base observation.
        """
        opts = self.req.opts
        if opts.n1_pmu_loss or opts.n1_line_outage:
            return 0
        nbr, w = self.ev.nbr, self.w
        mask = 0
        for u in range(self.n):
            for v in range(self.n):
                if u == v or nbr[u] & ~nbr[v] or w[v] > w[u]:
                    continue
                if nbr[u] != nbr[v] or w[v] < w[u] or v < u:
                    mask |= 1 << u
                    break
        return mask

    def cost(self, s: int) -> float:
        return sum(self.w[i] for i in iter_bits(s))

    # -- bounds ---------------------------------------------------------

    def _cheapest(self, avail: int, k: int) -> float:
        return sum(sorted(self.w[i] for i in iter_bits(avail))[:k])

    def _scenario_bound(self, nbr, obs: int, allowed: int):
        """(count, cost) lower bound for one failing scenario, or None when unreachable.

        Unobserved buses that no ZIB can infer need a PMU in their closed
        neighbourhood; a set of them with disjoint candidate sets needs one PMU
        each. Inferable buses are skipped: with disjoint candidate sets each of
        them can hold a distinct ZIB, so they add nothing to the count.
        """
        unobs = self.ev.full & ~obs
        zib_touch = 0
        for z in self.ev.zibs:
            zib_touch |= nbr[z]
        hard = []
        for u in iter_bits(unobs & ~zib_touch):
            avail = nbr[u] & allowed
            if not avail:
                return None
            hard.append((popcount(avail), u, avail))
        if not hard:
            return (1, min(self.w[i] for i in iter_bits(allowed))) if allowed else None
        hard.sort()
        best = (0, 0.0)
        for order in (hard, sorted(hard, key=lambda h: (-h[0], h[1]))[::-1], hard[1:] + hard[:1]):
            used = count = 0
            cost = 0.0
            for _, u, avail in order:
                if avail & used:
                    continue
                used |= avail
                count += 1
                cost += self._cheapest(avail, 1)
            best = (max(best[0], count), max(best[1], cost))
        return best

    def _double_bound(self, s: int, allowed: int):
        """PMU-loss bound: a bus no ZIB can reach needs two PMUs in its neighbourhood."""
        nbr = self.ev.nbr
        needs = []
        for u in range(self.n):
            if self.zib_touch >> u & 1:
                continue
            need = 2 - popcount(nbr[u] & s)
            if need <= 0:
                continue
            avail = nbr[u] & allowed
            if popcount(avail) < need:
                return None
            needs.append((popcount(avail), u, need, avail))
        needs.sort()
        used = count = 0
        cost = 0.0
        for _, u, need, avail in needs:
            if avail & used:
                continue
            used |= avail
            count += need
            cost += self._cheapest(avail, need)
        return count, cost

    def bound(self, s: int, allowed: int, fails):
        count = 0
        cost = 0.0
        for _, _, nbr, obs in fails:
            b = self._scenario_bound(nbr, obs, allowed)
            if b is None:
                return None
            count, cost = max(count, b[0]), max(cost, b[1])
        if self.req.opts.n1_pmu_loss:
            b = self._double_bound(s, allowed)
            if b is None:
                return None
            count, cost = max(count, b[0]), max(cost, b[1])
        return count, cost

    # -- search ---------------------------------------------------------

    def greedy(self) -> int:
        """Feasible starting placement: add the most violation-reducing bus, then prune."""
        ev = self.ev
        s = 0
        allowed = ev.full & ~self.forbidden0
        while not ev.is_feasible(s):
            base = ev.violations(s)
            best, best_score = None, None
            for c in iter_bits(allowed & ~s):
                gain = base - ev.violations(s | 1 << c)
                score = (gain / self.w[c], -c)
                if best_score is None or score > best_score:
                    best, best_score = c, score
            if best is None:
                raise InfeasibleError("no placement satisfies the requested resilience options")
            s |= 1 << best
        for c in sorted(iter_bits(s), key=lambda c: (-self.w[c], -c)):
            if ev.is_feasible(s & ~(1 << c)):
                s &= ~(1 << c)
        return s

    def run(self, target: float | None = None):
        """Minimise (target None) or collect every feasible set of cost == target."""
        self.collect = target is not None
        self.found: list[int] = []
        full = self.ev.full
        if not self.ev.is_feasible(full & ~self.forbidden0):
            raise InfeasibleError("no placement satisfies the requested resilience options")
        if self.collect:
            self.best, self.best_cost = None, target
        else:
            self.best = self.greedy()
            self.best_cost = self.cost(self.best)
            if self.cap is not None and popcount(self.best) > self.cap:
                self.best, self.best_cost = None, float("inf")
        self._dfs(0, self.forbidden0)
        return self

    def _prune(self, lb_cost: float) -> bool:
        if self.collect:
            return lb_cost > self.best_cost + 1e-9
        if self.integral:
            return lb_cost > self.best_cost - 1 + 1e-9
        return lb_cost >= self.best_cost - 1e-9

    def _dfs(self, s: int, forbidden: int):
        if self.exhausted:
            return
        self.nodes += 1
        if self.nodes > self.req.node_budget:
            self.exhausted = True
            return
        fails = list(self.ev.failures(s))
        cost = self.cost(s)
        if not fails:
            if self.collect:
                if abs(cost - self.best_cost) < 1e-9:
                    self.found.append(s)
            elif cost < self.best_cost - 1e-9:
                self.best, self.best_cost = s, cost
                log.debug("incumbent %.3f after %d nodes", cost, self.nodes)
            return
        allowed = self.ev.full & ~s & ~forbidden
        b = self.bound(s, allowed, fails)
        if b is None or self._prune(cost + b[1]):
            return
        if self.cap is not None and popcount(s) + b[0] > self.cap:
            return
        cut = None
        for _, _, nbr, obs in fails:
            c = self.ev.cut(nbr, obs) & allowed
            if not c:
                return
            if cut is None or popcount(c) < popcount(cut):
                cut = c
        base_obs = self.ev.observed(s)
        cands = sorted(
            iter_bits(cut),
            key=lambda c: (-popcount(self.ev.nbr[c] & ~base_obs) / self.w[c], c),
        )
        banned = forbidden
        for c in cands:
            self._dfs(s | 1 << c, banned)
            banned |= 1 << c
            if self.exhausted:
                return


def _placement(req: SolveRequest, mask: int) -> Placement:
    weights = req.weights() if req.objective == MIN_COST else None
    return Placement.from_mask(req.net.n_bus, mask, weights)


def solve_min(req: SolveRequest) -> SolveResult:
    """Minimum-count or minimum-cost placement satisfying ``req.opts``.

    Raises InfeasibleError when even the all-bus placement fails. When the node
    budget runs out the best placement found is returned with
    ``proven_optimal=False``.
    """
    t0 = time.perf_counter()
    search = _Search(req, forbid_dominated=True).run()
    if search.best is None:
        raise InfeasibleError("no placement within the cardinality cap")
    return SolveResult(
        best=_placement(req, search.best),
        optimum_value=search.best_cost,
        nodes_explored=search.nodes,
        proven_optimal=not search.exhausted,
        seconds=time.perf_counter() - t0,
    )


def enumerate_optima(req: SolveRequest, value: float) -> list[Placement]:
    """Every feasible placement whose objective equals ``value`` (the proven optimum)."""
    if req.net.n_bus > ENUMERATION_LIMIT:
        raise EnumerationGuardError(
            f"{req.net.n_bus} buses exceeds the enumeration limit of {ENUMERATION_LIMIT}; "
            "use max_redundancy_at_optimum's local-search mode instead"
        )
    search = _Search(req, forbid_dominated=False)
    search.req = SolveRequest(req.net, req.opts, req.objective, req.cardinality_cap,
                              req.cost_weights, node_budget=10**12)
    search.run(target=value)
    masks = sorted(set(search.found), key=lambda m: sorted(iter_bits(m)))
    return [_placement(req, m) for m in masks]


def _swap_climb(req: SolveRequest, mask: int) -> int:
    """Hill-climb redundancy with feasibility-preserving single swaps."""
    ev = PlacementEvaluator(req.net, req.opts)
    nbr = ev.nbr
    weights = req.weights()

    def red(m):
        return sum(popcount(nbr[i]) for i in iter_bits(m))

    improved = True
    while improved:
        improved = False
        current = red(mask)
        for out in sorted(iter_bits(mask)):
            for inn in range(req.net.n_bus):
                if mask >> inn & 1 or weights[inn] > weights[out]:
                    continue
                cand = mask & ~(1 << out) | 1 << inn
                if red(cand) > current and ev.is_feasible(cand):
                    mask, improved = cand, True
                    break
            if improved:
                break
    return mask


def max_redundancy_at_optimum(req: SolveRequest) -> RedundancyResult:
    """Among optimal placements, one with the largest system redundancy.

    Exhaustive over all optima up to the enumeration limit; larger systems use a
    swap hill-climb from the solver's optimum and report ``proven_optimal=False``.
    """
    res = solve_min(req)
    if req.net.n_bus <= ENUMERATION_LIMIT and res.proven_optimal:
        optima = enumerate_optima(req, res.optimum_value)
        best = max(optima, key=lambda p: (system_redundancy(req.net, p, req.opts), [-b for b in p.buses(req.net)]))
        return RedundancyResult(best, system_redundancy(req.net, best, req.opts), True)
    mask = _swap_climb(req, res.best.mask)
    p = _placement(req, mask)
    return RedundancyResult(p, system_redundancy(req.net, p, req.opts), False)
