"""Line voltage stability index, reactive loadability sweeps and VSOI/WSOI scoring."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import power_flow as pf
from .grid import PQ, PV, Network, connectivity, max_branch_degree
from .observability import Placement, ResilienceOptions, coverage

log = logging.getLogger(__name__)

DEFAULT_STEP = 0.005
MAX_EXTRA_Q = 50.0


def vsi(z: float, x: float, q_n: float, v_m: float) -> float:
    """4 Z^2 Q_n / (V_m^2 X); values near 1 flag a stressed line."""
    if x == 0:
        raise ValueError("line reactance must be non-zero")
    if v_m == 0:
        raise ValueError("sending-end voltage must be non-zero")
    return 4.0 * z * z * q_n / (v_m * v_m * x)


@dataclass(frozen=True)
class VsiRecord:
    load_bus: int
    q_max: float
    vsi_at_limit: float
    critical_line: tuple[int, int]
    critical_branch: int = -1
    stop_reason: str = ""


@dataclass(frozen=True)
class VsiRanking:
    records: tuple[VsiRecord, ...]
    critical_buses: tuple[int, ...]
    # per in-service branch id: largest VSI seen at the base point or any sweep limit
    line_vsi: Mapping[int, float]


def line_vsi(net: Network, sol: pf.PowerFlowSolution, k: int) -> float:
    """VSI of branch ``k`` at ``sol`` with ends oriented by active-power flow."""
    br = net.branch(k)
    send, _ = pf.receiving_end(net, sol, k)
    q_n = pf.line_receiving_q(net, sol, k)
    return vsi(br.z, br.x, q_n, float(sol.v_mag[net.index[send]]))


def load_buses(net: Network) -> list[int]:
    """Buses eligible for a loadability sweep.

    PQ buses carrying load, plus loaded PV buses whose machine produces no
    active power (synchronous condensers), which are swept with their reactive
    output frozen at the base operating point.
    """
    out = []
    for b in net.buses:
        loaded = b.load_p != 0 or b.load_q != 0
        if not loaded or not _incident(net, b.id):
            continue
        if b.kind == PQ or (b.kind == PV and b.gen_p == 0):
            out.append(b.id)
    return out


def _as_load_bus(net: Network, bus: int, base: pf.PowerFlowSolution) -> tuple[Network, float]:
    """Network with ``bus`` turned PQ, and the load Q that reproduces the base point."""
    i = net.index[bus]
    b = net.buses[i]
    if b.kind == PQ:
        return net, b.load_q
    q_gen = float(base.q_injection[i]) + b.load_q
    buses = list(net.buses)
    buses[i] = replace(b, kind=PQ)
    return replace(net, buses=tuple(buses)), b.load_q - q_gen


def _incident(net: Network, bus: int) -> list[int]:
    return [br.id for br in net.in_service_branches if bus in (br.from_bus, br.to_bus)]


def _incident_vsi(net, sol, lines):
    vals = {k: line_vsi(net, sol, k) for k in lines}
    k = max(vals, key=lambda k: (vals[k], -k))
    return vals, k


def _oriented(net, sol, k) -> tuple[int, int]:
    send, recv = pf.receiving_end(net, sol, k)
    return (send, recv)


def loadability_sweep(
    net: Network,
    bus: int,
    step: float = DEFAULT_STEP,
    pf_cfg: pf.PowerFlowConfig = pf.PowerFlowConfig(),
    base: pf.PowerFlowSolution | None = None,
) -> VsiRecord:
    """Raise reactive absorption at ``bus`` until collapse or an incident VSI passes 1.

    Each accepted step is a converged power flow with every incident line at
    VSI <= 1. The first rejected step is bisected once, so q_max resolves to
    step/2.
    """
    return _sweep(net, bus, step, pf_cfg, base)[0]


def _sweep(net, bus, step, pf_cfg, base):
    if step <= 0:
        raise ValueError("step must be positive")
    if base is None:
        base = pf.solve(net, cfg=pf_cfg)
    if not base.converged:
        raise pf.UnconvergedError("base case power flow did not converge")
    b = net.buses[net.index[bus]]
    if b.kind != PQ and not (b.kind == PV and b.gen_p == 0):
        raise ValueError(f"bus {bus} is not a load bus")
    lines = _incident(net, bus)
    if not lines:
        raise ValueError(f"bus {bus} has no in-service lines")
    net, q0 = _as_load_bus(net, bus, base)
    warm = pf.PowerFlowConfig(pf_cfg.tolerance, pf_cfg.max_iterations, False, pf_cfg.enforce_q_limits)

    def attempt(extra, start):
        sol = pf.solve(net, {bus: (b.load_p, q0 + extra)}, warm, initial=start)
        if not sol.converged:
            return sol, None, "diverged"
        vals, k = _incident_vsi(net, sol, lines)
        if vals[k] > 1.0:
            return sol, (vals, k), "vsi_limit"
        return sol, (vals, k), None

    accepted_q = 0.0
    accepted_sol = base
    accepted = _incident_vsi(net, base, lines)
    reason = "max_extra_q"
    while accepted_q < MAX_EXTRA_Q:
        trial = accepted_q + step
        sol, vals, why = attempt(trial, accepted_sol)
        if why is None:
            accepted_q, accepted_sol, accepted = trial, sol, vals
            continue
        reason = why
        half = accepted_q + step / 2
        sol, vals, why = attempt(half, accepted_sol)
        if why is None:
            accepted_q, accepted_sol, accepted = half, sol, vals
        break
    vals, k = accepted
    every = {br.id: line_vsi(net, accepted_sol, br.id) for br in net.in_service_branches}
    return VsiRecord(
        load_bus=bus,
        q_max=accepted_q,
        vsi_at_limit=float(vals[k]),
        critical_line=_oriented(net, accepted_sol, k),
        critical_branch=k,
        stop_reason=reason,
    ), every


def rank_critical(
    net: Network,
    step: float = DEFAULT_STEP,
    pf_cfg: pf.PowerFlowConfig = pf.PowerFlowConfig(),
    k: int = 5,
) -> VsiRanking:
    """Sweep every load bus and sort ascending by q_max (ties: lower bus id)."""
    buses = load_buses(net)
    if k > len(buses):
        raise ValueError(f"k={k} exceeds the {len(buses)} load buses")
    base = pf.solve(net, cfg=pf_cfg)
    if not base.converged:
        raise pf.UnconvergedError("base case power flow did not converge")
    table = {br.id: line_vsi(net, base, br.id) for br in net.in_service_branches}
    records = []
    for bus in buses:
        rec, limit_vsi = _sweep(net, bus, step, pf_cfg, base)
        records.append(rec)
        for line, value in limit_vsi.items():
            table[line] = max(table[line], value)
    records.sort(key=lambda r: (r.q_max, r.load_bus))
    return VsiRanking(tuple(records), tuple(r.load_bus for r in records[:k]), table)


def of3_score(net: Network, p: Placement, vsi_by_line: Mapping[int, float]) -> float:
    """Sum over PMU buses of the VSI of every incident line (each line counts at both ends)."""
    total = 0.0
    for bus in p.buses(net):
        for line in _incident(net, bus):
            if line not in vsi_by_line:
                raise KeyError(f"no VSI score for branch {line}")
            total += vsi_by_line[line]
    return total


@dataclass(frozen=True)
class VsoiReport:
    vsoi: Mapping[int, int]
    violations: tuple[int, ...]
    wsoi: int
    lower: int
    upper: int


def vsoi_wsoi(
    net: Network,
    p: Placement,
    critical_buses: Sequence[int],
    opts: ResilienceOptions = ResilienceOptions(use_zib=True),
) -> VsoiReport:
    """VSOI per critical bus (its coverage count) and WSOI = sum(f) + sum of VSOI.

    Buses whose VSOI falls outside [2, MNB + 1] are listed in ``violations``;
    values are reported unclamped. WSOI counts direct PMU coverage only, so
    ``opts`` does not change it; it is kept so callers can pass the options
    the placement was solved under.
    """
    f = coverage(connectivity(net), p)
    upper = max_branch_degree(net) + 1
    vsoi = {b: int(f[net.index[b]]) for b in critical_buses}
    bad = tuple(b for b, v in vsoi.items() if not 2 <= v <= upper)
    wsoi = int(f.sum()) + sum(vsoi.values())
    return VsoiReport(vsoi, bad, wsoi, 2, upper)
