"""Newton-Raphson AC power flow in polar coordinates (dense Jacobian)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .grid import PQ, PV, SLACK, Network


@dataclass(frozen=True)
class PowerFlowConfig:
    tolerance: float = 1e-8
    max_iterations: int = 30
    flat_start: bool = True
    enforce_q_limits: bool = False

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class PowerFlowSolution:
    v_mag: np.ndarray
    v_ang: np.ndarray
    p_injection: np.ndarray
    q_injection: np.ndarray
    # per branch: (P_from, Q_from, P_to, Q_to), power entering the line at each end
    line_flows: np.ndarray
    converged: bool
    iterations: int
    mismatch_history: list[float] = field(default_factory=list)
    load_p: np.ndarray | None = None
    load_q: np.ndarray | None = None

    @property
    def max_mismatch(self) -> float:
        return self.mismatch_history[-1] if self.mismatch_history else float("inf")

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)


class UnconvergedError(RuntimeError):
    pass


def admittance(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Bus admittance matrix and per-branch two-port terms (yff, yft, ytf, ytt).

    Cached on the (immutable) network; callers must not modify the arrays.
    """
    cached = net.__dict__.get("_admittance")
    if cached is None:
        cached = _build_admittance(net)
        net.__dict__["_admittance"] = cached
    return cached


def _build_admittance(net: Network):
    n = net.n_bus
    ybus = np.zeros((n, n), dtype=complex)
    m = len(net.branches)
    yff = np.zeros(m, dtype=complex)
    yft = np.zeros(m, dtype=complex)
    for pos, br in enumerate(net.branches):
        if not br.in_service:
            continue
        ys = 1.0 / complex(br.r, br.x)
        sh = 0.5j * br.b
        i, j = net.endpoints(br)
        yff[pos] = ys + sh
        yft[pos] = -ys
        ybus[i, i] += ys + sh
        ybus[j, j] += ys + sh
        ybus[i, j] -= ys
        ybus[j, i] -= ys
    for i, bus in enumerate(net.buses):
        ybus[i, i] += complex(bus.shunt_g, bus.shunt_b)
    return ybus, yff, yft, yft.copy(), yff.copy()


def _loads(net: Network, load_override: Mapping[int, tuple[float, float]] | None):
    pd = np.array([b.load_p for b in net.buses])
    qd = np.array([b.load_q for b in net.buses])
    for bus_id, (p, q) in (load_override or {}).items():
        i = net.index[bus_id]
        pd[i], qd[i] = p, q
    return pd, qd


def solve(
    net: Network,
    load_override: Mapping[int, tuple[float, float]] | None = None,
    cfg: PowerFlowConfig = PowerFlowConfig(),
    initial: PowerFlowSolution | None = None,
) -> PowerFlowSolution:
    """Solve the AC power flow.

    ``load_override`` maps bus id to a (P, Q) load in per-unit that replaces the
    case value. ``initial`` warm-starts from a previous solution when
    ``cfg.flat_start`` is False. Divergence is reported through
    ``converged=False``, never raised.
    """
    n = net.n_bus
    ybus, *_ = admittance(net)
    pd, qd = _loads(net, load_override)
    pg = np.array([b.gen_p for b in net.buses])
    p_spec = pg - pd
    kinds = [b.kind for b in net.buses]
    setpoint = np.array([b.voltage_setpoint for b in net.buses])

    if not cfg.flat_start and initial is not None:
        vm, va = initial.v_mag.copy(), initial.v_ang.copy()
    else:
        vm, va = np.ones(n), np.zeros(n)
    regulated = np.array([k in (PV, SLACK) for k in kinds])
    vm[regulated] = setpoint[regulated]

    pv_fixed: set[int] = set()
    q_fixed = np.zeros(n)
    history: list[float] = []
    converged = False
    it = 0
    for _outer in range(5 if cfg.enforce_q_limits else 1):
        pv = [i for i in range(n) if kinds[i] == PV and i not in pv_fixed]
        pq = [i for i in range(n) if kinds[i] == PQ or i in pv_fixed]
        q_spec = -qd.copy()
        for i in pv_fixed:
            q_spec[i] += q_fixed[i]
        converged, it, vm, va = _newton(ybus, p_spec, q_spec, vm, va, pv, pq, cfg, history, it)
        if not converged or not cfg.enforce_q_limits:
            break
        v = vm * np.exp(1j * va)
        q_gen = (v * np.conj(ybus @ v)).imag + qd
        switched = False
        for i in pv:
            bus = net.buses[i]
            if q_gen[i] > bus.gen_q_max:
                q_fixed[i], switched = bus.gen_q_max, True
                pv_fixed.add(i)
            elif q_gen[i] < bus.gen_q_min:
                q_fixed[i], switched = bus.gen_q_min, True
                pv_fixed.add(i)
        if not switched:
            break

    v = vm * np.exp(1j * va)
    s_inj = v * np.conj(ybus @ v) if np.all(np.isfinite(v)) else np.full(n, np.nan, dtype=complex)
    flows = branch_flows(net, v)
    return PowerFlowSolution(
        v_mag=vm,
        v_ang=va,
        p_injection=s_inj.real,
        q_injection=s_inj.imag,
        line_flows=flows,
        converged=converged,
        iterations=it,
        mismatch_history=history,
        load_p=pd,
        load_q=qd,
    )


def _newton(ybus, p_spec, q_spec, vm, va, pv, pq, cfg, history, it):
    pvpq = np.array(sorted(pv + pq), dtype=int)
    pq = np.array(sorted(pq), dtype=int)
    npvpq = len(pvpq)
    blocks = (np.ix_(pvpq, pvpq), np.ix_(pvpq, pq), np.ix_(pq, pvpq), np.ix_(pq, pq))
    while True:
        v = vm * np.exp(1j * va)
        s = v * np.conj(ybus @ v)
        mis = np.r_[s.real[pvpq] - p_spec[pvpq], s.imag[pq] - q_spec[pq]]
        norm = float(np.max(np.abs(mis))) if mis.size else 0.0
        if not np.isfinite(norm):
            history.append(float("inf"))
            return False, it, vm, va
        history.append(norm)
        if norm <= cfg.tolerance:
            return True, it, vm, va
        if it >= cfg.max_iterations:
            return False, it, vm, va
        it += 1
        ibus = ybus @ v
        vnorm = np.exp(1j * va)
        ds_dva = 1j * v[:, None] * np.conj(-ybus * v[None, :])
        ds_dva[np.diag_indices_from(ds_dva)] += 1j * v * np.conj(ibus)
        ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :])
        ds_dvm[np.diag_indices_from(ds_dvm)] += vnorm * np.conj(ibus)
        jac = np.block(
            [
                [ds_dva.real[blocks[0]], ds_dvm.real[blocks[1]]],
                [ds_dva.imag[blocks[2]], ds_dvm.imag[blocks[3]]],
            ]
        )
        try:
            dx = np.linalg.solve(jac, -mis)
        except np.linalg.LinAlgError:
            history.append(float("inf"))
            return False, it, vm, va
        va = va.copy()
        vm = vm.copy()
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]


def _terminals(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cached = net.__dict__.get("_terminals")
    if cached is None:
        live = np.array([br.in_service for br in net.branches], dtype=bool)
        ends = [net.endpoints(br) for br in net.branches]
        f = np.array([e[0] for e in ends], dtype=int).reshape(-1)
        t = np.array([e[1] for e in ends], dtype=int).reshape(-1)
        cached = (live, f, t)
        net.__dict__["_terminals"] = cached
    return cached


def branch_flows(net: Network, v: np.ndarray) -> np.ndarray:
    _, yff, yft, ytf, ytt = admittance(net)
    live, f, t = _terminals(net)
    flows = np.zeros((len(net.branches), 4))
    if not len(f):
        return flows
    i_from = yff * v[f] + yft * v[t]
    i_to = ytf * v[f] + ytt * v[t]
    sf = v[f] * np.conj(i_from)
    st = v[t] * np.conj(i_to)
    flows[live] = np.column_stack([sf.real, sf.imag, st.real, st.imag])[live]
    return flows


def receiving_end(net: Network, sol: PowerFlowSolution, k: int) -> tuple[int, int]:
    """(sending, receiving) bus ids of branch ``k`` by active-power direction.

    Zero active flow breaks toward the higher-numbered bus as receiving end.
    """
    br = net.branch(k)
    pos = net.branches.index(br)
    p_from = sol.line_flows[pos, 0]
    if p_from > 0 or (p_from == 0 and br.to_bus > br.from_bus):
        return br.from_bus, br.to_bus
    return br.to_bus, br.from_bus


def line_receiving_q(net: Network, sol: PowerFlowSolution, k: int) -> float:
    """Reactive power delivered by branch ``k`` into its receiving bus (per-unit)."""
    if not sol.converged:
        raise UnconvergedError("power flow solution did not converge")
    br = net.branch(k)
    pos = net.branches.index(br)
    _, recv = receiving_end(net, sol, k)
    q_at_end = sol.line_flows[pos, 3] if recv == br.to_bus else sol.line_flows[pos, 1]
    return float(-q_at_end)


def power_balance_residual(net: Network, sol: PowerFlowSolution) -> float:
    """|sum(injections) - sum(branch losses) - sum(shunt consumption)| in per-unit."""
    v = sol.voltage
    shunt = sum(
        (abs(v[i]) ** 2) * b.shunt_g for i, b in enumerate(net.buses)
    )
    losses = float(np.sum(sol.line_flows[:, 0] + sol.line_flows[:, 2]))
    return abs(float(np.sum(sol.p_injection)) - losses - shunt)


def gauss_seidel(net: Network, tolerance: float = 1e-10, max_iterations: int = 200_000, accel: float = 1.6):
    """Independent Gauss-Seidel solver used to cross-check the Newton kernel."""
    n = net.n_bus
    ybus, *_ = admittance(net)
    pd, qd = _loads(net, None)
    pg = np.array([b.gen_p for b in net.buses])
    s_spec = (pg - pd) - 1j * qd
    v = np.ones(n, dtype=complex)
    for i, b in enumerate(net.buses):
        if b.kind in (PV, SLACK):
            v[i] = b.voltage_setpoint
    for sweep in range(max_iterations):
        delta = 0.0
        for i, b in enumerate(net.buses):
            if b.kind == SLACK:
                continue
            s_i = s_spec[i]
            if b.kind == PV:
                q = -(np.conj(v[i]) * (ybus[i] @ v)).imag
                s_i = s_spec[i].real + 1j * q
            new = (np.conj(s_i) / np.conj(v[i]) - (ybus[i] @ v - ybus[i, i] * v[i])) / ybus[i, i]
            if b.kind == PV:
                new = b.voltage_setpoint * new / abs(new)
            else:
                new = v[i] + accel * (new - v[i])
            delta = max(delta, abs(new - v[i]))
            v[i] = new
        if delta < tolerance:
            return v, True
    return v, False
