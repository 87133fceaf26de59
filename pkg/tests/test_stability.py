import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pmu_placement import power_flow as pf
from pmu_placement.grid import PV
from pmu_placement.observability import Placement
from pmu_placement.stability import (
    line_vsi,
    load_buses,
    loadability_sweep,
    of3_score,
    rank_critical,
    vsi,
    vsoi_wsoi,
)


def _discriminant_oracle():
    """VSI rebuilt from the receiving-end voltage quadratic.

    With line current (Vs - Vr)/Z, the receiving voltage satisfies
    Vr^2 - Vs (cos d + (X/R) sin d) Vr + (X + R^2/X) Q = 0. Real roots need a
    non-negative discriminant; at small load angle the stress ratio
    1 - disc/Vs^2 is the index.
    """
    r, x, q, vs, vr, d = sp.symbols("r x q vs vr d", positive=True)
    quad = sp.Poly(vr**2 - vs * (sp.cos(d) + x / r * sp.sin(d)) * vr + (x + r**2 / x) * q, vr)
    a, b, c = quad.all_coeffs()
    disc = sp.simplify((b**2 - 4 * a * c).subs(d, 0))
    return sp.lambdify((r, x, q, vs), sp.simplify(1 - disc / vs**2), "numpy")


def test_vsi_matches_symbolic_derivation():
    oracle = _discriminant_oracle()
    rng = np.random.default_rng(7)
    n = 10_000
    r = rng.uniform(0.001, 0.5, n)
    x = rng.uniform(0.01, 1.0, n)
    q = rng.uniform(-1.0, 2.0, n)
    vm = rng.uniform(0.8, 1.2, n)
    ours = np.array([vsi(float(np.hypot(a, b)), b, c, d) for a, b, c, d in zip(r, x, q, vm)])
    assert np.allclose(ours, oracle(r, x, q, vm), rtol=1e-9, atol=1e-12)


def test_vsi_examples_and_errors():
    assert vsi(1.0, 1.0, 0.25, 1.0) == pytest.approx(1.0)
    assert vsi(0.5, 0.4, 0.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        vsi(1.0, 0.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        vsi(1.0, 1.0, 0.1, 0.0)


@settings(max_examples=200)
@given(
    st.floats(0.01, 2.0), st.floats(0.01, 2.0), st.floats(-3.0, 3.0), st.floats(0.5, 1.5),
)
def test_vsi_linear_in_q(z, x, q, vm):
    assert vsi(z, x, 2 * q, vm) == pytest.approx(2 * vsi(z, x, q, vm), rel=1e-12, abs=1e-15)


def test_load_buses_include_condensers(ieee14, ieee30):
    assert load_buses(ieee14) == [3, 4, 5, 6, 9, 10, 11, 12, 13, 14]
    for net in (ieee14, ieee30):
        for bid in load_buses(net):
            b = net.buses[net.index[bid]]
            assert b.load_p or b.load_q
            assert b.kind != PV or b.gen_p == 0


def test_sweep_limit_is_bracketed(ieee14):
    step = 0.005
    rec = loadability_sweep(ieee14, 14, step)
    assert rec.stop_reason in ("vsi_limit", "diverged")
    assert 0 < rec.vsi_at_limit <= 1.0
    assert rec.critical_line == (13, 14)
    b14 = ieee14.buses[ieee14.index[14]]
    lines = [br.id for br in ieee14.branches if 14 in (br.from_bus, br.to_bus)]

    def worst(extra):
        sol = pf.solve(ieee14, {14: (b14.load_p, b14.load_q + extra)})
        if not sol.converged:
            return np.inf
        return max(line_vsi(ieee14, sol, k) for k in lines)

    assert worst(rec.q_max) <= 1.0
    assert worst(rec.q_max + step / 2) > 1.0


def test_finer_step_refines_limit(ieee14):
    coarse = loadability_sweep(ieee14, 14, 0.02)
    fine = loadability_sweep(ieee14, 14, 0.001)
    assert coarse.q_max <= fine.q_max + 1e-9
    assert fine.q_max - coarse.q_max <= 0.01 + 1e-9


def test_sweep_rejects_bad_input(ieee14):
    with pytest.raises(ValueError):
        loadability_sweep(ieee14, 14, 0.0)
    with pytest.raises(ValueError):
        loadability_sweep(ieee14, 2)


def test_rank_critical_orders_by_q_max(ieee14):
    ranking = rank_critical(ieee14, step=0.02, k=3)
    q = [r.q_max for r in ranking.records]
    assert q == sorted(q)
    assert ranking.critical_buses == tuple(r.load_bus for r in ranking.records[:3])
    assert set(ranking.line_vsi) == {br.id for br in ieee14.in_service_branches}
    assert rank_critical(ieee14, step=0.05, k=0).critical_buses == ()
    with pytest.raises(ValueError):
        rank_critical(ieee14, k=11)


def test_of3(ieee14):
    ones = {br.id: 1.0 for br in ieee14.branches}
    p = Placement.from_buses(ieee14, [2, 6, 9])
    # buses 2, 6 and 9 each have four lines
    assert of3_score(ieee14, p, ones) == pytest.approx(12.0)
    assert of3_score(ieee14, Placement((0,) * 14), ones) == 0.0
    with pytest.raises(KeyError):
        of3_score(ieee14, p, {})


def test_vsoi_wsoi(ieee14):
    empty = vsoi_wsoi(ieee14, Placement((0,) * 14), [14, 12, 6])
    assert empty.wsoi == 0 and set(empty.violations) == {14, 12, 6}
    p = Placement.from_buses(ieee14, [2, 6, 9, 10, 13])
    rep = vsoi_wsoi(ieee14, p, [14, 12, 6, 11, 10])
    assert set(rep.vsoi.values()) == {2}
    # direct coverage 22 plus two per critical bus
    assert rep.wsoi == 22 + 2 * 5 and rep.violations == ()
    assert (rep.lower, rep.upper) == (2, 6)
    heavy = vsoi_wsoi(ieee14, Placement((1,) * 14), [4])
    assert heavy.vsoi[4] == 6 and heavy.violations == ()
