import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenarios import bumps, opposite_exits
from dispersal.energy_laws import PorousMedium
from dispersal.evolution import Scenario, TimeTable, run
from dispersal.gradient_flow import (
    UsageError,
    apply_operator,
    contraction_check,
    monotonicity_term,
    nonexpansive_check,
    resolvent,
    resolvent_solution,
    stationary_probe,
    uniqueness_diagnostic,
)
from dispersal.grid import BoundaryData, SourceData, build_interval_mesh
from dispersal.prox_step import SolverConfig

TIGHT = SolverConfig(gap_tolerance=1e-11, residual_tolerance=1e-11)


def unit(n=16):
    mesh = build_interval_mesh(0, 1, n)
    return mesh, opposite_exits(mesh)


def test_zero_input():
    mesh, part = unit()
    assert np.all(resolvent(0.1, np.zeros((2, 17)), mesh, part, 1.0, PorousMedium(1.0)) == 0)


def test_round_trip_through_the_operator():
    mesh, part = unit()
    law = PorousMedium(2.0)
    f = bumps(mesh.points[:, 0])
    lam = 0.05
    sol = resolvent_solution(lam, f, mesh, part, 1.0, law, TIGHT)
    g = sol.rho + lam * apply_operator(mesh, part, 1.0, sol.eta)
    back = resolvent(lam, g, mesh, part, 1.0, law, TIGHT)
    free = [part[k].free_nodes for k in range(2)]
    assert max(np.max(np.abs(back[k, free[k]] - sol.rho[k, free[k]])) for k in range(2)) <= 1e-6


@settings(max_examples=20)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0))
def test_firm_nonexpansiveness(seed, lam):
    rng = np.random.default_rng(seed)
    mesh, part = unit()
    fa, fb = rng.uniform(-0.5, 2, (2, 2, 17))
    rep = nonexpansive_check(lam, fa, fb, mesh, part, 1.0, PorousMedium(1.0))
    assert rep.nonexpansive and rep.firmly_nonexpansive
    assert rep.output_distance ** 2 <= rep.pairing + 1e-8


def drain(rho0, **kw):
    mesh, part = unit()
    return Scenario(mesh, part, PorousMedium(1.0), 1.0, rho0, 0.01, 0.05, **kw)


def test_contraction_examples():
    x = np.linspace(0, 1, 17)
    a = drain(bumps(x))
    b = drain(np.full((2, 17), 0.4))
    ta, tb = run(a), run(b)
    rep = contraction_check(a, ta, b, tb)
    assert rep.verdict == "PASS" and "unique within tolerance" in rep.summary
    assert all(m >= -1e-8 for m in rep.monotonicity)
    same = contraction_check(a, ta, a, run(a))
    assert max(same.distances) == 0.0


def test_contraction_not_applicable_with_drift():
    x = np.linspace(0, 1, 17)
    v = np.full((2, 16, 1), 0.5)
    a, b = drain(bumps(x), drift=v), drain(np.full((2, 17), 0.4), drift=v)
    rep = contraction_check(a, run(a), b, run(b))
    assert rep.verdict == "N/A" and "drift" in rep.reason


def test_contraction_rejects_mismatched_runs():
    x = np.linspace(0, 1, 17)
    a = drain(bumps(x))
    mesh, part = unit()
    b = Scenario(mesh, part, PorousMedium(2.0), 1.0, bumps(x), 0.01, 0.05)
    with pytest.raises(UsageError):
        contraction_check(a, run(a), b, run(b))
    c = Scenario(mesh, part, PorousMedium(1.0), 1.0, bumps(x), 0.02, 0.05)
    with pytest.raises(UsageError):
        contraction_check(a, run(a), c, run(c))


def test_uniqueness_diagnostic_without_drift_needs_no_constant():
    x = np.linspace(0, 1, 17)
    a, b = drain(bumps(x)), drain(np.full((2, 17), 0.4))
    diag = uniqueness_diagnostic(a, run(a), b, run(b))
    assert all(p == 0 for p in diag.drift_pairing)
    assert diag.required_constant == 0.0 and diag.holds_with(0.0)


def test_monotonicity_term_is_nonnegative_on_resolvent_outputs():
    mesh, part = unit()
    rng = np.random.default_rng(7)
    law = PorousMedium(1.0)
    sa, sb = (resolvent_solution(0.1, rng.uniform(0, 1, (2, 17)), mesh, part, 1.0, law) for _ in range(2))
    assert monotonicity_term(mesh, part, sa.rho, sa.eta, sb.rho, sb.eta) >= -1e-10


def test_stationary_probe_zero_data():
    mesh, part = unit()
    sc = Scenario(mesh, part, PorousMedium(1.0), 1.0, np.zeros((2, 17)), 0.1, 1.0)
    probe = stationary_probe(sc)
    assert probe.converged and probe.steps == 1
    assert np.all(probe.rho_inf == 0) and np.all(probe.eta_direct == 0)


def test_stationary_probe_rejects_time_dependent_source():
    mesh, part = unit()
    s1 = SourceData(np.ones((2, 17)), np.zeros((2, 16, 1)))
    table = TimeTable(((0.0, 0.5, s1), (0.5, 1.0, s1)))
    sc = Scenario(mesh, part, PorousMedium(1.0), 1.0, np.zeros((2, 17)), 0.1, 1.0, source=table)
    with pytest.raises(UsageError):
        stationary_probe(sc)
    moving = Scenario(mesh, part, PorousMedium(1.0), 1.0, np.zeros((2, 17)), 0.1, 1.0,
                      drift=np.ones((2, 16, 1)))
    with pytest.raises(UsageError):
        stationary_probe(moving)


def test_stationary_probe_with_boundary_data():
    mesh, part = unit()
    g = np.zeros((2, 17))
    g[0, 0], g[1, -1] = 0.3, 0.2
    src = SourceData(np.ones((2, 17)), np.zeros((2, 16, 1)))
    sc = Scenario(mesh, part, PorousMedium(1.0), 1.0, np.zeros((2, 17)), 0.2, 200.0, source=src,
                  boundary=BoundaryData(g, np.zeros((2, 2))))
    probe = stationary_probe(sc, SolverConfig(gap_tolerance=1e-12, residual_tolerance=1e-12))
    assert probe.converged
    assert probe.potential_mismatch <= 1e-4
