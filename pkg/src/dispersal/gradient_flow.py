"""Dual-norm gradient-flow diagnostics.

With homogeneous boundary data the energy ``E(rho) = int beta(rho_1 + rho_2)``
has a subdifferential in the product dual space given by ``-div(sigma grad eta)``
where eta is the potential pair attached to rho.  One implicit step is its
resolvent, which makes contraction and stationarity checkable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import poisson_handle, product_inner, product_norm, solve_mixed_poisson
from .energy_laws import DomainError, EnergyLaw, fenchel_residual
from .evolution import Scenario, TimeTable, Trajectory, run
from .grid import BoundaryPartition, Mesh, SourceData
from .prox_step import SolverConfig, StepProblem, StepSolution, solve_step


class UsageError(DomainError):
    pass


def resolvent_solution(lam: float, f, mesh: Mesh, partition: BoundaryPartition, sigma, law: EnergyLaw,
                       config: SolverConfig | None = None, initial=None) -> StepSolution:
    if not lam > 0:
        raise DomainError("resolvent parameter must be positive")
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (2, mesh.n_nodes))
    problem = StepProblem(mesh=mesh, partition=partition, sigma=lam * sigma, law=law, mu=f)
    return solve_step(problem, config, initial)


def resolvent(lam: float, f, mesh: Mesh, partition: BoundaryPartition, sigma, law: EnergyLaw,
              config: SolverConfig | None = None) -> np.ndarray:
    """Density rho with rho + lam dE(rho) containing f (zero boundary data)."""
    return resolvent_solution(lam, f, mesh, partition, sigma, law, config).rho


def apply_operator(mesh: Mesh, partition: BoundaryPartition, sigma, eta) -> np.ndarray:
    """Nodal representative of -div(sigma grad eta): lumped-mass inverse of the
    stiffness action on free nodes, zero on Dirichlet nodes."""
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (2, mesh.n_nodes))
    eta = np.asarray(eta, dtype=float)
    out = np.zeros_like(eta)
    for k in range(2):
        h = poisson_handle(mesh, partition[k], sigma[k])
        free = partition[k].free_nodes
        out[k, free] = (h.A @ eta[k])[free] / mesh.lumped_mass[free]
    return out


def monotonicity_term(mesh: Mesh, partition: BoundaryPartition, rho_a, eta_a, rho_b, eta_b) -> float:
    """Dual pairing of dE(rho_a) - dE(rho_b) with rho_a - rho_b.

    The dual potential of the operator image is the potential itself, so the
    pairing reduces to a lumped sum over free nodes.
    """
    m = mesh.lumped_mass
    drho = np.asarray(rho_a) - np.asarray(rho_b)
    deta = np.asarray(eta_a) - np.asarray(eta_b)
    return float(sum(m[partition[k].free_nodes] @ (drho[k] * deta[k])[partition[k].free_nodes] for k in range(2)))


@dataclass(frozen=True)
class NonexpansiveReport:
    input_distance: float
    output_distance: float
    pairing: float        # <J f - J f', f - f'> in the dual metric

    @property
    def nonexpansive(self) -> bool:
        return self.output_distance <= self.input_distance + 1e-8

    @property
    def firmly_nonexpansive(self) -> bool:
        return self.output_distance**2 <= self.pairing + 1e-8


def nonexpansive_check(lam, f_a, f_b, mesh, partition, sigma, law, config=None) -> NonexpansiveReport:
    ja = resolvent(lam, f_a, mesh, partition, sigma, law, config)
    jb = resolvent(lam, f_b, mesh, partition, sigma, law, config)
    dj = ja - jb
    df = np.asarray(f_a, dtype=float) - np.asarray(f_b, dtype=float)
    return NonexpansiveReport(
        input_distance=product_norm(mesh, partition, sigma, df),
        output_distance=product_norm(mesh, partition, sigma, dj),
        pairing=product_inner(mesh, partition, sigma, dj, df),
    )


# -- trajectory comparisons --------------------------------------------------------

def _same(a, b) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b))


def _homogeneous(sc: Scenario) -> str | None:
    if sc.has_drift:
        return "drift is nonzero"
    if np.any(sc.boundary.g != 0) or np.any(sc.boundary.pi != 0):
        return "boundary data are nonzero"
    return None


def _source_key(src):
    if isinstance(src, TimeTable):
        return tuple((t0, t1, v.f0.tobytes(), v.fbar.tobytes()) for t0, t1, v in src.segments)
    return (src.f0.tobytes(), src.fbar.tobytes())


def _check_compatible(a: Scenario, b: Scenario):
    if a.mesh is not b.mesh and not _same(a.mesh.points, b.mesh.points):
        raise UsageError("trajectories live on different meshes")
    if any(a.partition[k].key != b.partition[k].key for k in range(2)):
        raise UsageError("boundary partitions differ")
    if a.law.to_config() != b.law.to_config():
        raise UsageError("energy laws differ")
    if not _same(a.sigma, b.sigma):
        raise UsageError("diffusion weights differ")
    if _source_key(a.source) != _source_key(b.source):
        raise UsageError("sources differ")
    if a.tau != b.tau or a.T != b.T:
        raise UsageError("time grids differ")


@dataclass
class ContractionReport:
    distances: list
    verdict: str                    # "PASS", "FAIL" or "N/A"
    reason: str = ""
    max_increase: float = 0.0
    monotonicity: list = field(default_factory=list)

    @property
    def summary(self) -> str:
        if self.verdict == "N/A":
            return f"N/A ({self.reason})"
        word = "unique within tolerance" if self.verdict == "PASS" else "contraction violated"
        return f"{self.verdict}: {word}, largest step increase {self.max_increase:.3e}"


def contraction_check(scenario_a: Scenario, traj_a: Trajectory, scenario_b: Scenario, traj_b: Trajectory,
                      tol: float = 1e-8) -> ContractionReport:
    """Step-wise product dual-norm distance between two runs of the same data."""
    _check_compatible(scenario_a, scenario_b)
    if traj_a.steps != traj_b.steps:
        raise UsageError("trajectories have different snapshot steps")
    reason = _homogeneous(scenario_a) or _homogeneous(scenario_b)
    dist = [product_norm(scenario_a.mesh, scenario_a.partition, scenario_a.sigma, ra - rb)
            for ra, rb in zip(traj_a.rho, traj_b.rho)]
    mono = [monotonicity_term(scenario_a.mesh, scenario_a.partition, ra, ea, rb, eb)
            for ra, ea, rb, eb in zip(traj_a.rho[1:], traj_a.eta[1:], traj_b.rho[1:], traj_b.eta[1:])]
    if reason is not None:
        return ContractionReport(dist, "N/A", reason, monotonicity=mono)
    inc = max((d1 - d0 for d0, d1 in zip(dist[:-1], dist[1:])), default=0.0)
    ok = inc <= tol and min(mono, default=0.0) >= -tol
    return ContractionReport(dist, "PASS" if ok else "FAIL", max_increase=float(inc), monotonicity=mono)


@dataclass
class UniquenessDiagnostic:
    monotonicity: list
    drift_pairing: list
    distance_sq: list
    required_constant: float        # smallest c making the sufficient condition hold on the samples

    def holds_with(self, c: float) -> bool:
        return all(m + p >= -c * d - 1e-12 for m, p, d in zip(self.monotonicity, self.drift_pairing, self.distance_sq))


def uniqueness_diagnostic(scenario_a: Scenario, traj_a: Trajectory, scenario_b: Scenario,
                          traj_b: Trajectory) -> UniquenessDiagnostic:
    """Both sides of the drift-dependent sufficient condition on a trajectory pair.

    The divergence of the drift flux is represented through the divergence
    adjoint, i.e. as the functional xi -> -int (rho V) . grad xi.
    """
    _check_compatible(scenario_a, scenario_b)
    sc = scenario_a
    mesh = sc.mesh
    times = sc.step_times()
    mono, drift_pair, dsq = [], [], []
    for j in range(1, len(traj_a.steps)):
        i = traj_a.steps[j]
        ra, rb = traj_a.rho[j], traj_b.rho[j]
        mono.append(monotonicity_term(mesh, sc.partition, ra, traj_a.eta[j], rb, traj_b.eta[j]))
        va = scenario_a.drift_on(times[i - 1], times[i])
        vb = scenario_b.drift_on(times[i - 1], times[i])
        flux = np.stack([mesh.cell_average(ra[k])[:, None] * va[k] - mesh.cell_average(rb[k])[:, None] * vb[k]
                         for k in range(2)])
        drift_pair.append(product_inner(mesh, sc.partition, sc.sigma, (np.zeros_like(ra), flux), ra - rb))
        dsq.append(product_norm(mesh, sc.partition, sc.sigma, ra - rb) ** 2)
    needed = 0.0
    for m_, p_, d_ in zip(mono, drift_pair, dsq):
        lhs = m_ + p_
        if lhs < 0:
            needed = max(needed, math.inf if d_ == 0 else -lhs / d_)
    return UniquenessDiagnostic(mono, drift_pair, dsq, needed)


# -- stationary limit -----------------------------------------------------------

@dataclass
class StationaryProbe:
    converged: bool
    rho_inf: np.ndarray
    eta_inf: np.ndarray
    eta_direct: np.ndarray
    tail_distances: list
    potential_mismatch: float
    membership_residual: float
    steps: int
    message: str = ""


def _constant_source(sc: Scenario) -> SourceData:
    src = sc.source
    if not isinstance(src, TimeTable):
        return src
    if len(src.segments) == 0:
        return SourceData.zeros(sc.mesh)
    if len(src.segments) == 1:
        t0, t1, value = src.segments[0]
        if t0 <= 0.0 and t1 >= sc.T:
            return value
    raise UsageError("stationary probe needs a source that is constant in time")


def stationary_potentials(scenario: Scenario) -> np.ndarray:
    """Potentials of the stationary system: two independent mixed Poisson solves."""
    sc = scenario
    src = _constant_source(sc)
    return np.stack([
        solve_mixed_poisson(sc.mesh, sc.partition[k], sc.sigma[k], mu=src.f0[k], chi=src.fbar[k],
                            pi=sc.boundary.pi[k], g=sc.boundary.g[k])
        for k in range(2)
    ])


def stationary_probe(scenario: Scenario, config: SolverConfig | None = None,
                     tail_tolerance: float = 1e-8) -> StationaryProbe:
    sc = scenario
    if sc.has_drift:
        raise UsageError("stationary probe needs zero drift")
    eta_direct = stationary_potentials(sc)
    state = {"prev": sc.rho0, "tail": []}

    def watch(i, sol, report):
        d = product_norm(sc.mesh, sc.partition, sc.sigma, sol.rho - state["prev"])
        state["tail"].append(d)
        state["prev"] = sol.rho
        return d < tail_tolerance

    traj = run(sc, config, callback=watch)
    tail = state["tail"]
    converged = traj.converged and bool(tail) and tail[-1] < tail_tolerance
    rho_inf, eta_inf = traj.rho[-1], traj.eta[-1]
    res = fenchel_residual(sc.law, None, np.maximum(rho_inf[0], 0), np.maximum(rho_inf[1], 0),
                           eta_direct[0], eta_direct[1])
    comp = max(float(np.max(np.abs(rho_inf[k]) * (eta_direct.max(axis=0) - eta_direct[k]))) for k in range(2))
    return StationaryProbe(
        converged=converged,
        rho_inf=rho_inf,
        eta_inf=eta_inf,
        eta_direct=eta_direct,
        tail_distances=tail,
        potential_mismatch=float(np.max(np.abs(eta_inf - eta_direct))),
        membership_residual=max(float(np.max(np.abs(res))), comp),
        steps=len(tail),
        message=traj.message,
    )
