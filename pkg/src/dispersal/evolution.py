"""Time stepping: a sequence of implicit proximal steps with monitors.

Step i covers (t_{i-1}, t_i] with t_i = min(i tau, T).  Sources and drifts are
averaged exactly over that slab; the drift flux uses the previous density.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .elliptic import product_norm
from .energy_laws import DomainError, EnergyLaw
from .grid import BoundaryData, BoundaryPartition, Mesh, SourceData, divergence_adjoint, gradient, lift_dirichlet, neumann_load
from .prox_step import SolverConfig, StepProblem, StepSolution, solve_step


class ScenarioError(DomainError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True, eq=False)
class TimeTable:
    """Piecewise-constant-in-time data: ``segments`` is a tuple of (t0, t1, value).

    Values outside every segment are zero.  ``value`` is an array, or a
    :class:`SourceData` for source tables.
    """

    segments: tuple

    def __post_init__(self):
        for t0, t1, _ in self.segments:
            if not t1 > t0:
                raise ScenarioError("time table", f"segment [{t0}, {t1}] is empty")

    @property
    def is_constant(self) -> bool:
        return len(self.segments) <= 1

    def average(self, a: float, b: float, zero):
        total = None
        for t0, t1, value in self.segments:
            overlap = min(b, t1) - max(a, t0)
            if overlap <= 0:
                continue
            term = _scale(value, overlap / (b - a))
            total = term if total is None else _add(total, term)
        return zero if total is None else total


def _scale(v, c):
    if isinstance(v, SourceData):
        return SourceData(v.f0 * c, v.fbar * c)
    return np.asarray(v) * c


def _add(u, v):
    if isinstance(u, SourceData):
        return SourceData(u.f0 + v.f0, u.fbar + v.fbar)
    return u + v


@dataclass(frozen=True, eq=False)
class Scenario:
    mesh: Mesh
    partition: BoundaryPartition
    law: EnergyLaw
    sigma: np.ndarray
    rho0: np.ndarray
    tau: float
    T: float
    drift: np.ndarray | TimeTable | None = None
    source: SourceData | TimeTable | None = None
    boundary: BoundaryData | None = None
    alpha: tuple | None = None
    snapshot_stride: int = 1

    def __post_init__(self):
        mesh = self.mesh
        n, nc = mesh.n_nodes, mesh.n_cells
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (2, n)).copy()
        if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ScenarioError("sigma", "must be positive and finite")
        object.__setattr__(self, "sigma", sigma)
        rho0 = np.asarray(self.rho0, dtype=float)
        if rho0.shape != (2, n):
            raise ScenarioError("initial", f"expected shape (2, {n}), got {rho0.shape}")
        if not np.all(np.isfinite(rho0)) or np.any(rho0 < 0):
            raise ScenarioError("initial", "initial densities must be finite and nonnegative")
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ScenarioError("time.tau", "must be positive")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ScenarioError("time.T", "must be positive")
        if self.tau > self.T:
            raise ScenarioError("time.tau", f"tau={self.tau} exceeds the horizon T={self.T}")
        if self.snapshot_stride < 1:
            raise ScenarioError("time.snapshot_stride", "must be at least 1")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=float)
            if a.shape != (2,) or np.any(a <= 0) or not np.all(np.isfinite(a)):
                raise ScenarioError("weights", "need two positive weights")
            object.__setattr__(self, "alpha", (float(a[0]), float(a[1])))
        weights = np.ones(2) if self.alpha is None else np.asarray(self.alpha)
        if not np.isfinite(energy(self.law, rho0 * weights[:, None], mesh, tol=0.0)):
            raise ScenarioError("initial", "initial energy is infinite")
        if self.drift is None:
            object.__setattr__(self, "drift", np.zeros((2, nc, mesh.dim)))
        elif not isinstance(self.drift, TimeTable):
            v = np.asarray(self.drift, dtype=float)
            if v.shape != (2, nc, mesh.dim):
                raise ScenarioError("drift", f"expected shape (2, {nc}, {mesh.dim})")
            object.__setattr__(self, "drift", v)
        if self.source is None:
            object.__setattr__(self, "source", SourceData.zeros(mesh))
        if self.boundary is None:
            object.__setattr__(self, "boundary", BoundaryData.zeros(mesh))
        object.__setattr__(self, "rho0", rho0)

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.tau - 1e-9))

    def step_times(self) -> np.ndarray:
        n = self.n_steps
        t = np.minimum(np.arange(n + 1) * self.tau, self.T)
        t[-1] = self.T
        return t

    def drift_on(self, a, b) -> np.ndarray:
        if isinstance(self.drift, TimeTable):
            return self.drift.average(a, b, np.zeros((2, self.mesh.n_cells, self.mesh.dim)))
        return self.drift

    def source_on(self, a, b) -> SourceData:
        if isinstance(self.source, TimeTable):
            return self.source.average(a, b, SourceData.zeros(self.mesh))
        return self.source

    @property
    def has_drift(self) -> bool:
        if isinstance(self.drift, TimeTable):
            return any(np.any(np.asarray(v) != 0) for _, _, v in self.drift.segments)
        return bool(np.any(self.drift != 0))


@dataclass(frozen=True)
class StepReport:
    time: float
    energy: float
    mass: tuple
    dissipation: float
    slack: float
    gap: float
    kkt_max: float
    negativity: float
    apriori: float
    iterations: int
    converged: bool


@dataclass(eq=False)
class Trajectory:
    times: list
    rho: list
    eta: list
    reports: list = field(default_factory=list)
    steps: list = field(default_factory=list)   # step indices of the snapshots
    converged: bool = True
    message: str = ""
    initial_energy: float = 0.0
    initial_mass: tuple = (0.0, 0.0)


def energy(law: EnergyLaw, rho, mesh: Mesh, tol: float = 1e-8) -> float:
    """Lumped integral of beta(rho_1 + rho_2); +inf if infeasible beyond ``tol``."""
    rho = np.asarray(rho, dtype=float)
    scale = 1.0 + float(np.max(np.abs(rho), initial=0.0))
    if np.any(rho < -tol * scale):
        return np.inf
    total = rho.sum(axis=0)
    sup = law.domain_sup()
    if np.any(total > sup + tol * scale):
        return np.inf
    return float(mesh.lumped_mass @ law.beta(np.minimum(total, sup)))


def region_classify(rho, threshold: float = 1e-6) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    a, b = rho[0] > threshold, rho[1] > threshold
    labels = np.full(rho.shape[1], "vacuum", dtype=object)
    labels[a & ~b] = "S1"
    labels[b & ~a] = "S2"
    labels[a & b] = "S"
    return labels


def _quad(mesh, sigma_cells, grad):
    return 0.5 * float(np.sum(mesh.volumes[:, None] * sigma_cells[:, None] * grad**2))


class _Monitor:
    """Evaluates the per-step energy inequality and the boundedness tracker."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        mesh = sc.mesh
        self.m = mesh.lumped_mass
        self.lift = lift_dirichlet(mesh, sc.partition, sc.boundary.g, sc.sigma)
        self.sig_c = mesh.cell_average(sc.sigma)
        self.grad_lift = np.stack([gradient(mesh, self.lift[k]) for k in range(2)])
        self.lift_energy = sum(_quad(mesh, self.sig_c[k], self.grad_lift[k]) for k in range(2))
        self.neumann = np.stack([neumann_load(mesh, sc.partition[k], sc.boundary.pi[k]) for k in range(2)])
        self.threshold = sc.law.coercivity[1]

    def shifted_energy(self, rho):
        e = energy(self.sc.law, rho, self.sc.mesh)
        return e - float(np.sum(self.m * rho * self.lift))

    def apriori(self, rho):
        return float(self.m @ np.maximum(rho.sum(axis=0) - self.threshold, 0.0) ** 2)

    def step(self, tau, rho_prev, rho, eta, src: SourceData, drift):
        mesh = self.sc.mesh
        dev = eta - self.lift
        grad_dev = np.stack([gradient(mesh, dev[k]) for k in range(2)])
        dissipation = sum(_quad(mesh, self.sig_c[k], grad_dev[k]) for k in range(2))
        lhs = self.shifted_energy(rho) - self.shifted_energy(rho_prev) + tau * dissipation
        rhs = tau * self.lift_energy
        for k in range(2):
            rhs += tau * float(self.m @ (src.f0[k] * dev[k]))
            rhs -= tau * float(divergence_adjoint(mesh, src.fbar[k]) @ dev[k])
            flow = mesh.cell_average(rho_prev[k])[:, None] * drift[k]
            rhs -= tau * float(divergence_adjoint(mesh, flow) @ dev[k])
            rhs += tau * float(self.neumann[k] @ dev[k])
        return dissipation, lhs - rhs


def build_step(sc: Scenario, rho_prev, t0, t1) -> tuple[StepProblem, SourceData, np.ndarray]:
    tau = t1 - t0
    src = sc.source_on(t0, t1)
    drift = sc.drift_on(t0, t1)
    mesh = sc.mesh
    mu = rho_prev + tau * src.f0
    chi = np.stack([tau * (mesh.cell_average(rho_prev[k])[:, None] * drift[k] + src.fbar[k]) for k in range(2)])
    problem = StepProblem(
        mesh=mesh,
        partition=sc.partition,
        sigma=tau * sc.sigma,
        law=sc.law,
        mu=mu,
        chi=chi,
        pi=tau * sc.boundary.pi,
        g=sc.boundary.g,
    )
    return problem, src, drift


def run(scenario: Scenario, config: SolverConfig | None = None, callback=None) -> Trajectory:
    """Run the scheme to the horizon; stops early with a flag on non-convergence.

    ``callback(i, solution, report)`` is called after every step; a truthy
    return value ends the run there.
    """
    config = config or SolverConfig()
    sc = scenario
    mesh = sc.mesh
    monitor = _Monitor(sc)
    times = sc.step_times()
    rho = sc.rho0.copy()
    traj = Trajectory(
        times=[0.0], rho=[rho.copy()], eta=[monitor.lift.copy()], steps=[0],
        initial_energy=energy(sc.law, rho, mesh),
        initial_mass=tuple(float(mesh.lumped_mass @ rho[k]) for k in range(2)),
    )
    previous: StepSolution | None = None
    n = sc.n_steps
    for i in range(1, n + 1):
        t0, t1 = float(times[i - 1]), float(times[i])
        problem, src, drift = build_step(sc, rho, t0, t1)
        sol = solve_step(problem, config, initial=None if previous is None else previous.eta)
        dissipation, slack = monitor.step(t1 - t0, rho, sol.rho, sol.eta, src, drift)
        report = StepReport(
            time=t1,
            energy=energy(sc.law, sol.rho, mesh),
            mass=tuple(float(mesh.lumped_mass @ sol.rho[k]) for k in range(2)),
            dissipation=dissipation,
            slack=slack,
            gap=sol.gap,
            kkt_max=sol.kkt.max_violation,
            negativity=max(sol.kkt.negativity),
            apriori=monitor.apriori(sol.rho),
            iterations=sol.iterations,
            converged=sol.converged,
        )
        traj.reports.append(report)
        rho = sol.rho
        previous = sol
        stop = bool(callback(i, sol, report)) if callback is not None else False
        if i % sc.snapshot_stride == 0 or i == n or stop or not sol.converged:
            traj.times.append(t1)
            traj.rho.append(sol.rho.copy())
            traj.eta.append(sol.eta.copy())
            traj.steps.append(i)
        if stop and sol.converged:
            traj.message = f"stopped by request after step {i} (t={t1:.6g})"
            break
        if not sol.converged:
            traj.converged = False
            traj.message = (
                f"step {i} (t={t1:.6g}) stopped after {sol.iterations} iterations "
                f"with relative gap {sol.relative_gap:.3e}"
            )
            break
    return traj


def rescaled(scenario: Scenario) -> Scenario:
    """Scenario for the weighted densities alpha_k rho_k under the plain energy."""
    a = np.asarray(scenario.alpha if scenario.alpha is not None else (1.0, 1.0))
    col = a[:, None]
    src = scenario.source
    if isinstance(src, TimeTable):
        src = TimeTable(tuple((t0, t1, SourceData(v.f0 * col, v.fbar * a[:, None, None])) for t0, t1, v in src.segments))
    else:
        src = SourceData(src.f0 * col, src.fbar * a[:, None, None])
    bd = BoundaryData(scenario.boundary.g, scenario.boundary.pi * col)
    return replace(
        scenario,
        sigma=scenario.sigma * col,
        rho0=scenario.rho0 * col,
        source=src,
        boundary=bd,
        alpha=None,
    )


def run_weighted(scenario: Scenario, config: SolverConfig | None = None) -> Trajectory:
    """Evolution for the energy beta(alpha_1 rho_1 + alpha_2 rho_2).

    Runs the plain scheme on alpha-scaled densities, diffusion weights,
    sources and boundary fluxes, then divides the densities back.
    """
    if scenario.alpha is None:
        return run(scenario, config)
    a = np.asarray(scenario.alpha)[:, None]
    traj = run(rescaled(scenario), config)
    traj.rho = [r / a for r in traj.rho]
    mesh = scenario.mesh
    traj.reports = [
        replace(rep, mass=tuple(rep.mass[k] / float(a[k, 0]) for k in range(2))) for rep in traj.reports
    ]
    traj.initial_mass = tuple(float(mesh.lumped_mass @ traj.rho[0][k]) for k in range(2))
    return traj


def apriori_bound(scenario: Scenario) -> float:
    """Right-hand side of the boundedness estimate for int ((rho_1+rho_2-M)^+)^2.

    Uses the coercivity constants of the law and discrete norms of the data;
    the boundary flux enters through its facet-weighted L2 norm.
    """
    sc = scenario
    mesh = sc.mesh
    m = mesh.lumped_mass
    C, M = sc.law.coercivity
    if C <= 0:
        return np.inf
    monitor = _Monitor(sc)
    lift = monitor.lift
    rho0 = sc.rho0
    l2_lift = float(np.sum(m * lift**2))
    e0 = energy(sc.law, rho0, mesh) - float(np.sum(m * rho0 * lift))
    excess0 = float(m @ np.maximum(rho0.sum(axis=0) - M, 0.0) ** 2)
    times = sc.step_times()
    vmax = 0.0
    src_int = 0.0
    for i in range(1, times.size):
        a, b = times[i - 1], times[i]
        v = sc.drift_on(a, b)
        vmax = max(vmax, float(np.max(np.sum(v**2, axis=-1), initial=0.0)))
        s = sc.source_on(a, b)
        src_int += (b - a) * (float(np.sum(m * s.f0**2)) + float(np.sum(mesh.volumes[:, None] * s.fbar**2)))
    pi_norm = float(np.sum(mesh.facet_measures * sc.boundary.pi**2))
    B = l2_lift + monitor.lift_energy + e0 + sc.T * excess0 + vmax + sc.T * pi_norm + src_int
    growth = sc.T * vmax / C
    return B / C * (1.0 + growth * math.exp(growth))


def hminus1_distance(scenario: Scenario, rho_a, rho_b) -> float:
    return product_norm(scenario.mesh, scenario.partition, scenario.sigma, np.asarray(rho_a) - np.asarray(rho_b))


def time_l2_distance(scenario: Scenario, coarse: Trajectory, fine: Trajectory) -> float:
    """L2-in-time dual-norm distance of two piecewise-constant trajectories.

    Both are sampled on the union of their step grids; each curve takes the
    value of the step that ends at or after the sample interval.
    """
    tc = np.asarray(coarse.times)
    tf = np.asarray(fine.times)
    grid = np.union1d(tc, tf)
    total = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        mid = 0.5 * (a + b)
        ic = int(np.searchsorted(tc, mid))
        jf = int(np.searchsorted(tf, mid))
        d = hminus1_distance(scenario, coarse.rho[ic], fine.rho[jf])
        total += (b - a) * d * d
    return math.sqrt(total)
