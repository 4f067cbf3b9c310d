"""One implicit step: the potential problem, its flux/density dual, certificates.

Discrete objects (lumped mass ``m``, stiffness ``A_k`` with the step's
diffusion weight, drift load ``c_k = div_adj(chi_k)``, Neumann load ``b_k``):

potential objective, maximised over eta with eta_k = g_k on Dirichlet nodes::

    D(eta) = sum_k [ (m mu_k + b_k - c_k) . eta_k - 1/2 eta_k' A_k eta_k ]
             - sum_i m_i beta*(max(eta_1i, eta_2i))

flux objective, minimised over densities rho >= 0 and cell fluxes phi that
balance mass against every test function vanishing on the Dirichlet nodes::

    N(rho, phi) = sum_i m_i beta(rho_1i + rho_2i) + sum_k 1/2 int sigma_k |phi_k|^2
                  - sum_k R_k(g~_k)

where ``R_k(xi) = int (sigma phi_k + chi_k) . grad xi + m (rho_k - mu_k) . xi - b_k . xi``
is the boundary flux functional evaluated on the lifted Dirichlet data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .elliptic import poisson_handle
from .energy_laws import DomainError, EnergyLaw, prox_coupled
from .grid import (
    BoundaryPartition,
    Mesh,
    divergence_adjoint,
    gradient,
    lift_dirichlet,
    neumann_load,
)


@dataclass(frozen=True, eq=False)
class StepProblem:
    mesh: Mesh
    partition: BoundaryPartition
    sigma: np.ndarray
    law: EnergyLaw
    mu: np.ndarray
    chi: np.ndarray | None = None
    pi: np.ndarray | None = None
    g: np.ndarray | None = None

    def __post_init__(self):
        mesh = self.mesh
        n, nc, nf = mesh.n_nodes, mesh.n_cells, mesh.n_facets

        def fix(name, value, shape):
            arr = np.zeros(shape) if value is None else np.asarray(value, dtype=float)
            try:
                arr = np.broadcast_to(arr, shape).astype(float)
            except ValueError as exc:
                raise DomainError(f"{name} has shape {np.shape(value)}, expected {shape}") from exc
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

        fix("sigma", self.sigma, (2, n))
        fix("mu", self.mu, (2, n))
        fix("chi", self.chi, (2, nc, mesh.dim))
        fix("pi", self.pi, (2, nf))
        fix("g", self.g, (2, n))
        if np.any(self.sigma <= 0):
            raise DomainError("sigma must be positive")

    # -- assembled pieces -----------------------------------------------------
    @cached_property
    def handles(self):
        return tuple(poisson_handle(self.mesh, self.partition[k], self.sigma[k]) for k in range(2))

    @cached_property
    def drift_load(self) -> np.ndarray:
        return np.stack([divergence_adjoint(self.mesh, self.chi[k]) for k in range(2)])

    @cached_property
    def boundary_load(self) -> np.ndarray:
        return np.stack([neumann_load(self.mesh, self.partition[k], self.pi[k]) for k in range(2)])

    @cached_property
    def lifted(self) -> np.ndarray:
        return lift_dirichlet(self.mesh, self.partition, self.g, self.sigma)

    @cached_property
    def linear_load(self) -> np.ndarray:
        """Coefficient of the linear part of D: m mu + b - c."""
        return self.mesh.lumped_mass * self.mu + self.boundary_load - self.drift_load

    @cached_property
    def sigma_cells(self) -> np.ndarray:
        return self.mesh.cell_average(self.sigma)

    def dirichlet_mask(self, k: int) -> np.ndarray:
        return self.partition[k].dirichlet_mask

    def with_dirichlet(self, eta) -> np.ndarray:
        eta = np.array(eta, dtype=float)
        for k in range(2):
            d = self.partition[k].dirichlet_nodes
            eta[k, d] = self.g[k, d]
        return eta


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20000
    gap_tolerance: float = 1e-8
    residual_tolerance: float = 1e-8
    primal_step: float | None = None
    dual_step: float | None = None
    relaxation: float = 1.0
    power_iterations: int = 50
    check_every: int = 10

    def __post_init__(self):
        if self.max_iterations < 1 or self.check_every < 1 or self.power_iterations < 1:
            raise DomainError("iteration counts must be positive")
        if self.gap_tolerance <= 0 or self.residual_tolerance <= 0:
            raise DomainError("tolerances must be positive")
        if not 0.0 < self.relaxation < 2.0:
            raise DomainError("relaxation must lie in (0, 2)")
        if self.primal_step is not None and self.primal_step <= 0:
            raise DomainError("primal step must be positive")
        if self.dual_step is not None and self.dual_step <= 0:
            raise DomainError("dual step must be positive")
        if self.primal_step is not None and self.dual_step is not None:
            if self.primal_step * self.dual_step > 1.0:
                raise DomainError("step sizes must satisfy primal*dual <= 1")


@dataclass(frozen=True)
class KKTResiduals:
    negativity: tuple
    fenchel: float
    complementarity: tuple
    max_violation: float

    def as_dict(self) -> dict:
        return {
            "negativity": list(self.negativity),
            "fenchel": self.fenchel,
            "complementarity": list(self.complementarity),
            "max_violation": self.max_violation,
        }


@dataclass(frozen=True, eq=False)
class StepSolution:
    eta: np.ndarray
    eta_max: np.ndarray
    rho: np.ndarray
    flux: np.ndarray
    gap: float
    relative_gap: float
    kkt: KKTResiduals
    iterations: int
    converged: bool
    residual: float
    certificate: tuple = field(repr=False)   # feasible (rho, flux) behind the gap
    dual: np.ndarray = field(repr=False, default=None)
    gap_history: tuple = field(repr=False, default=())


# -- objectives ------------------------------------------------------------------

def dual_objective(problem: StepProblem, eta) -> float:
    eta = np.asarray(eta, dtype=float)
    m = problem.mesh.lumped_mass
    val = float(np.sum(problem.linear_load * eta))
    for k in range(2):
        val -= 0.5 * problem.handles[k].energy(eta[k])
    val -= float(m @ problem.law.conjugate(eta.max(axis=0)))
    return val


def _flux_current(problem, rho, flux):
    """Weak balance residual per species: m(rho - mu) + div_adj(sigma phi + chi) - b."""
    mesh = problem.mesh
    out = np.empty((2, mesh.n_nodes))
    for k in range(2):
        cur = problem.sigma_cells[k][:, None] * flux[k] + problem.chi[k]
        out[k] = mesh.lumped_mass * (rho[k] - problem.mu[k]) + divergence_adjoint(mesh, cur) - problem.boundary_load[k]
    return out


def balance_residual(problem: StepProblem, rho, flux) -> np.ndarray:
    """Max-norm of the weak balance residual over free test functions, per species."""
    res = _flux_current(problem, np.asarray(rho, float), np.asarray(flux, float))
    return np.array([np.max(np.abs(res[k, problem.partition[k].free_nodes]), initial=0.0) for k in range(2)])


def primal_objective(problem: StepProblem, rho, flux, tol: float = 0.0) -> float:
    rho = np.asarray(rho, dtype=float)
    flux = np.asarray(flux, dtype=float)
    mesh = problem.mesh
    if np.any(rho < -tol):
        return np.inf
    total = rho.sum(axis=0)
    sup = problem.law.domain_sup()
    if np.any(total > sup + tol):
        return np.inf
    total = np.minimum(total, sup)
    val = float(mesh.lumped_mass @ problem.law.beta(total))
    if not np.isfinite(val):
        return np.inf
    res = _flux_current(problem, rho, flux)
    for k in range(2):
        val += 0.5 * float(np.sum(mesh.volumes[:, None] * problem.sigma_cells[k][:, None] * flux[k] ** 2))
        val -= float(res[k] @ problem.lifted[k])
    return val


def duality_gap(problem: StepProblem, rho, flux, eta, tol: float = 0.0) -> float:
    """N(rho, flux) - D(eta); +inf when rho is infeasible beyond ``tol``."""
    n_val = primal_objective(problem, rho, flux, tol)
    if not np.isfinite(n_val):
        return np.inf
    return n_val - dual_objective(problem, eta)


# -- density recovery ------------------------------------------------------------

def _dirichlet_densities(problem: StepProblem, eta, rho) -> np.ndarray:
    """Fill densities on Dirichlet nodes from the state relation at fixed potentials.

    Where only species k is prescribed, rho_k minimises beta(rho_k + rho_other)
    - rho_k g_k over rho_k >= 0.  Where both are prescribed, the larger
    potential takes the whole density; exact ties split it evenly.
    """
    law = problem.law
    d1, d2 = problem.dirichlet_mask(0), problem.dirichlet_mask(1)
    rho = np.array(rho, dtype=float)
    total1 = law.conjugate_subdiff(eta[0])[0]
    total2 = law.conjugate_subdiff(eta[1])[0]
    only1, only2, both = d1 & ~d2, d2 & ~d1, d1 & d2
    rho[0, only1] = np.maximum(total1[only1] - rho[1, only1], 0.0)
    rho[1, only2] = np.maximum(total2[only2] - rho[0, only2], 0.0)
    if np.any(both):
        e1, e2 = eta[0, both], eta[1, both]
        t = np.where(e1 >= e2, total1[both], total2[both])
        rho[0, both] = np.where(e1 > e2, t, np.where(e1 < e2, 0.0, 0.5 * t))
        rho[1, both] = np.where(e2 > e1, t, np.where(e2 < e1, 0.0, 0.5 * t))
    return rho


def _residual_density(problem: StepProblem, eta) -> np.ndarray:
    m = problem.mesh.lumped_mass
    rho = np.empty_like(eta)
    for k in range(2):
        A = problem.handles[k].A
        rho[k] = problem.mu[k] + (problem.boundary_load[k] - problem.drift_load[k] - A @ eta[k]) / m
    return rho


def recover_density(problem: StepProblem, eta) -> np.ndarray:
    """Densities reproducing the weak balance exactly on every free basis function."""
    eta = np.asarray(eta, dtype=float)
    return _dirichlet_densities(problem, eta, _residual_density(problem, eta))


# -- residuals -------------------------------------------------------------------

def kkt_residuals(problem: StepProblem, solution=None, *, rho=None, eta=None) -> KKTResiduals:
    """Negativity, Fenchel and complementarity residuals of a (rho, eta) pair.

    A total density exceeding the effective domain by e is measured at the
    domain edge plus |eta_max| * e, so the residual stays finite.
    """
    if solution is not None:
        rho, eta = solution.rho, solution.eta
    rho = np.asarray(rho, dtype=float)
    eta = np.asarray(eta, dtype=float)
    law = problem.law
    emax = eta.max(axis=0)
    neg = tuple(float(max(0.0, -rho[k].min())) for k in range(2))
    total = rho.sum(axis=0)
    inside = np.clip(total, 0.0, law.domain_sup())
    fen = law.beta(inside) + law.conjugate(emax) - emax * inside + np.abs(emax) * np.abs(total - inside)
    fen = float(max(0.0, np.max(fen)))
    comp = tuple(float(np.max(np.abs(rho[k]) * (emax - eta[k]))) for k in range(2))
    return KKTResiduals(neg, fen, comp, max(max(neg), fen, max(comp)))


# -- solver ----------------------------------------------------------------------

class _Splitting:
    """Primal-dual iteration in the lumped-mass metric.

    The potential objective is split into the quadratic part
    ``Q(eta) = sum_k 1/2 eta_k'A_k eta_k + c_k . eta_k`` restricted to the
    Dirichlet data, whose resolvent is a cached sparse solve, and the nodal
    part ``H(eta) = sum_i m_i beta*(max eta_i) - (m mu + b) . eta`` whose
    resolvent is the coupled prox after a linear shift.  The coupling
    operator between the two parts is the identity, so its norm is 1.
    """

    def __init__(self, problem: StepProblem, config: SolverConfig):
        self.p = problem
        self.cfg = config
        mesh = problem.mesh
        self.m = mesh.lumped_mass
        self.mu_hat = problem.mu + problem.boundary_load / self.m
        self.free = [problem.partition[k].free_nodes for k in range(2)]
        self.fixed = [problem.partition[k].dirichlet_nodes for k in range(2)]
        self.op_norm = 1.0
        if config.primal_step is None:
            lo, hi = self._spectral_bounds(config.power_iterations)
            tp = 1.0 / np.sqrt(lo * hi)
        else:
            tp = config.primal_step
        td = config.dual_step if config.dual_step is not None else 0.95 / (tp * self.op_norm**2)
        self.tp, self.td = tp, td
        self._lu = []
        self._rhs_fixed = []
        for k in range(2):
            h = problem.handles[k]
            F, Dn = self.free[k], self.fixed[k]
            self._lu.append(h.shifted_solver(self.m[F], tp))
            gfix = problem.g[k, Dn]
            self._rhs_fixed.append(-problem.drift_load[k, F] - h.A_fd @ gfix)

    def _spectral_bounds(self, iters):
        """Extreme eigenvalues of M^-1 A on free nodes, over both species."""
        bounds = [self.p.handles[k].spectral_bounds(self.m[self.free[k]], iters) for k in range(2)]
        return min(b[0] for b in bounds), max(b[1] for b in bounds)

    def prox_quadratic(self, v):
        x = np.empty_like(v)
        for k in range(2):
            F, Dn = self.free[k], self.fixed[k]
            x[k, Dn] = self.p.g[k, Dn]
            x[k, F] = self._lu[k].solve(self.m[F] * v[k, F] / self.tp + self._rhs_fixed[k])
        return x

    def prox_nodal_conjugate(self, w):
        td = self.td
        q = (w + self.mu_hat) / td
        a1, a2 = prox_coupled(self.p.law, None, 1.0 / td, q[0], q[1])
        a = np.stack([a1, a2])
        return w - td * a, a

    def certificate(self, x, rho_dual):
        """Feasible flux/density pair built from the dual density; returns gap data."""
        p = self.p
        rho_rec = _residual_density(p, x)
        rho = rho_dual.copy()
        rho = _dirichlet_densities(p, x, rho)
        r1, r2 = p.law.project_feasible(rho[0], rho[1])
        rho = np.stack([r1, r2])
        flux = np.empty((2, p.mesh.n_cells, p.mesh.dim))
        for k in range(2):
            F = self.free[k]
            w = np.zeros(p.mesh.n_nodes)
            w[F] = p.handles[k].solve_free(-self.m[F] * (rho[k, F] - rho_rec[k, F]))
            flux[k] = gradient(p.mesh, x[k] + w)
        n_val = primal_objective(p, rho, flux)
        d_val = dual_objective(p, x)
        gap = n_val - d_val
        # the residual formula is meaningless on Dirichlet nodes, so only free nodes set the scale
        mism = scale = 0.0
        for k in range(2):
            F = self.free[k]
            mism = max(mism, float(np.max(np.abs(rho_dual[k, F] - rho_rec[k, F]), initial=0.0)))
            scale = max(scale, float(np.max(np.abs(rho_rec[k, F]), initial=0.0)))
        return gap, d_val, rho, flux, mism / (1.0 + scale)

    def run(self, x0=None, y0=None):
        p, cfg = self.p, self.cfg
        x = p.with_dirichlet(p.lifted if x0 is None else x0)
        y = _residual_density(p, x) - self.mu_hat if y0 is None else np.array(y0, dtype=float)
        tp, td, relax = self.tp, self.td, cfg.relaxation
        best = None
        history = []
        it = 0
        for it in range(1, cfg.max_iterations + 1):
            xh = self.prox_quadratic(x - tp * y)
            yh, a = self.prox_nodal_conjugate(y + td * (2.0 * xh - x))
            if relax == 1.0:
                x_new, y_new = xh, yh
            else:
                x_new, y_new = x + relax * (xh - x), y + relax * (yh - y)
            if it % cfg.check_every == 0 or it == cfg.max_iterations:
                gap, d_val, rho_c, flux_c, mism = self.certificate(xh, yh + self.mu_hat)
                rel = gap / (1.0 + abs(d_val))
                drift = float(np.max(np.abs(a - xh))) / (1.0 + float(np.max(np.abs(xh))))
                resid = max(mism, drift)
                if best is None or rel < best[0]:
                    best = (rel, gap, xh.copy(), yh.copy(), rho_c, flux_c, resid)
                history.append(best[0])
                if rel <= cfg.gap_tolerance and resid <= cfg.residual_tolerance:
                    best = (rel, gap, xh.copy(), yh.copy(), rho_c, flux_c, resid)
                    return best, it, True, history
            x, y = x_new, y_new
        return best, it, False, history


def solve_step(problem: StepProblem, config: SolverConfig | None = None, initial=None) -> StepSolution:
    """Maximise the potential objective; certify by the duality gap.

    ``initial`` may be a previous :class:`StepSolution` or a potential array
    used as a warm start.
    """
    config = config or SolverConfig()
    x0 = y0 = None
    if isinstance(initial, StepSolution):
        x0, y0 = initial.eta, initial.dual
    elif initial is not None:
        x0 = np.asarray(initial, dtype=float)
    if x0 is not None and x0.shape != (2, problem.mesh.n_nodes):
        raise DomainError("warm start has the wrong shape")
    if y0 is not None and y0.shape != (2, problem.mesh.n_nodes):
        y0 = None
    solver = _Splitting(problem, config)
    best, iters, converged, history = solver.run(x0, y0)
    rel, gap, eta, dual, rho_c, flux_c, resid = best
    rho = recover_density(problem, eta)
    flux = np.stack([gradient(problem.mesh, eta[k]) for k in range(2)])
    return StepSolution(
        eta=eta,
        eta_max=eta.max(axis=0),
        rho=rho,
        flux=flux,
        gap=float(gap),
        relative_gap=float(rel),
        kkt=kkt_residuals(problem, rho=rho, eta=eta),
        iterations=iters,
        converged=converged,
        residual=float(resid),
        certificate=(rho_c, flux_c),
        dual=dual,
        gap_history=tuple(history),
    )
