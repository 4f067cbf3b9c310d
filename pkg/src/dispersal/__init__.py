"""Two-species overcrowding dispersal: implicit proximal steps with certified duality gaps."""
from .elliptic import hminus1_inner, hminus1_norm, solve_mixed_poisson, transition_work
from .energy_laws import (
    CrowdMotion,
    DomainError,
    EnergyLaw,
    PorousMedium,
    QuadraticShifted,
    Tabulated,
    coupled_membership,
    eval_beta,
    eval_conjugate,
    law_from_config,
    prox_conjugate,
    prox_coupled,
    select_density,
    subdiff_interval,
)
from .evolution import Scenario, ScenarioError, TimeTable, Trajectory, energy, region_classify, run, run_weighted
from .gradient_flow import contraction_check, resolvent, stationary_probe
from .grid import (
    BoundaryData,
    BoundaryPartition,
    BoundarySplit,
    Mesh,
    SourceData,
    build_interval_mesh,
    build_rect_mesh,
)
from .prox_step import SolverConfig, StepProblem, StepSolution, duality_gap, kkt_residuals, recover_density, solve_step

__version__ = "0.1.0"
