"""Rush-Larsen exponential multistep schemes for stiff split ODEs."""

from .harness import (
    ReferenceSolution,
    convergence_study,
    critical_dt,
    error_metric,
    project_cubic,
    reference_solution,
)
from .phi import phi, phi_diag
from .problems import (
    SplitProblem,
    br_model,
    load_model_params,
    manufactured_membrane,
    manufactured_smooth,
    theta_split,
)
from .schemes import ALL_SCHEMES, History, SchemeSpec, Trajectory, integrate
from .stability import StabilityGrid, real_axis_crossing, rho, scan

__all__ = [
    "ALL_SCHEMES",
    "History",
    "ReferenceSolution",
    "SchemeSpec",
    "SplitProblem",
    "StabilityGrid",
    "Trajectory",
    "br_model",
    "convergence_study",
    "critical_dt",
    "error_metric",
    "integrate",
    "load_model_params",
    "manufactured_membrane",
    "manufactured_smooth",
    "phi",
    "phi_diag",
    "project_cubic",
    "real_axis_crossing",
    "reference_solution",
    "rho",
    "scan",
    "theta_split",
]

__version__ = "0.1.0"
