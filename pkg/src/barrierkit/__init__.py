"""Barriers of state-constrained nonlinear control systems."""

from .barrier import (AdmissibleBoundary, ArcTermination, BarrierArc, BarrierOptions,
                      assemble_boundary, barrier_arcs, hamiltonian_residual,
                      integrate_barrier_arc, integrate_barrier_arcs)
from .errors import (BarrierKitError, ConfigError, ContractError, DimensionError,
                     DivergenceError, NumericError, ParseError, RangeError, SingularFaceError)
from .fixtures import FIXTURES, get_fixture
from .model import ConstraintSet, ControlSet, RegionLabel, SystemModel, classify_region
from .ode import Event, IntegratorOptions, Trajectory, integrate
from .oracle import (AdmissibilityVerdict, ControlSignal, OracleOptions, VerdictLabel,
                     classify_admissible, grid_classify, semipermeability_report,
                     simulate_forward)
from .tangency import (FaceSearchOptions, TangencyPoint, find_all_tangency_points,
                       find_tangency_points, minimize_hamiltonian, min_max_lie, usable_part)

__version__ = "0.1.0"

__all__ = [
    "AdmissibleBoundary",
    "ArcTermination",
    "BarrierArc",
    "BarrierOptions",
    "assemble_boundary",
    "barrier_arcs",
    "hamiltonian_residual",
    "integrate_barrier_arc",
    "integrate_barrier_arcs",
    "BarrierKitError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DivergenceError",
    "NumericError",
    "ParseError",
    "RangeError",
    "SingularFaceError",
    "FIXTURES",
    "get_fixture",
    "ConstraintSet",
    "ControlSet",
    "RegionLabel",
    "SystemModel",
    "classify_region",
    "Event",
    "IntegratorOptions",
    "Trajectory",
    "integrate",
    "AdmissibilityVerdict",
    "ControlSignal",
    "OracleOptions",
    "VerdictLabel",
    "classify_admissible",
    "grid_classify",
    "semipermeability_report",
    "simulate_forward",
    "FaceSearchOptions",
    "TangencyPoint",
    "find_all_tangency_points",
    "find_tangency_points",
    "minimize_hamiltonian",
    "min_max_lie",
    "usable_part",
]
