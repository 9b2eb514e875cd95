"""Lead-time quotation for an observable M/M/1 queue with risk-averse customers."""

__version__ = "0.1.0"

from .optimize import Problem, QuotationPolicy, SolveResult, solve  # noqa: E402
from .quotes import threshold_bounds  # noqa: E402
from .sim import SimConfig, simulate  # noqa: E402
from .utility import BASE_SCENARIO, InfeasibleServiceError, Scenario, expected_utility  # noqa: E402

__all__ = [
    "BASE_SCENARIO",
    "InfeasibleServiceError",
    "Problem",
    "QuotationPolicy",
    "Scenario",
    "SimConfig",
    "SolveResult",
    "expected_utility",
    "simulate",
    "solve",
    "threshold_bounds",
]
