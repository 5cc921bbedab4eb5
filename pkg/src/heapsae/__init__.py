"""Unit-level small area estimation for heaped and top-coded survey outcomes."""

from ._backend import available_backends, backend_name
from .coarsening import (
    CENSORED_VALUE,
    FULL,
    REDUCED,
    TOP_CODE,
    HeapingParams,
    ObservedAnswer,
    candidate_integers,
    coarsen,
    feasible_levels,
    heaping_probs,
    heaping_probs_discrete,
    rounding_interval,
)
from .model import (
    LN,
    LNM,
    IntensityParams,
    ParameterState,
    ParticipationParams,
    PriorConfig,
    UnitRecord,
    ghn_logpdf,
    hn_logpdf,
    lnm_cdf,
    lnm_pdf,
    log_prior,
    mixing_prob,
    mixture_location,
    participation_prob,
)

__version__ = "0.1.0"

__all__ = [
    "CENSORED_VALUE",
    "FULL",
    "LN",
    "LNM",
    "REDUCED",
    "TOP_CODE",
    "HeapingParams",
    "IntensityParams",
    "ObservedAnswer",
    "ParameterState",
    "ParticipationParams",
    "PriorConfig",
    "UnitRecord",
    "available_backends",
    "backend_name",
    "candidate_integers",
    "coarsen",
    "feasible_levels",
    "ghn_logpdf",
    "heaping_probs",
    "heaping_probs_discrete",
    "hn_logpdf",
    "lnm_cdf",
    "lnm_pdf",
    "log_prior",
    "mixing_prob",
    "mixture_location",
    "participation_prob",
    "rounding_interval",
]
