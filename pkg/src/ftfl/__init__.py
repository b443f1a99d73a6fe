"""Randomized dependent LP rounding for metric fault-tolerant facility location."""

__version__ = "0.1.0"

from .alg import (
    ClientSplit,
    Clustering,
    IntegralSolution,
    Prepared,
    ScaledState,
    build_clusters,
    classify_clients,
    compute_gamma,
    connect,
    default_gamma,
    prepare,
    round_openings,
    run_alg,
    scale_and_preopen,
    split_close_distant,
)
from .errors import (
    ContractError,
    FTFLError,
    InfeasibleError,
    InternalConsistencyError,
    ParseError,
    SizeError,
    SolverError,
    StructureError,
)
from .instance import Instance, generate, parse_instance, serialize_instance, validate_metric
from .lp import FractionalSolution, LpProblem, build_lp, canonicalize, solve_lp
from .oracle import RatioReport, exact_opt, ratio_report
from .rounding import (
    EstimateReport,
    LaminarFamily,
    dependent_round,
    estimate_min_k,
    independent_round,
    round_pair,
)
