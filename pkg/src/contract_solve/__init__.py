"""Solvers for optimal dynamic principal-agent contracts.

Full-information benchmark by Lagrange multiplier and adaptive quadrature,
second-best value by a Howard iteration on the free-boundary HJB problem,
forward Monte Carlo cross-checks, and a CSV-emitting command line front end.
"""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, load
from .first_best import (
    BracketFailure,
    FirstBestSolution,
    QuadratureFailure,
    TauStar,
    closed_form_G,
    continuation_boundary,
    principal_value_fb,
    reservation_integral,
    schedules,
    solve_lagrange,
)
from .hjbvi import (
    Grid,
    NoConvergence,
    SecondBestSolution,
    discretize,
    hamiltonian_max,
    howard_solve,
    residual_check,
)
from .incentive import (
    effort_from_z,
    exposure_threshold,
    hamiltonian_psi,
    z_from_effort,
)
from .model import (
    DEFAULTS,
    MODEL_KEYS,
    InvalidParam,
    InvalidParams,
    ModelParams,
    UnsupportedFamily,
    default_params,
    ratio_inverse,
    validate,
)
from .report_cli import cli_dispatch, sigma_sweep, value_of_information, write_csv
from .simulate import (
    DegenerateEffort,
    DeviationResult,
    IncentiveReport,
    MCValue,
    PathBundle,
    PolicyOutOfRange,
    SimConfig,
    in_stop_region,
    incentive_check,
    interpolate_policy,
    mc_principal_value,
    noise_reconstruction_report,
    reconstruct_noise,
    reconstruct_state,
    simulate_paths,
)
