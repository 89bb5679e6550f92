"""Conditional independence testing with the partial copula.

Conditional distribution functions are estimated by interpolating a grid of
penalized quantile regressions; the resulting probability integral transforms
are tested for independence with a trimmed Spearman correlation.
"""

from .basis import BasisSpec, expand, expand_matrix
from .baselines import MeanRegressionSpec, gcm_test, npn_test, partial_correlation
from .cdf import (
    ConditionalCdfModel,
    QuantileGrid,
    equidistant_grid,
    eval_conditional_cdf,
    fit_conditional_cdf,
    pit_residuals,
    rearrange,
)
from .dataset import Dataset, load_csv, pseudo_obs, to_pseudo_obs
from .errors import (
    ConvergenceError,
    DegeneracyError,
    DomainError,
    EmptyDataError,
    ParseError,
    PcitError,
    SchemaError,
    ShapeError,
    StageError,
)
from .gencorr import (
    PcConfig,
    PhiFamily,
    TestResult,
    build_trimmed_spearman,
    chi_square_statistic,
    pc_test,
    rho_hat,
    sigma_matrix,
)
from .qreg import (
    PenaltySchedule,
    QuantileFit,
    fit_penalized_quantile,
    pinball_loss,
    select_penalty,
)
from .simulate import DgpSpec, SimReport, run_study, sample_dgp, sample_local_alternative

__version__ = "0.1.0"
