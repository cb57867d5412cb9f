"""Entropic fictitious play for entropy-regularized finite-sum problems over measures."""

__version__ = "0.1.0"

from .baselines import BaselineConfig, mfld_train, pda_simplified_train
from .duality import (
    DiagnosticsConfig,
    DiagnosticsRow,
    diagnostics_row,
    dual_value,
    duality_gap,
    entropy_knn,
    log_partition,
    primal_value,
)
from .efp import EfpConfig, EfpState, MixtureHistory, efp_train, mixture_expectation, naive_efp_step
from .errors import ConfigError, DegenerateError, DomainError, EfpError, NumericalError
from .gibbs import GibbsSpec, LmcConfig, lmc_step, potential_grad, potential_value, sample_gibbs
from .model import (
    GaussianKernels,
    LinearFeatures,
    LogisticLoss,
    NegLogLoss,
    Problem,
    SquaredLoss,
    TanhNeurons,
)
