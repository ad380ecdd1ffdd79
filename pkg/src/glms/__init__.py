"""Sparsification and iterative refinement for generalized linear models."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AuditFailure,
    ConfigError,
    DegenerateLossError,
    DomainError,
    GLMSError,
    InconsistencyError,
    InfeasibleError,
    NoContractionError,
    NonDifferentiableError,
    ThresholdNotAttainedError,
    UnboundedError,
    UnsupportedError,
)
from .instance import ProblemInstance, lift_shift  # noqa: E402
from .linalg import gram, leverage, leverage_exact, leverage_sketch  # noqa: E402
from .losses import (  # noqa: E402
    CustomLoss,
    GammaLoss,
    LossConstants,
    PowerLoss,
    TukeyLoss,
    TukeyProxyLoss,
    certify_properties,
    divergence_surrogate,
    eval_divergence,
    eval_loss,
    huber,
)
from .solve import glm_iterate, glm_oracle, solve_glm, solve_huber, solve_lp, solve_lp_dual  # noqa: E402
from .sparsify import (  # noqa: E402
    SparsifiedModel,
    SparsifyConfig,
    audit_sparsifier,
    huber_globalize,
    sampling_plan,
    sparsify,
    sparsify_once,
    tukey_sparsify,
)
from .weights import WeightScheme, find_weights, initial_weights, phi  # noqa: E402
