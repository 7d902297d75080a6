"""Distribution-free risk certificates for subgroup-sensitive classifiers.

The package solves constrained tail-risk measures (conditional and entropic
value at risk over data subgroups), evaluates high-probability upper bounds
on their population values for sampled neural networks, and trains Gaussian
posteriors by minimizing those bounds directly.
"""

from .bounds import (
    BOUND_KINDS,
    MHAMMEDI_ESTIMATE,
    ONE_EXAMPLE_CLASSICAL,
    ONE_EXAMPLE_DIS,
    SUBGROUPS_KL,
    SUBGROUPS_SQRT,
    BoundContext,
    BoundReport,
    bound_mhammedi_estimate,
    bound_one_example_classical,
    bound_one_example_dis,
    bound_subgroups_kl,
    bound_subgroups_sqrt,
    compute_bound,
    kl_inverse,
    kl_plus,
)
from .data import (
    CLASS_RATIO,
    UNIFORM,
    Dataset,
    SubgroupPartition,
    load_csv,
    partition_by_class,
    partition_per_example,
    standardize,
    stratified_split,
    synth_imbalanced,
    write_csv,
)
from .errors import (
    AlphaOutOfRange,
    BadSpec,
    BatchTooSmall,
    ClassTooSmall,
    ConfigError,
    DimensionMismatch,
    DomainError,
    InputError,
    NonFiniteGradient,
    ParseError,
    RiskcertError,
    SingleClassDataset,
    SolverDidNotConverge,
    TooManySubgroups,
)
from .estimator import SelfCertifiedClassifier
from .experiment import ExperimentConfig, emit_report, run_experiment
from .model import (
    GaussianParamDist,
    MlpArch,
    bounded_cross_entropy,
    classical_kl,
    disintegrated_kl,
    evaluate,
    forward,
    forward_batch,
    load_checkpoint,
    sample_params,
    save_checkpoint,
)
from .risk import (
    ReferenceDistribution,
    RiskSolution,
    RiskSpec,
    SubgroupLosses,
    constrained_weights,
    cvar_weights,
    oracle_risk_grid,
    risk_gradient,
)
from .training import (
    CVAR,
    EVAR,
    AdamState,
    PriorGrid,
    TrainConfig,
    TrainResult,
    adam_step,
    certify,
    learn_prior,
    minibatch_sampler,
    train_posterior,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AlphaOutOfRange",
    "BOUND_KINDS",
    "BadSpec",
    "BatchTooSmall",
    "BoundContext",
    "BoundReport",
    "CLASS_RATIO",
    "CVAR",
    "ClassTooSmall",
    "ConfigError",
    "Dataset",
    "DimensionMismatch",
    "DomainError",
    "EVAR",
    "ExperimentConfig",
    "GaussianParamDist",
    "InputError",
    "MHAMMEDI_ESTIMATE",
    "MlpArch",
    "NonFiniteGradient",
    "ONE_EXAMPLE_CLASSICAL",
    "ONE_EXAMPLE_DIS",
    "ParseError",
    "PriorGrid",
    "ReferenceDistribution",
    "RiskSolution",
    "RiskSpec",
    "RiskcertError",
    "SUBGROUPS_KL",
    "SUBGROUPS_SQRT",
    "SelfCertifiedClassifier",
    "SingleClassDataset",
    "SolverDidNotConverge",
    "SubgroupLosses",
    "SubgroupPartition",
    "TooManySubgroups",
    "TrainConfig",
    "TrainResult",
    "UNIFORM",
    "adam_step",
    "bound_mhammedi_estimate",
    "bound_one_example_classical",
    "bound_one_example_dis",
    "bound_subgroups_kl",
    "bound_subgroups_sqrt",
    "bounded_cross_entropy",
    "certify",
    "classical_kl",
    "compute_bound",
    "constrained_weights",
    "cvar_weights",
    "disintegrated_kl",
    "emit_report",
    "evaluate",
    "forward",
    "forward_batch",
    "kl_inverse",
    "kl_plus",
    "learn_prior",
    "load_checkpoint",
    "load_csv",
    "minibatch_sampler",
    "oracle_risk_grid",
    "partition_by_class",
    "partition_per_example",
    "risk_gradient",
    "run_experiment",
    "sample_params",
    "save_checkpoint",
    "standardize",
    "stratified_split",
    "synth_imbalanced",
    "train_posterior",
    "write_csv",
]
