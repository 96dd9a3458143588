"""Split-step approximation of block operator semigroups on product spaces."""

from .errors import (
    ConfigError,
    DomainError,
    OracleValidationError,
    SelfCheckError,
    ShapeError,
    UnsupportedOperatorError,
)
from .linop import (
    BlockOperator,
    DenseOperator,
    SemigroupBounds,
    block_diag,
    block_identity,
    block_norm_bounds,
    block_offdiag,
    certify_semigroup,
    expm,
    fractional_power,
    identity,
    operator_norm,
    phi1_integral,
    shift,
    split_blocks,
    zeros,
)
from .gallery import (
    CouplingKind,
    CouplingSpec,
    GalleryRecipe,
    ProblemInstance,
    build_catalog,
    build_instance,
    dirichlet_eigenvalues,
    dirichlet_laplacian,
    gallery_list,
    make_bounded_control,
    make_fractional_coupling,
    make_laplacian_problem,
    make_scalar_model,
    scalar_model_eigenpair,
)
from .schemes import (
    Scheme,
    SteppedFamily,
    assemble,
    derivative_check,
    derivative_defects,
    frozen_step_1,
    frozen_step_2,
    iterate,
)
from .harness import (
    EXACT_RATE,
    Grids,
    InstabilityRow,
    LemmaReport,
    RateReport,
    RateRow,
    consistency_slope,
    default_grids,
    error_curve,
    fit_rate,
    instability_sweep,
    refine_grids,
    validated_reference,
    verify_all_lemmas,
    verify_lemma,
)
from .config import ExperimentConfig, parse_config, parse_config_file, serialize_config

__version__ = "0.1.0"
