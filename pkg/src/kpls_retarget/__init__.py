"""Kernel partial least squares retargeting of facial feature-point animation."""

from .errors import (
    DegenerateFrame,
    DegenerateInput,
    DimensionMismatch,
    InvalidConfig,
    NotUnitVector,
    ParseError,
    RetargetError,
    SingularSystem,
    TooFewPairs,
    ZeroLatentVector,
)
from .evaluation import (
    CyclicReport,
    compare_methods,
    cyclic_retarget,
    displacement_error,
    improvement_percent,
    rbf_baseline_fit,
    rbf_baseline_predict,
    select_components_loo,
)
from .kernel import GramMatrix, KernelSpec, KplsModel, deflate_gram, fit_kpls, gram, kernel_eval, predict_kpls
from .pls_core import PlsModel, deflate, fit_pls, latent_scores, max_cov_weights, predict_pls
from .retarget import (
    CorrespondenceSet,
    FaceRig,
    FeaturePointFrame,
    Normalizer,
    RetargetModel,
    apply_blendshapes,
    normalize_frame,
    retarget_frame,
    retarget_sequence,
    solve_blendshape_weights,
    train_retargeter,
)
from .synthetic import SyntheticWorld, WorldConfig, gen_synthetic_world

__version__ = "0.1.0"
