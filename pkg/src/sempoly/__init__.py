"""Moment-based estimation for structural equation models with polynomial
structural relations: implied moment tensors are derived symbolically as
exact polynomials in the free parameters and matched to sample moments."""

from .empirical import (
    Dataset,
    EmpiricalMoments,
    WeightMatrix,
    browne_weight,
    center,
    empirical_moments,
    identity_weight,
    load_csv,
    normal_theory_weight,
    sample_cov_tensor,
)
from .estimator import PolynomialSem
from .model import (
    ModelError,
    ParameterSpace,
    SemModel,
    free_parameters,
    lower_manifest,
    parse_model,
    render_model,
)
from .moments import MomentEngine, MomentTensor, gaussian_expectation
from .objectives import Objective, build_gls, build_uls, build_uls_k, build_wls
from .optimize import FitOptions, FitResult, PipelineOptions, fit, fit_pipeline
from .polynomial import Monomial, ParamSymbol, Polynomial
from .simulate import (
    BiasTable,
    StudySpec,
    generate_ganzach,
    generate_interaction,
    load_model,
    run_study,
    true_theta,
)

__version__ = "0.1.0"

__all__ = [
    "BiasTable",
    "Dataset",
    "EmpiricalMoments",
    "FitOptions",
    "FitResult",
    "ModelError",
    "MomentEngine",
    "MomentTensor",
    "Monomial",
    "Objective",
    "ParamSymbol",
    "ParameterSpace",
    "PipelineOptions",
    "PolynomialSem",
    "Polynomial",
    "SemModel",
    "StudySpec",
    "WeightMatrix",
    "browne_weight",
    "build_gls",
    "build_uls",
    "build_uls_k",
    "build_wls",
    "center",
    "empirical_moments",
    "fit",
    "fit_pipeline",
    "free_parameters",
    "gaussian_expectation",
    "generate_ganzach",
    "generate_interaction",
    "identity_weight",
    "load_csv",
    "load_model",
    "lower_manifest",
    "normal_theory_weight",
    "parse_model",
    "render_model",
    "run_study",
    "sample_cov_tensor",
    "true_theta",
]
