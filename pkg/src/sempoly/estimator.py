"""scikit-learn style front end for the moment-matching pipeline."""

from __future__ import annotations

import os

import numpy as np
from sklearn.base import BaseEstimator

from .empirical import Dataset, center, empirical_moments
from .model import SemModel, free_parameters, parse_model
from .moments import MomentEngine
from .objectives import build_gls, build_uls, build_uls_k, build_wls
from .optimize import METHODS, FitOptions, PipelineOptions, fit_pipeline
from .validation import check_data_matrix


class PolynomialSem(BaseEstimator):
    """Estimate a structural equation model with polynomial structural
    relations by matching implied moment tensors to sample moments.

    Parameters
    ----------
    model : SemModel, str, or path
        The model, either already parsed, as DSL source text (anything
        containing a newline), or as a path to a ``.sem`` file.
    method : {"uls", "uls3", "gls", "wls"}, default="uls3"
        Discrepancy to minimize.  "uls3" adds the order-3 moment tensor,
        which is what identifies the coefficients of nonlinear terms.
    order : int, default=3
        Highest tensor order used by "uls3".
    restarts : int, default=4
        Random restarts around the default start in the ULS stage.
    seed : int, default=0
        Seed for the restart perturbations.
    warm_start_stage : bool, default=True
        Seed the target objective with the best ULS estimate.
    gradient_tol : float, default=1e-8
    max_iter : int, default=500

    Attributes
    ----------
    model_ : SemModel
    engine_ : MomentEngine
    result_ : FitResult
    estimates_ : dict mapping parameter name to estimate
    theta_ : ndarray of estimates in declaration order
    converged_ : bool
    objective_value_ : float
    n_iter_ : int
    """

    def __init__(
        self,
        model=None,
        method: str = "uls3",
        order: int = 3,
        restarts: int = 4,
        seed: int = 0,
        warm_start_stage: bool = True,
        gradient_tol: float = 1e-8,
        max_iter: int = 500,
    ):
        self.model = model
        self.method = method
        self.order = order
        self.restarts = restarts
        self.seed = seed
        self.warm_start_stage = warm_start_stage
        self.gradient_tol = gradient_tol
        self.max_iter = max_iter

    def _resolve_model(self) -> SemModel:
        if isinstance(self.model, SemModel):
            return self.model
        if isinstance(self.model, (str, os.PathLike)):
            text = str(self.model)
            if "\n" not in text and os.path.exists(text):
                with open(text, "r", encoding="utf-8") as fh:
                    text = fh.read()
            return parse_model(text)
        raise ValueError("model must be a SemModel, DSL source text, or a file path")

    def _options(self) -> PipelineOptions:
        return PipelineOptions(
            restarts=self.restarts,
            seed=self.seed,
            warm_start=self.warm_start_stage,
            order=self.order,
            fit=FitOptions(gradient_tol=self.gradient_tol, max_iter=self.max_iter),
        )

    def fit(self, X, y=None):
        """Fit the model to a cases-by-variables matrix (columns in the
        model's manifest order); the data is mean-centered internally."""
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        model = self._resolve_model()
        X = check_data_matrix(X, expected_columns=model.m)
        data = center(Dataset(values=X, names=model.manifest_names))
        engine = MomentEngine(model)
        result = fit_pipeline(engine, data, self.method, self._options())
        self.model_ = model
        self.engine_ = engine
        self.space_ = free_parameters(model)
        self.result_ = result
        self.estimates_ = dict(result.parameters)
        self.theta_ = result.theta.copy()
        self.converged_ = result.converged
        self.objective_value_ = result.objective_value
        self.n_iter_ = result.iterations
        return self

    def implied_covariance(self) -> np.ndarray:
        """Model-implied covariance matrix at the fitted parameters."""
        self._check_fitted()
        return self.engine_.implied_covariance(self.estimates_)

    def score(self, X, y=None) -> float:
        """Negative discrepancy between the fitted model and new data
        (higher is better, zero is a perfect moment match)."""
        self._check_fitted()
        X = check_data_matrix(X, expected_columns=self.model_.m)
        data = center(Dataset(values=X, names=self.model_.manifest_names))
        orders = tuple(range(2, self.order + 1)) if self.method == "uls3" else (2,)
        moments = empirical_moments(data, orders)
        if self.method == "uls":
            objective = build_uls(self.engine_, moments)
        elif self.method == "uls3":
            objective = build_uls_k(self.engine_, moments, self.order)
        elif self.method == "gls":
            objective = build_gls(self.engine_, moments)
        else:
            from .empirical import browne_weight

            objective = build_wls(self.engine_, moments, browne_weight(data))
        return -objective.value(self.theta_)

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise RuntimeError("this estimator has not been fitted yet; call fit first")
