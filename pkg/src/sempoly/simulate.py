"""Synthetic data generators and the replication study harness.

Two generators are shipped, matching the bundled model files:

* ``interaction`` -- two correlated exogenous latents drive a first
  endogenous latent through a linear-plus-interaction equation, and a second
  endogenous latent is a scaled copy of the first; 12 indicators.
* ``ganzach`` -- two correlated exogenous latents drive one endogenous
  latent through the full quadratic form (both squares and the cross term);
  6 + 3 indicators.

``N(0, s)`` draws use s as the standard deviation.  Multivariate normals are
sampled through the Cholesky factor of the target covariance, and every
replication derives its own generator stream from (seed, replication index),
so studies are reproducible bit for bit and replications are independent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

import numpy as np

from .empirical import Dataset, center
from .model import SemModel, parse_model
from .moments import MomentEngine
from .optimize import FitOptions, FitResult, PipelineOptions, fit_pipeline

GENERATORS = ("interaction", "ganzach")

INTERACTION_LOADINGS = (1, 0.5, 0.7, 1, 0.7, 0.4, 1, 1.2, 0.4, 1, 0.8, 0.9)
INTERACTION_B = (0.1, 0.3, 0.2, 0.7)
INTERACTION_PHI = ((1.2, 0.4), (0.4, 0.8))

GANZACH_X_LOADINGS = (1, 0.7, 1.2, 1, 0.5, 0.9)
GANZACH_Y_LOADINGS = (1, 0.8, 1.3)
GANZACH_GAMMA = (0.3, 0.5)
GANZACH_OMEGA = (0.2, 0.4, 0.7)  # omega11, omega12, omega22
GANZACH_PHI = ((1.0, 0.2), (0.2, 1.0))

INTERACTION_TRUE: dict[str, float] = {
    "lam_y2": 0.5,
    "lam_y3": 0.7,
    "lam_y5": 0.7,
    "lam_y6": 0.4,
    "lam_y8": 1.2,
    "lam_y9": 0.4,
    "lam_y11": 0.8,
    "lam_y12": 0.9,
    "B1": 0.1,
    "B2": 0.3,
    "B3": 0.2,
    "B4": 0.7,
    "psi3": 0.04,
    "psi4": 0.01,
    "phi11": 1.2,
    "phi12": 0.4,
    "phi22": 0.8,
}
# indicator noise sd cycles 0.2, 0.3, 0.1 down the columns
INTERACTION_TRUE.update(
    {f"var_y{i + 1}": (0.1 * (1 + ((i + 1) % 3))) ** 2 for i in range(12)}
)

INTERACTION_TRACKED = ("B1", "B2", "B3", "B4")

GANZACH_TRUE: dict[str, float] = {
    "lam_x2": 0.7,
    "lam_x3": 1.2,
    "lam_x5": 0.5,
    "lam_x6": 0.9,
    "lam_y2": 0.8,
    "lam_y3": 1.3,
    "gamma1": 0.3,
    "gamma2": 0.5,
    "omega11": 0.2,
    "omega12": 0.4,
    "omega22": 0.7,
    "psi": 0.09,
    "phi11": 1.0,
    "phi12": 0.2,
    "phi22": 1.0,
}
GANZACH_TRUE.update({f"var_x{i + 1}": 0.01 for i in range(6)})
GANZACH_TRUE.update({f"var_y{i + 1}": 0.01 for i in range(3)})

GANZACH_TRACKED = ("gamma1", "gamma2", "omega11", "omega12", "omega22")


def make_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(int(seed))


def _mvn(rng: np.random.Generator, cov, n: int) -> np.ndarray:
    chol = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    return rng.standard_normal((n, chol.shape[0])) @ chol.T


def generate_interaction(n: int, seed=0) -> Dataset:
    """12-indicator sample from the interaction generator (columns y1..y12)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _as_rng(seed)
    b1, b2, b3, b4 = INTERACTION_B
    eta12 = _mvn(rng, INTERACTION_PHI, n)
    eta1, eta2 = eta12[:, 0], eta12[:, 1]
    eta3 = b1 * eta1 + b2 * eta2 + b3 * eta1 * eta2 + 0.2 * rng.standard_normal(n)
    eta4 = b4 * eta3 + 0.1 * rng.standard_normal(n)
    latents = (eta1, eta2, eta3, eta4)
    values = np.empty((n, 12))
    for i in range(12):
        sd = 0.1 * (1 + ((i + 1) % 3))
        values[:, i] = (
            INTERACTION_LOADINGS[i] * latents[i // 3] + sd * rng.standard_normal(n)
        )
    names = tuple(f"y{i + 1}" for i in range(12))
    return Dataset(values=values, names=names, centered=False)


def generate_ganzach(n: int, seed=0) -> Dataset:
    """9-indicator sample from the quadratic generator (columns x1..x6, y1..y3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = _as_rng(seed)
    g1, g2 = GANZACH_GAMMA
    w11, w12, w22 = GANZACH_OMEGA
    xi = _mvn(rng, GANZACH_PHI, n)
    xi1, xi2 = xi[:, 0], xi[:, 1]
    eta = (
        g1 * xi1
        + g2 * xi2
        + w11 * xi1**2
        + w12 * xi1 * xi2
        + w22 * xi2**2
        + 0.3 * rng.standard_normal(n)
    )
    values = np.empty((n, 9))
    for i in range(6):
        source = xi1 if i < 3 else xi2
        values[:, i] = GANZACH_X_LOADINGS[i] * source + 0.1 * rng.standard_normal(n)
    for i in range(3):
        values[:, 6 + i] = GANZACH_Y_LOADINGS[i] * eta + 0.1 * rng.standard_normal(n)
    names = tuple(f"x{i + 1}" for i in range(6)) + tuple(f"y{i + 1}" for i in range(3))
    return Dataset(values=values, names=names, centered=False)


_GENERATE = {"interaction": generate_interaction, "ganzach": generate_ganzach}
_TRUE = {"interaction": INTERACTION_TRUE, "ganzach": GANZACH_TRUE}
_TRACKED = {"interaction": INTERACTION_TRACKED, "ganzach": GANZACH_TRACKED}


def model_source(generator: str) -> str:
    """DSL text of the bundled model file matching a generator."""
    if generator not in GENERATORS:
        raise ValueError(f"unknown generator {generator!r}; expected one of {GENERATORS}")
    return resources.files("sempoly.models").joinpath(f"{generator}.sem").read_text("utf-8")


def load_model(generator: str) -> SemModel:
    return parse_model(model_source(generator))


def true_theta(generator: str) -> dict[str, float]:
    return dict(_TRUE[generator])


@dataclass(frozen=True)
class StudySpec:
    generator: str
    n: int = 1000
    reps: int = 20
    methods: tuple[str, ...] = ("uls", "uls3")
    seed: int = 0
    true_values: Mapping[str, float] | None = None
    tracked: tuple[str, ...] | None = None

    def __post_init__(self):
        from .optimize import METHODS

        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.n < 10:
            raise ValueError("n must be >= 10")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; expected a subset of {METHODS}")

    def resolved_true(self) -> dict[str, float]:
        return dict(self.true_values) if self.true_values is not None else true_theta(self.generator)

    def resolved_tracked(self) -> tuple[str, ...]:
        return self.tracked if self.tracked is not None else _TRACKED[self.generator]


@dataclass
class BiasCell:
    mean_error: float | None
    sd_error: float | None
    n_converged: int
    n_failed: int

    def to_dict(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "sd_error": self.sd_error,
            "n_converged": self.n_converged,
            "n_failed": self.n_failed,
        }


@dataclass
class BiasTable:
    """Per-parameter mean and sd of estimation error (estimate minus truth)
    across converged replications, one column per method."""

    generator: str
    n: int
    reps: int
    seed: int
    methods: tuple[str, ...]
    parameters: tuple[str, ...]
    cells: dict[tuple[str, str], BiasCell]

    def cell(self, parameter: str, method: str) -> BiasCell:
        return self.cells[(parameter, method)]

    def to_dict(self, record: Mapping | None = None) -> dict:
        out = {
            "generator": self.generator,
            "n": self.n,
            "reps": self.reps,
            "seed": self.seed,
            "methods": list(self.methods),
            "parameters": list(self.parameters),
            "cells": {
                param: {method: self.cell(param, method).to_dict() for method in self.methods}
                for param in self.parameters
            },
        }
        if record is not None:
            out["record"] = dict(record)
        return out

    def to_json(self, record: Mapping | None = None) -> str:
        return json.dumps(self.to_dict(record), indent=2, sort_keys=True)

    def render_text(self) -> str:
        """Aligned table with mean(sd) cells."""

        def cell_text(c: BiasCell) -> str:
            if c.mean_error is None:
                return "failed"
            sd = "NA" if c.sd_error is None else f"{c.sd_error:.3f}"
            extra = f" [{c.n_failed} failed]" if c.n_failed else ""
            return f"{c.mean_error:+.3f}({sd}){extra}"

        headers = ["parameter"] + [m.upper() for m in self.methods]
        rows = [
            [param] + [cell_text(self.cell(param, method)) for method in self.methods]
            for param in self.parameters
        ]
        widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
        lines = [
            "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
            "  ".join("-" * w for w in widths),
        ]
        for row in rows:
            lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
        return "\n".join(lines)

    def __eq__(self, other) -> bool:
        return isinstance(other, BiasTable) and self.to_dict() == other.to_dict()


def run_study(spec: StudySpec, fit_options: FitOptions | None = None) -> BiasTable:
    """Run the replication study: generate, center, fit every method, and
    aggregate estimation errors for the tracked parameters.

    Replication r uses the generator stream (seed, r) and the restart stream
    (seed, r, 1), so the result is a deterministic function of the StudySpec.
    Fit failures are recorded per cell, never fatal.
    """
    model = load_model(spec.generator)
    engine = MomentEngine(model)
    truth = spec.resolved_true()
    tracked = spec.resolved_tracked()
    for name in tracked:
        if name not in truth:
            raise ValueError(f"no true value for tracked parameter {name!r}")
    known = {s.name for s in model.parameters}
    for name in tracked:
        if name not in known:
            raise ValueError(f"tracked parameter {name!r} is not in the model")

    errors: dict[tuple[str, str], list[float]] = {
        (p, m): [] for p in tracked for m in spec.methods
    }
    failures: dict[str, int] = {m: 0 for m in spec.methods}

    for rep in range(spec.reps):
        data = center(_GENERATE[spec.generator](spec.n, make_rng(spec.seed, rep)))
        restart_seed = int(np.random.SeedSequence([spec.seed, rep, 1]).generate_state(1)[0])
        # one ULS stage per replication, shared as the warm start of every method
        warm: FitResult | None = None
        try:
            warm = fit_pipeline(
                engine, data, "uls",
                PipelineOptions(seed=restart_seed, fit=fit_options or FitOptions()),
            )
        except ValueError:
            warm = None
        for method in spec.methods:
            options = PipelineOptions(
                seed=restart_seed,
                warm_result=warm,
                fit=fit_options or FitOptions(),
            )
            try:
                if method == "uls":
                    result = warm
                    if result is None:
                        raise ValueError("stage-1 fit failed")
                else:
                    result = fit_pipeline(engine, data, method, options)
            except ValueError:
                failures[method] += 1
                continue
            if not result.converged:
                failures[method] += 1
                continue
            for name in tracked:
                errors[(name, method)].append(result.parameters[name] - truth[name])

    cells: dict[tuple[str, str], BiasCell] = {}
    for param in tracked:
        for method in spec.methods:
            errs = errors[(param, method)]
            n_ok = len(errs)
            if n_ok == 0:
                cells[(param, method)] = BiasCell(None, None, 0, failures[method])
                continue
            mean = float(np.mean(errs))
            sd = float(np.std(errs, ddof=1)) if n_ok > 1 else None
            cells[(param, method)] = BiasCell(mean, sd, n_ok, failures[method])

    return BiasTable(
        generator=spec.generator,
        n=spec.n,
        reps=spec.reps,
        seed=spec.seed,
        methods=tuple(spec.methods),
        parameters=tuple(tracked),
        cells=cells,
    )
