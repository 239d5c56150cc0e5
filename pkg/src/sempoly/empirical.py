"""Observed data: CSV loading, centering, sample moment tensors, and the
weight matrices used by the generalized and distribution-free least squares
objectives.

Sample moments use divisor n throughout so they are directly comparable with
the implied tensors.  Half-vectorization order is pairs (i, j) with i <= j in
lexicographic order; this ordering is shared with the objective builders and
must not change, or serialized fits stop being portable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .moments import MomentTensor, canonical_tuples


class DataError(ValueError):
    """Malformed or unusable observed data."""


@dataclass
class Dataset:
    values: np.ndarray
    names: tuple[str, ...]
    centered: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError("data must be a 2-D matrix of cases by variables")
        if len(self.names) != self.values.shape[1]:
            raise DataError("number of column names does not match the data")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def load_csv(path, model_names: Sequence[str] | None = None, header: str | bool = "auto") -> Dataset:
    """Read a CSV file into a Dataset ordered to match the model's manifest
    declaration (x block then y block) when ``model_names`` is given.

    ``header`` may be True, False, or "auto" (treat the first row as a header
    when any cell fails to parse as a number).  Every cell must be numeric;
    missing values are an error.
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row and any(cell.strip() for cell in row)]
    except OSError as exc:
        raise DataError(f"cannot read data file {path!r}: {exc}") from exc
    if not rows:
        raise DataError(f"data file {path!r} is empty")

    def parse_cell(cell: str, rowno: int, colno: int) -> float:
        text = cell.strip()
        if not text:
            raise DataError(f"missing value at row {rowno}, column {colno} in {path!r}")
        try:
            return float(text)
        except ValueError:
            raise DataError(
                f"non-numeric value {cell!r} at row {rowno}, column {colno} in {path!r}"
            ) from None

    first = rows[0]
    has_header: bool
    if header == "auto":
        has_header = False
        for cell in first:
            try:
                float(cell.strip())
            except ValueError:
                has_header = True
                break
    else:
        has_header = bool(header)

    if has_header:
        names = tuple(cell.strip() for cell in first)
        body = rows[1:]
    else:
        names = tuple(f"v{i + 1}" for i in range(len(first)))
        body = rows

    width = len(names)
    data = np.empty((len(body), width))
    for r, row in enumerate(body):
        rowno = r + (2 if has_header else 1)
        if len(row) != width:
            raise DataError(f"row {rowno} has {len(row)} cells, expected {width} in {path!r}")
        for c, cell in enumerate(row):
            data[r, c] = parse_cell(cell, rowno, c + 1)

    if model_names is not None:
        if has_header:
            index = {name: i for i, name in enumerate(names)}
            missing = [name for name in model_names if name not in index]
            if missing:
                raise DataError(f"data file {path!r} lacks columns {missing}")
            data = data[:, [index[name] for name in model_names]]
            names = tuple(model_names)
        else:
            if width != len(model_names):
                raise DataError(
                    f"data file {path!r} has {width} columns but the model declares "
                    f"{len(model_names)} manifest variables"
                )
            names = tuple(model_names)

    return Dataset(values=data, names=names, centered=False)


def center(d: Dataset) -> Dataset:
    """Subtract column means.  Idempotent."""
    if d.centered:
        return d
    return Dataset(values=d.values - d.values.mean(axis=0), names=d.names, centered=True)


def sample_cov_tensor(d: Dataset, order: int) -> MomentTensor:
    """Sample moment tensor with divisor n: mean of entrywise products minus
    the product of column means (numerically ~0 for centered data, but still
    subtracted)."""
    if not d.centered:
        raise DataError("sample moments require centered data; call center() first")
    if d.n < 2:
        raise DataError("sample moments need at least 2 cases")
    if order < 1:
        raise ValueError("order must be >= 1")
    means = d.values.mean(axis=0)
    entries: dict[tuple[int, ...], float] = {}
    for t in canonical_tuples(d.m, order):
        prod = d.values[:, t[0]].copy()
        for i in t[1:]:
            prod *= d.values[:, i]
        mean_prod = 1.0
        for i in t:
            mean_prod *= means[i]
        entries[t] = float(prod.mean() - mean_prod)
    return MomentTensor(order, d.m, entries)


@dataclass
class EmpiricalMoments:
    """Sample tensors by order, sharing the canonical layout of the implied ones."""

    tensors: dict[int, MomentTensor]
    n: int

    def vector(self, order: int) -> np.ndarray:
        return self.tensors[order].values_vector()

    def has_order(self, order: int) -> bool:
        return order in self.tensors


def empirical_moments(d: Dataset, orders: Iterable[int]) -> EmpiricalMoments:
    return EmpiricalMoments(
        tensors={k: sample_cov_tensor(d, k) for k in sorted(set(orders))},
        n=d.n,
    )


def half_vec_pairs(m: int) -> list[tuple[int, int]]:
    """The fixed half-vectorization order: (i, j), i <= j, lexicographic."""
    return list(canonical_tuples(m, 2))


@dataclass
class WeightMatrix:
    """Symmetric weight over half-vectorized covariances."""

    matrix: np.ndarray
    m: int

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        p = self.matrix.shape[0]
        if self.matrix.shape != (p, p):
            raise DataError("weight matrix must be square")
        if p != self.m * (self.m + 1) // 2:
            raise DataError(
                f"weight dimension {p} does not match m(m+1)/2 = {self.m * (self.m + 1) // 2}"
            )

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def browne_weight(d: Dataset) -> WeightMatrix:
    """Distribution-free weights: fourth-order sample moments minus products
    of covariances, entry ((i,j),(k,l)) = m4(i,j,k,l) - s(i,j) s(k,l)."""
    if not d.centered:
        raise DataError("weights require centered data; call center() first")
    p = d.m * (d.m + 1) // 2
    if d.n <= p:
        raise DataError(
            f"distribution-free weights need n > m(m+1)/2 = {p}, got n = {d.n}; "
            "increase the sample or use ULS"
        )
    pairs = half_vec_pairs(d.m)
    prods = np.empty((d.n, p))
    for a, (i, j) in enumerate(pairs):
        prods[:, a] = d.values[:, i] * d.values[:, j]
    m4 = prods.T @ prods / d.n
    svec = prods.mean(axis=0)
    return WeightMatrix(matrix=m4 - np.outer(svec, svec), m=d.m)


def normal_theory_weight(S) -> WeightMatrix:
    """Weights implied by normality: entry ((i,j),(k,l)) =
    s(i,k) s(j,l) + s(i,l) s(j,k)."""
    if isinstance(S, MomentTensor):
        S = S.as_matrix()
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DataError("normal-theory weights need a square covariance matrix")
    if not np.allclose(S, S.T):
        raise DataError("covariance matrix must be symmetric")
    m = S.shape[0]
    pairs = half_vec_pairs(m)
    p = len(pairs)
    W = np.empty((p, p))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            W[a, b] = S[i, k] * S[j, l] + S[i, l] * S[j, k]
    return WeightMatrix(matrix=W, m=m)


def identity_weight(m: int) -> WeightMatrix:
    return WeightMatrix(matrix=np.eye(m * (m + 1) // 2), m=m)


class WeightFactorizationError(ValueError):
    """Weight matrix not positive definite even after ridge escalation."""


def factor_weight(w: WeightMatrix, max_escalations: int = 20):
    """Cholesky factor of the (possibly ridged) weight matrix.

    Returns (factor, ridge) where ``factor`` feeds scipy's cho_solve and
    ``ridge`` is the diagonal shift that was needed (0.0 when none).  The
    ridge starts at 1e-8 * trace/p and escalates tenfold until the
    factorization succeeds.
    """
    base = np.trace(w.matrix) / w.p
    if not np.isfinite(base) or base <= 0:
        base = 1.0
    ridge = 0.0
    for attempt in range(max_escalations + 1):
        try:
            factor = cho_factor(w.matrix + ridge * np.eye(w.p), lower=True)
            return factor, ridge
        except np.linalg.LinAlgError:
            ridge = 1e-8 * base if ridge == 0.0 else ridge * 10.0
    raise WeightFactorizationError(
        "weight matrix is not positive definite even after ridge escalation"
    )


def solve_weight(factor, r: np.ndarray) -> np.ndarray:
    return cho_solve(factor, r)
