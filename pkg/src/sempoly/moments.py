"""Implied moment tensors of the manifest variables as parameter polynomials.

Expectations of products of the model's jointly Gaussian inputs are computed
with Isserlis' theorem: the expectation of a product of centered Gaussians is
the sum over perfect pairings of products of pairwise covariances, and is
zero for odd products.  Independence between input groups (the xi block and
each individual error component) lets mixed monomials factor into per-group
expectations.

Tensors are stored sparsely over canonical non-decreasing index tuples and
looked up symmetrically.  Because the estimation pipeline subtracts column
means from observed data, the engine builds its moment tensors from the
mean-centered manifest vector, so implied and sample tensors estimate the
same quantities at every order.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .model import DELTA, EPSILON, XI, ZETA, RvPolynomial, RvSymbol, SemModel, lower_manifest
from .polynomial import Polynomial


def double_factorial(n: int) -> int:
    """(n)!! for odd n >= -1; the number of pairings of n+1 items."""
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


def canonical_tuples(m: int, order: int) -> Iterable[tuple[int, ...]]:
    """Non-decreasing index tuples (0-based) in lexicographic order."""
    return itertools.combinations_with_replacement(range(m), order)


def tuple_multiplicity(t: Sequence[int]) -> int:
    """Number of distinct permutations of the tuple (its orbit size)."""
    count = math.factorial(len(t))
    for _, group in itertools.groupby(t):
        count //= math.factorial(sum(1 for _ in group))
    return count


class MomentTensor:
    """Symmetric tensor stored over canonical tuples; entries are either
    Polynomials (implied) or floats (sample)."""

    def __init__(self, order: int, dim: int, entries: Mapping[tuple[int, ...], object]):
        self.order = order
        self.dim = dim
        self._entries = dict(entries)

    def get(self, index: Sequence[int]):
        key = tuple(sorted(index))
        if len(key) != self.order or any(i < 0 or i >= self.dim for i in key):
            raise KeyError(f"index {tuple(index)} out of range for order {self.order}, dim {self.dim}")
        return self._entries[key]

    def canonical_items(self) -> list[tuple[tuple[int, ...], object]]:
        return [(t, self._entries[t]) for t in canonical_tuples(self.dim, self.order)]

    def values_vector(self) -> np.ndarray:
        """Entries in canonical order as floats (numeric tensors only)."""
        return np.asarray([v for _, v in self.canonical_items()], dtype=np.float64)

    def evaluate(self, assignment: Mapping) -> "MomentTensor":
        """Evaluate polynomial entries at an assignment, yielding a numeric tensor."""
        return MomentTensor(
            self.order,
            self.dim,
            {t: v.evaluate(assignment) for t, v in self._entries.items()},
        )

    def as_matrix(self) -> np.ndarray:
        if self.order != 2:
            raise ValueError("as_matrix applies to order-2 tensors only")
        out = np.empty((self.dim, self.dim))
        for (i, j), v in self._entries.items():
            out[i, j] = v
            out[j, i] = v
        return out

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        """JSON-ready form; keys are canonical tuples as 1-based 'i,j,...' strings
        (or comma-joined names), in lexicographic canonical order."""
        entries = {}
        for t, v in self.canonical_items():
            if names is not None:
                key = ",".join(names[i] for i in t)
            else:
                key = ",".join(str(i + 1) for i in t)
            entries[key] = v.render() if isinstance(v, Polynomial) else float(v)
        return {"order": self.order, "dimension": self.dim, "entries": entries}

    def render(self, names: Sequence[str] | None = None) -> str:
        lines = []
        for t, v in self.canonical_items():
            if names is not None:
                key = ",".join(names[i] for i in t)
            else:
                key = ",".join(str(i + 1) for i in t)
            body = v.render() if isinstance(v, Polynomial) else repr(float(v))
            lines.append(f"({key}) = {body}")
        return "\n".join(lines)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MomentTensor)
            and self.order == other.order
            and self.dim == other.dim
            and self._entries == other._entries
        )


def gaussian_expectation(
    mono: Sequence[tuple] | Mapping,
    cov_provider: Callable[[object, object], Polynomial],
    memo: dict | None = None,
) -> Polynomial:
    """Expectation of a monomial in centered jointly Gaussian variables.

    ``mono`` maps variables to positive exponents (or is a sequence of
    (variable, exponent) pairs).  The result is the pairing sum expressed
    through ``cov_provider``, computed by the recursion
    E(X1 * rest) = sum_j cov(X1, Xj) * E(rest without X1, Xj)
    with memoization on the exponent multiset.  Odd total degree gives the
    zero polynomial.

    When variables are RvSymbols they must form a single independence group:
    all xi's, or repetitions of one single error component.
    """
    if isinstance(mono, Mapping):
        items = list(mono.items())
    else:
        items = list(mono)
    items = [(v, e) for v, e in items if e != 0]
    if any(e < 0 for _, e in items):
        raise ValueError("exponents must be positive")
    rv_items = [v for v, _ in items if isinstance(v, RvSymbol)]
    if rv_items:
        if len(rv_items) != len(items):
            raise ValueError("cannot mix RvSymbols with other variable keys")
        groups = {v.group for v in rv_items}
        if groups == {XI}:
            pass
        elif len(items) == 1:
            pass
        else:
            raise ValueError(
                "gaussian_expectation requires one independence group: all xi's "
                "or a single error component"
            )
    items.sort(key=lambda ve: ve[0])
    if memo is None:
        memo = {}
    return _pairing_sum(tuple(items), cov_provider, memo)


def _pairing_sum(items: tuple, cov_provider, memo: dict) -> Polynomial:
    if not items:
        return Polynomial.one()
    total = sum(e for _, e in items)
    if total % 2 == 1:
        return Polynomial.zero()
    cached = memo.get(items)
    if cached is not None:
        return cached
    (v0, e0), rest = items[0], items[1:]

    def reduce_at(seq: tuple, pos: int) -> tuple:
        out = list(seq)
        v, e = out[pos]
        if e == 1:
            del out[pos]
        else:
            out[pos] = (v, e - 1)
        return tuple(out)

    base = reduce_at(items, 0)
    result = Polynomial.zero()
    if e0 >= 2:
        result = result + (e0 - 1) * cov_provider(v0, v0) * _pairing_sum(reduce_at(base, 0), cov_provider, memo)
    for j in range(len(base)):
        vj, ej = base[j]
        if vj == v0:
            continue
        result = result + ej * cov_provider(v0, vj) * _pairing_sum(reduce_at(base, j), cov_provider, memo)
    memo[items] = result
    return result


class MomentEngine:
    """Computes implied raw moments and mean-centered moment tensors for one
    model.  Immutable after construction; all caches are value caches, so
    concurrent tensor computations yield identical results."""

    def __init__(self, model: SemModel):
        self.model = model
        self.m = model.m
        self._lowered = lower_manifest(model)
        self._phi = {
            (i, j): model.phi_entry(i, j).as_polynomial()
            for i in range(model.k)
            for j in range(i, model.k)
        }
        self._error_var = {}
        for i, e in enumerate(model.theta_delta):
            self._error_var[RvSymbol(DELTA, i + 1)] = e.as_polynomial()
        for i, e in enumerate(model.theta_epsilon):
            self._error_var[RvSymbol(EPSILON, i + 1)] = e.as_polynomial()
        for j, e in enumerate(model.psi):
            self._error_var[RvSymbol(ZETA, j + 1)] = e.as_polynomial()
        self._xi_memo: dict = {}
        self._mixed_cache: dict = {}
        self._raw_cache: dict[tuple[int, ...], Polynomial] = {}
        self._central_cache: dict[tuple[int, ...], Polynomial] = {}
        self._pair_cache: dict[tuple[int, int], RvPolynomial] = {}

        self._means = [self.expectation(p) for p in self._lowered]
        self._centered = [
            p + RvPolynomial.constant(-1 * mu) if not mu.is_zero else p
            for p, mu in zip(self._lowered, self._means)
        ]
        for p in self._centered:
            if not self.expectation(p).is_zero:
                raise AssertionError("centering failed: manifest mean did not cancel")

    # -- expectations ---------------------------------------------------------

    def _xi_cov(self, a: RvSymbol, b: RvSymbol) -> Polynomial:
        i, j = sorted((a.index - 1, b.index - 1))
        return self._phi[(i, j)]

    def mixed_expectation(self, mono: tuple) -> Polynomial:
        """Expectation of a monomial over all input groups, factoring by
        independence: the xi part times one Gaussian moment per error component."""
        cached = self._mixed_cache.get(mono)
        if cached is not None:
            return cached
        xi_part = tuple((rv, e) for rv, e in mono if rv.group == XI)
        result = Polynomial.one()
        for rv, e in mono:
            if rv.group == XI:
                continue
            if e % 2 == 1:
                result = Polynomial.zero()
                break
            result = result * (double_factorial(e - 1) * self._error_var[rv] ** (e // 2))
        if not result.is_zero and xi_part:
            result = result * gaussian_expectation(xi_part, self._xi_cov, self._xi_memo)
        self._mixed_cache[mono] = result
        return result

    def expectation(self, poly: RvPolynomial) -> Polynomial:
        out = Polynomial.zero()
        for mono, coeff in poly.terms.items():
            e = self.mixed_expectation(mono)
            if not e.is_zero:
                out = out + coeff * e
        return out

    # -- moments ---------------------------------------------------------------

    def _product(self, indices: tuple[int, ...], polys: list[RvPolynomial]) -> RvPolynomial:
        if len(indices) == 1:
            return polys[indices[0]]
        if len(indices) == 2:
            key = (indices[0], indices[1])
            if polys is self._centered:
                cached = self._pair_cache.get(key)
                if cached is None:
                    cached = polys[key[0]] * polys[key[1]]
                    self._pair_cache[key] = cached
                return cached
            return polys[key[0]] * polys[key[1]]
        return self._product(indices[:-1], polys) * polys[indices[-1]]

    def raw_moment(self, indices: Sequence[int]) -> Polynomial:
        """E(z_i1 * ... * z_ik) of the uncentered manifest variables."""
        key = tuple(sorted(indices))
        if any(i < 0 or i >= self.m for i in key):
            raise IndexError(f"manifest index out of range in {tuple(indices)}")
        cached = self._raw_cache.get(key)
        if cached is None:
            cached = self.expectation(self._product(key, self._lowered))
            self._raw_cache[key] = cached
        return cached

    def first_moment(self, i: int) -> Polynomial:
        return self._means[i]

    def central_moment(self, indices: Sequence[int]) -> Polynomial:
        """Moment of the mean-centered manifest vector.  The product of
        first moments called for by the tensor definition is identically the
        zero polynomial after centering, so the raw centered moment is the
        tensor entry."""
        key = tuple(sorted(indices))
        cached = self._central_cache.get(key)
        if cached is None:
            cached = self.expectation(self._product(key, self._centered))
            self._central_cache[key] = cached
        return cached

    def cov_tensor(self, order: int, parallel: bool = False) -> MomentTensor:
        """Implied moment tensor of the given order; order 2 is the implied
        covariance matrix."""
        if order < 2:
            raise ValueError("moment tensors are defined for order >= 2")
        tuples = list(canonical_tuples(self.m, order))
        if parallel:
            with ThreadPoolExecutor() as pool:
                values = list(pool.map(self.central_moment, tuples))
            entries = dict(zip(tuples, values))
        else:
            entries = {t: self.central_moment(t) for t in tuples}
        return MomentTensor(order, self.m, entries)

    def implied_covariance(self, assignment: Mapping) -> np.ndarray:
        return self.cov_tensor(2).evaluate(assignment).as_matrix()
