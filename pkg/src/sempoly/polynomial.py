"""Exact sparse multivariate polynomials over named model parameters.

Coefficients stay exact rationals (``fractions.Fraction``) through every
symbolic operation; conversion to floating point happens only at evaluation
time.  This keeps structural cancellations (independence zeros, vanishing odd
moments) exactly zero instead of epsilon-sized.

Polynomials are immutable values: every operation returns a new object, so
instances can be shared freely across threads.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

# Parameter kinds.  The kind decides the optimizer's lower bound for the
# parameter (variances must stay above a positive floor).
LOADING_X = "loading-x"
LOADING_Y = "loading-y"
STRUCTURAL = "structural-coef"
XI_COV = "xi-cov"
ERROR_VAR_DELTA = "error-var-delta"
ERROR_VAR_EPSILON = "error-var-epsilon"
ERROR_VAR_ZETA = "error-var-zeta"

PARAM_KINDS = (
    LOADING_X,
    LOADING_Y,
    STRUCTURAL,
    XI_COV,
    ERROR_VAR_DELTA,
    ERROR_VAR_EPSILON,
    ERROR_VAR_ZETA,
)

VARIANCE_KINDS = frozenset({ERROR_VAR_DELTA, ERROR_VAR_EPSILON, ERROR_VAR_ZETA})


class MissingSymbolError(LookupError):
    """A polynomial was evaluated without a value for one of its symbols."""


class ParamSymbol:
    """A named free parameter.  Two symbols are equal iff their names are."""

    __slots__ = ("name", "kind")

    def __init__(self, name: str, kind: str):
        if kind not in PARAM_KINDS:
            raise ValueError(f"unknown parameter kind {kind!r}")
        self.name = name
        self.kind = kind

    def __eq__(self, other) -> bool:
        return isinstance(other, ParamSymbol) and self.name == other.name

    def __hash__(self) -> int:
        return hash(self.name)

    def __repr__(self) -> str:
        return f"ParamSymbol({self.name!r}, {self.kind!r})"

    def __str__(self) -> str:
        return self.name


class Monomial:
    """A product of parameter powers, canonically ordered by symbol name."""

    __slots__ = ("powers",)

    def __init__(self, powers: Iterable[tuple[ParamSymbol, int]] = ()):
        items = [(s, e) for s, e in powers if e != 0]
        for _, e in items:
            if e < 0:
                raise ValueError("negative exponents are not supported")
        items.sort(key=lambda se: se[0].name)
        self.powers: tuple[tuple[ParamSymbol, int], ...] = tuple(items)

    @classmethod
    def unit(cls) -> "Monomial":
        return cls(())

    @classmethod
    def of(cls, symbol: ParamSymbol, exponent: int = 1) -> "Monomial":
        return cls(((symbol, exponent),))

    def degree(self) -> int:
        return sum(e for _, e in self.powers)

    def __mul__(self, other: "Monomial") -> "Monomial":
        merged: dict[ParamSymbol, int] = dict(self.powers)
        for s, e in other.powers:
            merged[s] = merged.get(s, 0) + e
        return Monomial(merged.items())

    def sort_key(self) -> tuple:
        return (self.degree(), tuple((s.name, e) for s, e in self.powers))

    def __eq__(self, other) -> bool:
        return isinstance(other, Monomial) and self.powers == other.powers

    def __hash__(self) -> int:
        return hash(self.powers)

    def __repr__(self) -> str:
        if not self.powers:
            return "1"
        return "*".join(s.name if e == 1 else f"{s.name}^{e}" for s, e in self.powers)


def _coerce_coeff(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    raise TypeError(
        f"polynomial coefficients must be exact (int or Fraction), got {type(value).__name__}"
    )


class Polynomial:
    """Sparse polynomial: map from Monomial to a nonzero rational coefficient."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[Monomial, Fraction] | None = None):
        clean: dict[Monomial, Fraction] = {}
        if terms:
            for mono, coeff in terms.items():
                c = _coerce_coeff(coeff)
                if c != 0:
                    clean[mono] = c
        self.terms: dict[Monomial, Fraction] = clean

    # -- constructors ------------------------------------------------------

    @classmethod
    def zero(cls) -> "Polynomial":
        return cls()

    @classmethod
    def one(cls) -> "Polynomial":
        return cls({Monomial.unit(): Fraction(1)})

    @classmethod
    def constant(cls, value) -> "Polynomial":
        return cls({Monomial.unit(): _coerce_coeff(value)})

    @classmethod
    def variable(cls, symbol: ParamSymbol) -> "Polynomial":
        return cls({Monomial.of(symbol): Fraction(1)})

    # -- ring operations ---------------------------------------------------

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if not isinstance(other, Polynomial):
            return NotImplemented
        out = dict(self.terms)
        for mono, coeff in other.terms.items():
            new = out.get(mono, Fraction(0)) + coeff
            if new == 0:
                out.pop(mono, None)
            else:
                out[mono] = new
        return Polynomial(out)

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + (-other)

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, Fraction)):
            c = _coerce_coeff(other)
            if c == 0:
                return Polynomial.zero()
            return Polynomial({m: k * c for m, k in self.terms.items()})
        if not isinstance(other, Polynomial):
            return NotImplemented
        out: dict[Monomial, Fraction] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = ma * mb
                new = out.get(m, Fraction(0)) + ca * cb
                if new == 0:
                    out.pop(m, None)
                else:
                    out[m] = new
        return Polynomial(out)

    def __rmul__(self, other) -> "Polynomial":
        return self.__mul__(other)

    def __pow__(self, exponent: int) -> "Polynomial":
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError("polynomial powers must be non-negative integers")
        result = Polynomial.one()
        base = self
        e = exponent
        while e:
            if e & 1:
                result = result * base
            e >>= 1
            if e:
                base = base * base
        return result

    # -- calculus and evaluation -------------------------------------------

    def differentiate(self, symbol: ParamSymbol) -> "Polynomial":
        """Formal partial derivative with respect to ``symbol``."""
        out: dict[Monomial, Fraction] = {}
        for mono, coeff in self.terms.items():
            for i, (s, e) in enumerate(mono.powers):
                if s == symbol:
                    reduced = list(mono.powers)
                    if e == 1:
                        del reduced[i]
                    else:
                        reduced[i] = (s, e - 1)
                    m = Monomial(reduced)
                    new = out.get(m, Fraction(0)) + coeff * e
                    if new == 0:
                        out.pop(m, None)
                    else:
                        out[m] = new
                    break
        return Polynomial(out)

    def evaluate(self, assignment: Mapping) -> float:
        """Numeric value at the given symbol assignment (keys may be symbols
        or symbol names).  Raises MissingSymbolError for uncovered symbols."""
        total = 0.0
        for mono, coeff in self.terms.items():
            value = float(coeff)
            for s, e in mono.powers:
                if s in assignment:
                    x = assignment[s]
                elif s.name in assignment:
                    x = assignment[s.name]
                else:
                    raise MissingSymbolError(f"no value assigned to symbol {s.name!r}")
                value *= float(x) ** e
            total += value
        return total

    # -- inspection ---------------------------------------------------------

    def symbols(self) -> set[ParamSymbol]:
        out: set[ParamSymbol] = set()
        for mono in self.terms:
            out.update(s for s, _ in mono.powers)
        return out

    def degree(self) -> int:
        return max((m.degree() for m in self.terms), default=0)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def constant_value(self) -> Fraction:
        """Coefficient of the constant monomial (0 when absent)."""
        return self.terms.get(Monomial.unit(), Fraction(0))

    def sorted_terms(self) -> list[tuple[Monomial, Fraction]]:
        return sorted(self.terms.items(), key=lambda kv: kv[0].sort_key())

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and self.terms == other.terms

    __hash__ = None  # type: ignore[assignment]

    def render(self) -> str:
        """Deterministic text form: terms sorted by monomial, symbols by name."""
        if not self.terms:
            return "0"
        parts: list[str] = []
        for mono, coeff in self.sorted_terms():
            body = repr(mono)
            if body == "1":
                text = str(coeff)
            elif coeff == 1:
                text = body
            elif coeff == -1:
                text = f"-{body}"
            else:
                text = f"{coeff}*{body}"
            if not parts:
                parts.append(text)
            elif text.startswith("-"):
                parts.append(f" - {text[1:]}")
            else:
                parts.append(f" + {text}")
        return "".join(parts)

    def __str__(self) -> str:
        return self.render()

    def __repr__(self) -> str:
        return f"Polynomial({self.render()})"


class CompiledBlock:
    """Vectorized evaluator for a fixed sequence of polynomials.

    Terms are flattened into index arrays once; evaluation is then a gather
    plus two ufunc reductions.  Term ordering is canonical, so evaluation is
    bit-for-bit reproducible regardless of how the polynomials were built.
    """

    def __init__(self, polys: Sequence[Polynomial], param_index: Mapping[ParamSymbol, int]):
        n_params = len(param_index)
        sentinel = n_params  # extra slot holding 1.0
        factor_idx: list[int] = []
        term_starts: list[int] = []
        coeffs: list[float] = []
        poly_starts: list[int] = []
        for poly in polys:
            poly_starts.append(len(coeffs))
            items = poly.sorted_terms()
            if not items:
                # explicit zero term keeps every reduction segment non-empty
                term_starts.append(len(factor_idx))
                factor_idx.append(sentinel)
                coeffs.append(0.0)
                continue
            for mono, coeff in items:
                term_starts.append(len(factor_idx))
                factor_idx.append(sentinel)
                for sym, exp in mono.powers:
                    try:
                        j = param_index[sym]
                    except KeyError:
                        raise MissingSymbolError(
                            f"symbol {sym.name!r} is not in the parameter space"
                        ) from None
                    factor_idx.extend([j] * exp)
                coeffs.append(float(coeff))
        self.n_polys = len(polys)
        self.n_params = n_params
        self._factor_idx = np.asarray(factor_idx, dtype=np.intp)
        self._term_starts = np.asarray(term_starts, dtype=np.intp)
        self._coeffs = np.asarray(coeffs, dtype=np.float64)
        self._poly_starts = np.asarray(poly_starts, dtype=np.intp)

    def values(self, theta: np.ndarray) -> np.ndarray:
        if self.n_polys == 0:
            return np.zeros(0)
        ext = np.empty(self.n_params + 1)
        ext[: self.n_params] = theta
        ext[self.n_params] = 1.0
        factors = ext[self._factor_idx]
        term_vals = np.multiply.reduceat(factors, self._term_starts)
        term_vals *= self._coeffs
        return np.add.reduceat(term_vals, self._poly_starts)
