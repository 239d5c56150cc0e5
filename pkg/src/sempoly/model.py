"""Model representation and the text DSL for specifying it.

A model separates latent variables into exogenous (``xi``) and endogenous
(``eta``) groups.  Manifest x-variables measure the xi's, manifest
y-variables measure the eta's, and each eta is a polynomial function of the
xi's plus an independent Gaussian disturbance (``zeta``).  All measurement
errors are independent with diagonal covariance; latent means are zero.

DSL grammar (line oriented, ``#`` starts a comment)::

    latent exo   NAME...
    latent endo  NAME...
    manifest x   NAME...
    manifest y   NAME...
    measure MANIFEST = entry * LATENT { + entry * LATENT } + err(entry)
    struct  ETA = term { + term } + zeta(entry)
    cov XI XI = entry

    entry := "free" | "free(NAME)" | decimal literal (optionally signed)
    term  := entry { * factor }        factor := XI ["^" INT] | ETA

Within a structural equation a factor may name a previously defined eta; the
reference must be linear (a bare factor, not mixed into a product with xi's
or raised to a power) and is inlined by substitution, with the referenced
equation's zeta kept as an extra independent Gaussian input.  Self, forward,
and therefore cyclic references are rejected.  A term of degree zero (a pure
constant) is rejected: latent means are fixed at zero.

Missing off-diagonal ``cov`` statements default to a fixed zero; missing
diagonals are an error.
"""

from __future__ import annotations

import decimal
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .polynomial import (
    ERROR_VAR_DELTA,
    ERROR_VAR_EPSILON,
    ERROR_VAR_ZETA,
    LOADING_X,
    LOADING_Y,
    STRUCTURAL,
    VARIANCE_KINDS,
    XI_COV,
    ParamSymbol,
    Polynomial,
)

VARIANCE_FLOOR = 1e-6

XI = "xi"
DELTA = "delta"
EPSILON = "epsilon"
ZETA = "zeta"


class RvSymbol(NamedTuple):
    """One Gaussian input of the model: group xi/delta/epsilon/zeta, 1-based index."""

    group: str
    index: int

    def __str__(self) -> str:
        return f"{self.group}{self.index}"


class ModelError(ValueError):
    """Parse or validation failure, with source position when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where = f" ({where})"
        super().__init__(message + where)


@dataclass(frozen=True)
class EntrySpec:
    """A model matrix entry: either a fixed rational value or a free symbol."""

    fixed: Fraction | None = None
    symbol: ParamSymbol | None = None

    def __post_init__(self):
        if (self.fixed is None) == (self.symbol is None):
            raise ValueError("EntrySpec needs exactly one of fixed value or free symbol")

    @property
    def is_free(self) -> bool:
        return self.symbol is not None

    def as_polynomial(self) -> Polynomial:
        if self.symbol is not None:
            return Polynomial.variable(self.symbol)
        return Polynomial.constant(self.fixed) if self.fixed != 0 else Polynomial.zero()


FIXED_ZERO = EntrySpec(fixed=Fraction(0))
FIXED_ONE = EntrySpec(fixed=Fraction(1))


@dataclass(frozen=True)
class StructuralTerm:
    """One term of a structural polynomial: coefficient times either a
    monomial in the xi's or a linear reference to an earlier eta."""

    coefficient: EntrySpec
    xi_exponents: tuple[int, ...] = ()
    eta_ref: int | None = None  # 0-based index into latent_endo


@dataclass
class ParameterSpace:
    """Deterministically ordered free-parameter vector with lower bounds."""

    symbols: tuple[ParamSymbol, ...]
    lower_bounds: np.ndarray

    def __post_init__(self):
        self.index: dict[ParamSymbol, int] = {s: i for i, s in enumerate(self.symbols)}
        self.name_index: dict[str, int] = {s.name: i for i, s in enumerate(self.symbols)}

    @property
    def size(self) -> int:
        return len(self.symbols)

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.symbols)

    def vector(self, values: Mapping) -> np.ndarray:
        """Build a theta vector from a mapping keyed by symbols or names."""
        out = np.empty(self.size)
        for i, s in enumerate(self.symbols):
            if s in values:
                out[i] = values[s]
            elif s.name in values:
                out[i] = values[s.name]
            else:
                raise KeyError(f"no value for parameter {s.name!r}")
        return out

    def assignment(self, theta: Sequence[float]) -> dict[str, float]:
        if len(theta) != self.size:
            raise ValueError(f"expected {self.size} parameter values, got {len(theta)}")
        return {s.name: float(v) for s, v in zip(self.symbols, theta)}


@dataclass
class SemModel:
    """A validated model: measurement matrices, structural polynomials,
    xi covariance entries, and diagonal error variances."""

    latent_exo: tuple[str, ...]
    latent_endo: tuple[str, ...]
    manifest_x: tuple[str, ...]
    manifest_y: tuple[str, ...]
    lambda_x: tuple[tuple[EntrySpec, ...], ...]  # m1 x k
    lambda_y: tuple[tuple[EntrySpec, ...], ...]  # m2 x l
    structural: tuple[tuple[StructuralTerm, ...], ...]  # one sequence per eta
    phi: dict[tuple[int, int], EntrySpec]  # keys (i, j) with i <= j, 0-based
    theta_delta: tuple[EntrySpec, ...]
    theta_epsilon: tuple[EntrySpec, ...]
    psi: tuple[EntrySpec, ...]
    parameters: tuple[ParamSymbol, ...]
    warnings: tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return len(self.latent_exo)

    @property
    def l(self) -> int:
        return len(self.latent_endo)

    @property
    def m1(self) -> int:
        return len(self.manifest_x)

    @property
    def m2(self) -> int:
        return len(self.manifest_y)

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def manifest_names(self) -> tuple[str, ...]:
        return self.manifest_x + self.manifest_y

    def phi_entry(self, i: int, j: int) -> EntrySpec:
        key = (i, j) if i <= j else (j, i)
        return self.phi.get(key, FIXED_ZERO)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemModel):
            return NotImplemented
        return (
            self.latent_exo == other.latent_exo
            and self.latent_endo == other.latent_endo
            and self.manifest_x == other.manifest_x
            and self.manifest_y == other.manifest_y
            and self.lambda_x == other.lambda_x
            and self.lambda_y == other.lambda_y
            and self.structural == other.structural
            and self.phi == other.phi
            and self.theta_delta == other.theta_delta
            and self.theta_epsilon == other.theta_epsilon
            and self.psi == other.psi
            and self.parameters == other.parameters
        )


class RvPolynomial:
    """Polynomial in the model's Gaussian inputs whose coefficients are
    parameter Polynomials.  Keys are canonical tuples of (RvSymbol, exponent)."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[tuple, Polynomial] | None = None):
        clean: dict[tuple, Polynomial] = {}
        if terms:
            for mono, poly in terms.items():
                if not poly.is_zero:
                    clean[mono] = poly
        self.terms: dict[tuple, Polynomial] = clean

    @staticmethod
    def mono_of(rv: RvSymbol, exponent: int = 1) -> tuple:
        return ((rv, exponent),)

    @classmethod
    def zero(cls) -> "RvPolynomial":
        return cls()

    @classmethod
    def constant(cls, poly: Polynomial) -> "RvPolynomial":
        return cls({(): poly})

    @classmethod
    def variable(cls, rv: RvSymbol) -> "RvPolynomial":
        return cls({cls.mono_of(rv): Polynomial.one()})

    @staticmethod
    def _merge_monos(a: tuple, b: tuple) -> tuple:
        merged: dict[RvSymbol, int] = dict(a)
        for rv, e in b:
            merged[rv] = merged.get(rv, 0) + e
        return tuple(sorted(merged.items()))

    def __add__(self, other: "RvPolynomial") -> "RvPolynomial":
        out = dict(self.terms)
        for mono, poly in other.terms.items():
            cur = out.get(mono)
            new = poly if cur is None else cur + poly
            if new.is_zero:
                out.pop(mono, None)
            else:
                out[mono] = new
        return RvPolynomial(out)

    def __mul__(self, other: "RvPolynomial") -> "RvPolynomial":
        out: dict[tuple, Polynomial] = {}
        for ma, pa in self.terms.items():
            for mb, pb in other.terms.items():
                m = self._merge_monos(ma, mb)
                prod = pa * pb
                cur = out.get(m)
                new = prod if cur is None else cur + prod
                if new.is_zero:
                    out.pop(m, None)
                else:
                    out[m] = new
        return RvPolynomial(out)

    def scale(self, poly: Polynomial) -> "RvPolynomial":
        if poly.is_zero:
            return RvPolynomial.zero()
        return RvPolynomial({m: p * poly for m, p in self.terms.items()})

    def rv_symbols(self) -> set[RvSymbol]:
        out: set[RvSymbol] = set()
        for mono in self.terms:
            out.update(rv for rv, _ in mono)
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, RvPolynomial) and self.terms == other.terms

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        if not self.terms:
            return "RvPolynomial(0)"
        parts = []
        for mono in sorted(self.terms, key=lambda m: tuple((rv, e) for rv, e in m)):
            body = "*".join(str(rv) if e == 1 else f"{rv}^{e}" for rv, e in mono) or "1"
            parts.append(f"({self.terms[mono]})*{body}")
        return "RvPolynomial(" + " + ".join(parts) + ")"


# ---------------------------------------------------------------------------
# Lowering and parameter collection
# ---------------------------------------------------------------------------


def lower_structural(model: SemModel) -> list[RvPolynomial]:
    """Each eta as a polynomial in xi's and zeta's, references inlined."""
    etas: list[RvPolynomial] = []
    for j, terms in enumerate(model.structural):
        poly = RvPolynomial.zero()
        for term in terms:
            coeff = term.coefficient.as_polynomial()
            if term.eta_ref is not None:
                poly = poly + etas[term.eta_ref].scale(coeff)
            else:
                mono = tuple(
                    (RvSymbol(XI, i + 1), e)
                    for i, e in enumerate(term.xi_exponents)
                    if e > 0
                )
                poly = poly + RvPolynomial({tuple(sorted(mono)): coeff})
        poly = poly + RvPolynomial.variable(RvSymbol(ZETA, j + 1))
        etas.append(poly)
    return etas


def lower_manifest(model: SemModel) -> list[RvPolynomial]:
    """The combined manifest vector z = (x, y) as polynomials in the
    model's Gaussian inputs, measurement and structural equations substituted."""
    etas = lower_structural(model)
    out: list[RvPolynomial] = []
    for i in range(model.m1):
        poly = RvPolynomial.variable(RvSymbol(DELTA, i + 1))
        for j in range(model.k):
            loading = model.lambda_x[i][j].as_polynomial()
            if not loading.is_zero:
                poly = poly + RvPolynomial.variable(RvSymbol(XI, j + 1)).scale(loading)
        out.append(poly)
    for i in range(model.m2):
        poly = RvPolynomial.variable(RvSymbol(EPSILON, i + 1))
        for j in range(model.l):
            loading = model.lambda_y[i][j].as_polynomial()
            if not loading.is_zero:
                poly = poly + etas[j].scale(loading)
        out.append(poly)
    return out


def free_parameters(model: SemModel) -> ParameterSpace:
    """Ordered free parameters with bounds: declaration order, a positive
    floor for variance kinds and diagonal xi covariances."""
    diag_symbols = {
        e.symbol for (i, j), e in model.phi.items() if i == j and e.is_free
    }
    bounds = []
    for s in model.parameters:
        if s.kind in VARIANCE_KINDS or s in diag_symbols:
            bounds.append(VARIANCE_FLOOR)
        else:
            bounds.append(-np.inf)
    return ParameterSpace(tuple(model.parameters), np.asarray(bounds))


# ---------------------------------------------------------------------------
# DSL parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<op>[*^=+\-()])"
    r"|(?P<bad>\S)"
)


class _Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[list[_Token]]:
    lines: list[list[_Token]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        tokens: list[_Token] = []
        for match in _TOKEN_RE.finditer(body):
            kind = match.lastgroup
            if kind == "bad":
                raise ModelError(
                    f"unexpected character {match.group()!r}", lineno, match.start() + 1
                )
            tokens.append(_Token(kind, match.group(), lineno, match.start() + 1))
        if tokens:
            lines.append(tokens)
    return lines


class _Cursor:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def line(self) -> int:
        return self.tokens[0].line

    def peek(self) -> _Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expected: str | None = None) -> _Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1]
            raise ModelError(
                f"unexpected end of line{f', expected {expected!r}' if expected else ''}",
                last.line,
                last.column + len(last.text),
            )
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next(text)
        if tok.text != text:
            raise ModelError(f"expected {text!r}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def expect_name(self, what: str = "name") -> _Token:
        tok = self.next(what)
        if tok.kind != "name":
            raise ModelError(f"expected {what}, found {tok.text!r}", tok.line, tok.column)
        return tok

    def at_end(self) -> bool:
        return self.pos >= len(self.tokens)

    def require_end(self):
        tok = self.peek()
        if tok is not None:
            raise ModelError(f"unexpected trailing token {tok.text!r}", tok.line, tok.column)


class _ParamRegistry:
    def __init__(self):
        self.symbols: list[ParamSymbol] = []
        self._names: set[str] = set()
        self._auto_counts: dict[str, int] = {}

    def create(self, kind: str, auto_name: str, explicit: str | None, tok: _Token) -> ParamSymbol:
        name = explicit if explicit is not None else auto_name
        if name in self._names:
            if explicit is not None:
                raise ModelError(f"duplicate parameter name {name!r}", tok.line, tok.column)
            n = self._auto_counts.get(name, 1) + 1
            self._auto_counts[name] = n
            name = f"{name}_{n}"
        self._names.add(name)
        symbol = ParamSymbol(name, kind)
        self.symbols.append(symbol)
        return symbol


def _parse_number(cur: _Cursor) -> Fraction:
    sign = 1
    tok = cur.next("number")
    if tok.kind == "op" and tok.text == "-":
        sign = -1
        tok = cur.next("number")
    if tok.kind != "number":
        raise ModelError(f"expected a number, found {tok.text!r}", tok.line, tok.column)
    return sign * Fraction(decimal.Decimal(tok.text))


def _parse_entry(cur: _Cursor, registry: _ParamRegistry, kind: str, auto_name: str) -> EntrySpec:
    tok = cur.peek()
    if tok is None:
        raise ModelError("expected a value or 'free'", cur.tokens[-1].line, None)
    if tok.kind == "name" and tok.text == "free":
        cur.next()
        explicit = None
        after = cur.peek()
        if after is not None and after.text == "(":
            cur.expect("(")
            explicit = cur.expect_name("parameter name").text
            cur.expect(")")
        return EntrySpec(symbol=registry.create(kind, auto_name, explicit, tok))
    return EntrySpec(fixed=_parse_number(cur))


def parse_model(text: str) -> SemModel:
    """Parse DSL text into a validated SemModel."""
    lines = _tokenize(text)
    registry = _ParamRegistry()

    latent_exo: list[str] = []
    latent_endo: list[str] = []
    manifest_x: list[str] = []
    manifest_y: list[str] = []
    measures: dict[str, tuple[list[tuple[EntrySpec, str]], EntrySpec, int]] = {}
    structs: dict[str, tuple[list, EntrySpec, int]] = {}
    struct_order: list[str] = []
    covs: dict[tuple[str, str], EntrySpec] = {}

    declared: dict[str, str] = {}  # name -> category

    def declare(name: str, category: str, tok: _Token):
        if name in declared:
            raise ModelError(f"duplicate declaration of {name!r}", tok.line, tok.column)
        declared[name] = category

    # -- first pass: declarations, so equations can be order-insensitive ----
    cursors = [_Cursor(toks) for toks in lines]
    for cur in cursors:
        head = cur.peek()
        if head.kind != "name":
            raise ModelError(f"expected a statement keyword, found {head.text!r}", head.line, head.column)
        if head.text == "latent":
            cur.next()
            side = cur.expect_name("'exo' or 'endo'")
            if side.text not in ("exo", "endo"):
                raise ModelError("latent group must be 'exo' or 'endo'", side.line, side.column)
            names = []
            while not cur.at_end():
                names.append(cur.expect_name("latent name"))
            if not names:
                raise ModelError("latent statement needs at least one name", head.line, head.column)
            for tok in names:
                declare(tok.text, "exo" if side.text == "exo" else "endo", tok)
                (latent_exo if side.text == "exo" else latent_endo).append(tok.text)
            cur.pos = len(cur.tokens)
        elif head.text == "manifest":
            cur.next()
            side = cur.expect_name("'x' or 'y'")
            if side.text not in ("x", "y"):
                raise ModelError("manifest group must be 'x' or 'y'", side.line, side.column)
            names = []
            while not cur.at_end():
                names.append(cur.expect_name("manifest name"))
            if not names:
                raise ModelError("manifest statement needs at least one name", head.line, head.column)
            for tok in names:
                declare(tok.text, "x" if side.text == "x" else "y", tok)
                (manifest_x if side.text == "x" else manifest_y).append(tok.text)
            cur.pos = len(cur.tokens)

    if not latent_exo:
        raise ModelError("model declares no exogenous latent variables")
    if not (manifest_x or manifest_y):
        raise ModelError("model declares no manifest variables")

    # -- second pass: equations ---------------------------------------------
    for cur in cursors:
        cur.pos = 0
        head = cur.next()
        if head.text in ("latent", "manifest"):
            continue

        if head.text == "measure":
            target = cur.expect_name("manifest name")
            side = declared.get(target.text)
            if side not in ("x", "y"):
                raise ModelError(f"unknown manifest variable {target.text!r}", target.line, target.column)
            if target.text in measures:
                raise ModelError(f"duplicate measure statement for {target.text!r}", target.line, target.column)
            cur.expect("=")
            loadings: list[tuple[EntrySpec, str]] = []
            err_entry: EntrySpec | None = None
            while True:
                tok = cur.peek()
                if tok is not None and tok.kind == "name" and tok.text == "err":
                    cur.next()
                    cur.expect("(")
                    err_entry = _parse_entry(cur, registry, ERROR_VAR_DELTA if side == "x" else ERROR_VAR_EPSILON, f"var_{target.text}")
                    cur.expect(")")
                    cur.require_end()
                    break
                entry_tok = tok
                entry = _parse_entry(
                    cur,
                    registry,
                    LOADING_X if side == "x" else LOADING_Y,
                    f"lam_{target.text}",
                )
                cur.expect("*")
                latent = cur.expect_name("latent name")
                cat = declared.get(latent.text)
                want = "exo" if side == "x" else "endo"
                if cat != want:
                    raise ModelError(
                        f"{'x' if side == 'x' else 'y'}-manifest {target.text!r} must load on "
                        f"{'exogenous' if want == 'exo' else 'endogenous'} latents, got {latent.text!r}",
                        latent.line,
                        latent.column,
                    )
                loadings.append((entry, latent.text))
                cur.expect("+")
                del entry_tok
            if err_entry is None:
                raise ModelError(f"measure statement for {target.text!r} is missing err(...)", head.line, head.column)
            if not loadings:
                raise ModelError(f"measure statement for {target.text!r} has no loading terms", head.line, head.column)
            seen_latents = set()
            for _, lat in loadings:
                if lat in seen_latents:
                    raise ModelError(f"duplicate loading on {lat!r} in measure for {target.text!r}", head.line, head.column)
                seen_latents.add(lat)
            measures[target.text] = (loadings, err_entry, head.line)

        elif head.text == "struct":
            target = cur.expect_name("endogenous latent name")
            if declared.get(target.text) != "endo":
                raise ModelError(f"struct target {target.text!r} is not an endogenous latent", target.line, target.column)
            if target.text in structs:
                raise ModelError(f"duplicate struct statement for {target.text!r}", target.line, target.column)
            cur.expect("=")
            terms: list[tuple[EntrySpec, dict[str, int], _Token]] = []
            zeta_entry: EntrySpec | None = None
            term_no = 0
            while True:
                tok = cur.peek()
                if tok is not None and tok.kind == "name" and tok.text == "zeta":
                    cur.next()
                    cur.expect("(")
                    zeta_entry = _parse_entry(cur, registry, ERROR_VAR_ZETA, f"psi_{target.text}")
                    cur.expect(")")
                    cur.require_end()
                    break
                term_no += 1
                entry = _parse_entry(cur, registry, STRUCTURAL, f"b_{target.text}_{term_no}")
                factors: dict[str, int] = {}
                first = cur.expect("*")
                while True:
                    name = cur.expect_name("latent factor")
                    if declared.get(name.text) not in ("exo", "endo"):
                        raise ModelError(f"unknown latent variable {name.text!r}", name.line, name.column)
                    power = 1
                    nxt = cur.peek()
                    if nxt is not None and nxt.text == "^":
                        cur.expect("^")
                        ptok = cur.next("integer exponent")
                        if ptok.kind != "number" or "." in ptok.text or "e" in ptok.text.lower():
                            raise ModelError("exponent must be a positive integer", ptok.line, ptok.column)
                        power = int(ptok.text)
                        if power < 1:
                            raise ModelError("exponent must be a positive integer", ptok.line, ptok.column)
                    factors[name.text] = factors.get(name.text, 0) + power
                    nxt = cur.peek()
                    if nxt is not None and nxt.text == "*":
                        cur.expect("*")
                        continue
                    break
                terms.append((entry, factors, first))
                cur.expect("+")
            if zeta_entry is None:
                raise ModelError(f"struct statement for {target.text!r} is missing zeta(...)", head.line, head.column)
            structs[target.text] = (terms, zeta_entry, head.line)
            struct_order.append(target.text)

        elif head.text == "cov":
            a = cur.expect_name("latent name")
            b = cur.expect_name("latent name")
            for tok in (a, b):
                if declared.get(tok.text) != "exo":
                    raise ModelError(f"cov applies to exogenous latents only, got {tok.text!r}", tok.line, tok.column)
            cur.expect("=")
            auto = f"cov_{a.text}_{b.text}" if a.text != b.text else f"var_{a.text}"
            entry = _parse_entry(cur, registry, XI_COV, auto)
            cur.require_end()
            key = tuple(sorted((a.text, b.text)))
            if key in covs:
                raise ModelError(f"duplicate cov statement for {key[0]}, {key[1]}", head.line, head.column)
            covs[key] = entry

        else:
            raise ModelError(f"unknown statement {head.text!r}", head.line, head.column)

    # -- assembly -------------------------------------------------------------
    exo_index = {name: i for i, name in enumerate(latent_exo)}
    endo_index = {name: i for i, name in enumerate(latent_endo)}

    for name in manifest_x + manifest_y:
        if name not in measures:
            raise ModelError(f"manifest variable {name!r} has no measure statement")
    for name in latent_endo:
        if name not in structs:
            raise ModelError(f"endogenous latent {name!r} has no struct statement")
    for name in latent_exo:
        if (name, name) not in covs:
            raise ModelError(f"missing cov statement for the variance of {name!r}")

    m1, m2, k, l = len(manifest_x), len(manifest_y), len(latent_exo), len(latent_endo)

    lambda_x = []
    theta_delta = []
    for name in manifest_x:
        loadings, err_entry, _ = measures[name]
        row = [FIXED_ZERO] * k
        for entry, lat in loadings:
            row[exo_index[lat]] = entry
        lambda_x.append(tuple(row))
        theta_delta.append(err_entry)

    lambda_y = []
    theta_epsilon = []
    for name in manifest_y:
        loadings, err_entry, _ = measures[name]
        row = [FIXED_ZERO] * l
        for entry, lat in loadings:
            row[endo_index[lat]] = entry
        lambda_y.append(tuple(row))
        theta_epsilon.append(err_entry)

    # structural equations in eta declaration order; references must point
    # to etas defined in an earlier struct statement, linearly
    defined_pos = {name: i for i, name in enumerate(struct_order)}
    structural: list[tuple[StructuralTerm, ...]] = [()] * l
    psi: list[EntrySpec] = [FIXED_ZERO] * l
    for name in latent_endo:
        terms_raw, zeta_entry, lineno = structs[name]
        built: list[StructuralTerm] = []
        seen: set = set()
        for entry, factors, tok in terms_raw:
            endo_factors = [f for f in factors if f in endo_index]
            if endo_factors:
                ref = endo_factors[0]
                ok = (
                    len(factors) == 1
                    and factors[ref] == 1
                    and defined_pos.get(ref, l + 1) < defined_pos[name]
                )
                if not ok:
                    raise ModelError(
                        f"endogenous variable {ref!r} on the right-hand side of {name!r}: "
                        "only a linear reference to a previously defined endogenous "
                        "variable is allowed",
                        tok.line,
                        tok.column,
                    )
                key = ("eta", ref)
                term = StructuralTerm(coefficient=entry, eta_ref=endo_index[ref])
            else:
                exponents = [0] * k
                for f, e in factors.items():
                    exponents[exo_index[f]] = e
                if sum(exponents) == 0:
                    raise ModelError(
                        f"constant term in struct for {name!r}: latent means are fixed at zero",
                        tok.line,
                        tok.column,
                    )
                key = ("xi", tuple(exponents))
                term = StructuralTerm(coefficient=entry, xi_exponents=tuple(exponents))
            if key in seen:
                raise ModelError(f"duplicate structural term in {name!r}", tok.line, tok.column)
            seen.add(key)
            built.append(term)
        structural[endo_index[name]] = tuple(built)
        psi[endo_index[name]] = zeta_entry

    phi: dict[tuple[int, int], EntrySpec] = {}
    for (a, b), entry in covs.items():
        i, j = sorted((exo_index[a], exo_index[b]))
        phi[(i, j)] = entry

    warnings: list[str] = []
    for j, lat in enumerate(latent_exo):
        if not any(not lambda_x[i][j].is_free and lambda_x[i][j].fixed != 0 for i in range(m1)):
            warnings.append(f"no fixed loading sets the scale of {lat!r}")
    for j, lat in enumerate(latent_endo):
        if not any(not lambda_y[i][j].is_free and lambda_y[i][j].fixed != 0 for i in range(m2)):
            warnings.append(f"no fixed loading sets the scale of {lat!r}")

    model = SemModel(
        latent_exo=tuple(latent_exo),
        latent_endo=tuple(latent_endo),
        manifest_x=tuple(manifest_x),
        manifest_y=tuple(manifest_y),
        lambda_x=tuple(lambda_x),
        lambda_y=tuple(lambda_y),
        structural=tuple(structural),
        phi=phi,
        theta_delta=tuple(theta_delta),
        theta_epsilon=tuple(theta_epsilon),
        psi=tuple(psi),
        parameters=tuple(registry.symbols),
        warnings=tuple(warnings),
    )
    validate_model(model)
    return model


def validate_model(model: SemModel):
    """Structural sanity checks; raises ModelError on violation."""
    seen: dict[ParamSymbol, int] = {}

    def visit(entry: EntrySpec):
        if entry.is_free:
            seen[entry.symbol] = seen.get(entry.symbol, 0) + 1

    for row in model.lambda_x:
        for e in row:
            visit(e)
    for row in model.lambda_y:
        for e in row:
            visit(e)
    for terms in model.structural:
        for t in terms:
            visit(t.coefficient)
    for e in model.phi.values():
        visit(e)
    for e in model.theta_delta + model.theta_epsilon + model.psi:
        visit(e)

    for sym, count in seen.items():
        if count != 1:
            raise ModelError(f"parameter {sym.name!r} appears in {count} entries; sharing is not supported")
    if set(seen) != set(model.parameters):
        missing = {s.name for s in model.parameters} - {s.name for s in seen}
        extra = {s.name for s in seen} - {s.name for s in model.parameters}
        raise ModelError(f"parameter registry mismatch (missing {sorted(missing)}, extra {sorted(extra)})")


# ---------------------------------------------------------------------------
# Rendering back to DSL text
# ---------------------------------------------------------------------------


def _fraction_literal(value: Fraction) -> str:
    d = value.denominator
    while d % 2 == 0:
        d //= 2
    while d % 5 == 0:
        d //= 5
    if d != 1:
        raise ValueError(f"fixed value {value} has no exact decimal form; use free(...) instead")
    return str(decimal.Decimal(value.numerator) / decimal.Decimal(value.denominator))


def _entry_text(entry: EntrySpec) -> str:
    if entry.is_free:
        return f"free({entry.symbol.name})"
    return _fraction_literal(entry.fixed)


def render_model(model: SemModel) -> str:
    """Canonical DSL text; parse(render(m)) is structurally equal to m."""
    out: list[str] = []
    out.append("latent exo " + " ".join(model.latent_exo))
    if model.latent_endo:
        out.append("latent endo " + " ".join(model.latent_endo))
    if model.manifest_x:
        out.append("manifest x " + " ".join(model.manifest_x))
    if model.manifest_y:
        out.append("manifest y " + " ".join(model.manifest_y))
    for i, name in enumerate(model.manifest_x):
        parts = [
            f"{_entry_text(e)} * {model.latent_exo[j]}"
            for j, e in enumerate(model.lambda_x[i])
            if e.is_free or e.fixed != 0
        ]
        out.append(f"measure {name} = " + " + ".join(parts) + f" + err({_entry_text(model.theta_delta[i])})")
    for i, name in enumerate(model.manifest_y):
        parts = [
            f"{_entry_text(e)} * {model.latent_endo[j]}"
            for j, e in enumerate(model.lambda_y[i])
            if e.is_free or e.fixed != 0
        ]
        out.append(f"measure {name} = " + " + ".join(parts) + f" + err({_entry_text(model.theta_epsilon[i])})")
    for j, name in enumerate(model.latent_endo):
        parts = []
        for term in model.structural[j]:
            coeff = _entry_text(term.coefficient)
            if term.eta_ref is not None:
                body = model.latent_endo[term.eta_ref]
            else:
                factors = [
                    model.latent_exo[i] if e == 1 else f"{model.latent_exo[i]}^{e}"
                    for i, e in enumerate(term.xi_exponents)
                    if e > 0
                ]
                body = "*".join(factors)
            parts.append(f"{coeff}*{body}")
        out.append(f"struct {name} = " + " + ".join(parts) + f" + zeta({_entry_text(model.psi[j])})")
    for (i, j), entry in sorted(model.phi.items()):
        out.append(f"cov {model.latent_exo[i]} {model.latent_exo[j]} = {_entry_text(entry)}")
    return "\n".join(out) + "\n"
