"""Discrepancy objectives between implied and sample moments.

Two families are provided:

* ``ULS(k)`` sums squared residuals of every moment tensor from order 2 up
  to k, each order weighted by 1/2**(k'-1), and the sum runs over the full
  Cartesian index range.  Internally only canonical tuples are evaluated,
  scaled by their orbit size, which reproduces the full sum exactly.
  With k = 2 the value equals half the squared Frobenius norm of S - Sigma.

* ``WLS`` forms the half-vectorized order-2 residual r and computes
  r' W^-1 r through a Cholesky solve (never an explicit inverse).  GLS is
  the same objective with the normal-theory weights.

All residual entries are polynomials in the parameters, so gradients are
exact: residual partials are differentiated symbolically once per model and
evaluated as compiled blocks.  Weight matrices are fixed functions of the
data and are held constant during optimization.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .empirical import (
    EmpiricalMoments,
    WeightMatrix,
    factor_weight,
    solve_weight,
)
from .model import ParameterSpace, free_parameters
from .moments import MomentEngine, tuple_multiplicity
from .polynomial import CompiledBlock, Polynomial


class CompiledMoments:
    """Implied moments and their Jacobian for a fixed list of (order, tuple)
    entries, compiled once per model and reused across datasets."""

    def __init__(self, engine: MomentEngine, space: ParameterSpace, orders: tuple[int, ...]):
        self.space = space
        self.orders = orders
        self.entries: list[tuple[int, tuple[int, ...]]] = []
        polys: list[Polynomial] = []
        for order in orders:
            tensor = engine.cov_tensor(order)
            for t, poly in tensor.canonical_items():
                self.entries.append((order, t))
                polys.append(poly)
        self.n = len(polys)
        index = {s: i for i, s in enumerate(space.symbols)}
        self._value_block = CompiledBlock(polys, index)
        partials = [p.differentiate(s) for p in polys for s in space.symbols]
        self._jac_block = CompiledBlock(partials, index)

    def implied(self, theta: np.ndarray) -> np.ndarray:
        return self._value_block.values(theta)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        return self._jac_block.values(theta).reshape(self.n, self.space.size)


def compiled_moments(engine: MomentEngine, orders: Sequence[int]) -> CompiledMoments:
    """Per-engine cache of compiled moment blocks keyed by the order tuple."""
    key = tuple(orders)
    cache = getattr(engine, "_compiled_cache", None)
    if cache is None:
        cache = {}
        engine._compiled_cache = cache
    block = cache.get(key)
    if block is None:
        space = free_parameters(engine.model)
        block = CompiledMoments(engine, space, key)
        cache[key] = block
    return block


class Objective:
    """Compiled discrepancy function with value-and-gradient evaluation."""

    def __init__(
        self,
        kind: str,
        compiled: CompiledMoments,
        target: np.ndarray,
        weights_diag: np.ndarray | None = None,
        weight_factor=None,
        order: int = 2,
    ):
        if len(target) != compiled.n:
            raise ValueError("target vector does not match the compiled moment layout")
        self.kind = kind
        self.order = order
        self.space = compiled.space
        self._compiled = compiled
        self._target = np.asarray(target, dtype=np.float64)
        self._weights_diag = weights_diag
        self._weight_factor = weight_factor

    @property
    def n_parameters(self) -> int:
        return self.space.size

    def residual(self, theta: np.ndarray) -> np.ndarray:
        return self._compiled.implied(np.asarray(theta, dtype=np.float64)) - self._target

    def value(self, theta: np.ndarray) -> float:
        r = self.residual(theta)
        if self._weights_diag is not None:
            return float(np.dot(self._weights_diag * r, r))
        return float(np.dot(r, solve_weight(self._weight_factor, r)))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        r = self.residual(theta)
        J = self._compiled.jacobian(theta)
        if self._weights_diag is not None:
            return 2.0 * (J.T @ (self._weights_diag * r))
        return 2.0 * (J.T @ solve_weight(self._weight_factor, r))

    def value_and_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        theta = np.asarray(theta, dtype=np.float64)
        r = self.residual(theta)
        J = self._compiled.jacobian(theta)
        if self._weights_diag is not None:
            wr = self._weights_diag * r
        else:
            wr = solve_weight(self._weight_factor, r)
        return float(np.dot(wr, r)), 2.0 * (J.T @ wr)

    def value_at(self, values: Mapping) -> float:
        """Value from a mapping keyed by parameter names or symbols; depends
        only on the assignment, not on the parameter ordering."""
        return self.value(self.space.vector(values))

    def curvature(self, theta: np.ndarray) -> np.ndarray:
        """Gauss-Newton curvature 2 J' W J, used to seed the optimizer's
        inverse-Hessian model."""
        theta = np.asarray(theta, dtype=np.float64)
        J = self._compiled.jacobian(theta)
        if self._weights_diag is not None:
            return 2.0 * (J.T * self._weights_diag) @ J
        return 2.0 * J.T @ solve_weight(self._weight_factor, J)


def build_uls_k(engine: MomentEngine, empirical: EmpiricalMoments, k: int) -> Objective:
    """Sum over orders 2..k of the squared moment residuals, each order
    weighted 1/2**(order-1) and every index permutation counted."""
    if k < 2:
        raise ValueError("ULS objectives need k >= 2")
    orders = tuple(range(2, k + 1))
    for order in orders:
        if not empirical.has_order(order):
            raise ValueError(f"empirical moments lack order {order}, required for ULS({k})")
    compiled = compiled_moments(engine, orders)
    target = np.concatenate([empirical.vector(order) for order in orders])
    weights = np.array(
        [tuple_multiplicity(t) / 2.0 ** (order - 1) for order, t in compiled.entries]
    )
    kind = "uls" if k == 2 else f"uls{k}"
    return Objective(kind, compiled, target, weights_diag=weights, order=k)


def build_uls(engine: MomentEngine, empirical: EmpiricalMoments) -> Objective:
    return build_uls_k(engine, empirical, 2)


def build_wls(engine: MomentEngine, empirical: EmpiricalMoments, weight: WeightMatrix) -> Objective:
    """Weighted least squares on the half-vectorized covariance residual."""
    if weight.m != engine.m:
        raise ValueError(
            f"weight matrix is for {weight.m} variables, model has {engine.m}"
        )
    compiled = compiled_moments(engine, (2,))
    target = empirical.vector(2)
    factor, _ridge = factor_weight(weight)
    return Objective("wls", compiled, target, weight_factor=factor)


def build_gls(engine: MomentEngine, empirical: EmpiricalMoments) -> Objective:
    """Normal-theory weighted least squares (weights from the sample covariance)."""
    from .empirical import normal_theory_weight

    obj = build_wls(engine, empirical, normal_theory_weight(empirical.tensors[2]))
    obj.kind = "gls"
    return obj
