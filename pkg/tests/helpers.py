"""Shared test fixtures: tiny model sources, random-model templates, and the
brute-force pairing enumerator used as the oracle for Gaussian moments."""

from __future__ import annotations

import numpy as np

from sempoly.polynomial import Polynomial

ONE_FACTOR = """
latent exo xi1
manifest x x1 x2 x3
measure x1 = 1 * xi1 + err(free(v1))
measure x2 = free(l2) * xi1 + err(free(v2))
measure x3 = free(l3) * xi1 + err(free(v3))
cov xi1 xi1 = free(phi)
"""

LINEAR_TWO_FACTOR = """
latent exo xi1 xi2
latent endo eta1
manifest x x1 x2 x3 x4
manifest y y1 y2
measure x1 = 1 * xi1 + err(free(vx1))
measure x2 = free(l2) * xi1 + err(free(vx2))
measure x3 = 1 * xi2 + err(free(vx3))
measure x4 = free(l4) * xi2 + err(free(vx4))
measure y1 = 1 * eta1 + err(free(vy1))
measure y2 = free(m2) * eta1 + err(free(vy2))
struct eta1 = free(g1)*xi1 + free(g2)*xi2 + zeta(free(ps))
cov xi1 xi1 = free(p11)
cov xi1 xi2 = free(p12)
cov xi2 xi2 = free(p22)
"""

QUADRATIC_MINI = """
latent exo xi1 xi2
latent endo eta1
manifest x x1 x2 x3 x4
manifest y y1 y2
measure x1 = 1 * xi1 + err(free(vx1))
measure x2 = free(l2) * xi1 + err(free(vx2))
measure x3 = 1 * xi2 + err(free(vx3))
measure x4 = free(l4) * xi2 + err(free(vx4))
measure y1 = 1 * eta1 + err(free(vy1))
measure y2 = free(m2) * eta1 + err(free(vy2))
struct eta1 = free(g1)*xi1 + free(g2)*xi2 + free(w11)*xi1^2 + free(w12)*xi1*xi2 + zeta(free(ps))
cov xi1 xi1 = free(p11)
cov xi1 xi2 = free(p12)
cov xi2 xi2 = free(p22)
"""

CHAIN_MODEL = """
latent exo xi1
latent endo eta1 eta2
manifest x x1 x2
manifest y y1 y2 y3 y4
measure x1 = 1 * xi1 + err(free(vx1))
measure x2 = free(l2) * xi1 + err(free(vx2))
measure y1 = 1 * eta1 + err(free(vy1))
measure y2 = free(m2) * eta1 + err(free(vy2))
measure y3 = 1 * eta2 + err(free(vy3))
measure y4 = free(m4) * eta2 + err(free(vy4))
struct eta1 = free(b1)*xi1 + free(b2)*xi1^2 + zeta(free(ps1))
struct eta2 = free(b3)*eta1 + zeta(free(ps2))
cov xi1 xi1 = free(p11)
"""

TEMPLATES = {
    "one_factor": ONE_FACTOR,
    "linear_two_factor": LINEAR_TWO_FACTOR,
    "quadratic_mini": QUADRATIC_MINI,
    "chain": CHAIN_MODEL,
}


def all_pairings(items: list):
    """Every partition of the items into unordered pairs (empty gives [])."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for i in range(len(rest)):
        pair = (first, rest[i])
        for tail in all_pairings(rest[:i] + rest[i + 1 :]):
            yield [pair] + tail


def pairing_expectation(powers, cov) -> tuple[Polynomial, int]:
    """Brute-force Gaussian moment: expand the monomial into a flat list and
    sum covariance products over every perfect pairing.  Returns the
    polynomial and the number of pairings."""
    flat = []
    for symbol, exponent in powers:
        flat.extend([symbol] * exponent)
    if len(flat) % 2 == 1:
        return Polynomial.zero(), 0
    total = Polynomial.zero()
    count = 0
    for pairing in all_pairings(flat):
        count += 1
        term = Polynomial.one()
        for a, b in pairing:
            term = term * cov(a, b)
        total = total + term
    return total, count


def random_true_values(space, rng: np.random.Generator) -> dict[str, float]:
    """Plausible random parameter values: variances away from the floor,
    moderate loadings and structural coefficients."""
    values = {}
    bounded = space.lower_bounds > -np.inf
    for idx, sym in enumerate(space.symbols):
        if bounded[idx]:
            values[sym.name] = float(rng.uniform(0.3, 1.5))
        elif sym.kind in ("loading-x", "loading-y"):
            values[sym.name] = float(rng.uniform(0.5, 1.5))
        elif sym.kind == "xi-cov":
            values[sym.name] = float(rng.uniform(-0.3, 0.3))
        else:
            values[sym.name] = float(rng.uniform(-0.8, 0.8))
    return values


def finite_difference_gradient(value, theta: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    out = np.empty_like(theta)
    for i in range(len(theta)):
        h = rel_step * max(1.0, abs(theta[i]))
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        out[i] = (value(up) - value(down)) / (2.0 * h)
    return out


def simulate_model(model, assignment, n, rng):
    """Draw a sample from an arbitrary parsed model by evaluating its lowered
    manifest polynomials on Gaussian input draws.  Independent of the moment
    engine's expectation machinery, so the two can cross-validate."""
    from sempoly.empirical import Dataset
    from sempoly.model import DELTA, EPSILON, XI, ZETA, RvSymbol, lower_manifest

    k = model.k
    phi = np.empty((k, k))
    for i in range(k):
        for j in range(k):
            lo, hi = min(i, j), max(i, j)
            phi[i, j] = model.phi_entry(lo, hi).as_polynomial().evaluate(assignment)
    draws = {}
    xi = rng.standard_normal((n, k)) @ np.linalg.cholesky(phi).T
    for i in range(k):
        draws[RvSymbol(XI, i + 1)] = xi[:, i]
    for group, entries in ((DELTA, model.theta_delta), (EPSILON, model.theta_epsilon), (ZETA, model.psi)):
        for i, entry in enumerate(entries):
            sd = np.sqrt(entry.as_polynomial().evaluate(assignment))
            draws[RvSymbol(group, i + 1)] = sd * rng.standard_normal(n)
    columns = []
    for poly in lower_manifest(model):
        column = np.zeros(n)
        for mono, coeff in poly.terms.items():
            term = np.full(n, coeff.evaluate(assignment))
            for rv, exponent in mono:
                term *= draws[rv] ** exponent
            column += term
        columns.append(column)
    return Dataset(values=np.column_stack(columns), names=model.manifest_names)
