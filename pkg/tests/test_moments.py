import itertools
from fractions import Fraction

import numpy as np
import pytest

from sempoly.model import DELTA, XI, ZETA, RvSymbol, parse_model
from sempoly.moments import (
    MomentEngine,
    canonical_tuples,
    double_factorial,
    gaussian_expectation,
    tuple_multiplicity,
)
from sempoly.polynomial import ParamSymbol, Polynomial
from sempoly.simulate import model_source, true_theta

from helpers import ONE_FACTOR, pairing_expectation


def sym(name: str) -> ParamSymbol:
    return ParamSymbol(name, "xi-cov")


def make_cov(names):
    table = {}
    for a in names:
        for b in names:
            key = tuple(sorted((a, b)))
            table.setdefault(key, Polynomial.variable(sym("c_" + "_".join(key))))
    return lambda a, b: table[tuple(sorted((a, b)))]


def test_pairing_counts_double_factorial():
    for n in range(1, 5):
        symbols = [(f"s{i}", 1) for i in range(2 * n)]
        _, count = pairing_expectation(symbols, make_cov([f"s{i}" for i in range(2 * n)]))
        assert count == double_factorial(2 * n - 1)
    assert [double_factorial(2 * n - 1) for n in range(1, 5)] == [1, 3, 15, 105]


def test_matches_enumeration_oracle_up_to_degree_eight():
    names = ["s0", "s1", "s2", "s3"]
    cov = make_cov(names)
    checked = 0
    for degree in range(0, 9):
        for exponents in itertools.combinations_with_replacement(range(4), degree):
            powers = [(names[i], exponents.count(i)) for i in set(exponents)]
            powers.sort()
            expected, _ = pairing_expectation(powers, cov)
            got = gaussian_expectation(powers, cov)
            assert got == expected
            checked += 1
    assert checked > 400


def test_odd_degree_is_exactly_zero():
    cov = make_cov(["s0", "s1"])
    assert gaussian_expectation([("s0", 3), ("s1", 2)], cov) == Polynomial.zero()
    assert gaussian_expectation([("s0", 1)], cov) == Polynomial.zero()


def test_small_closed_forms():
    phi11 = Polynomial.variable(sym("phi11"))
    phi12 = Polynomial.variable(sym("phi12"))
    phi22 = Polynomial.variable(sym("phi22"))
    table = {("x1", "x1"): phi11, ("x1", "x2"): phi12, ("x2", "x2"): phi22}
    cov = lambda a, b: table[tuple(sorted((a, b)))]
    assert gaussian_expectation([("x1", 2)], cov) == phi11
    assert gaussian_expectation([("x1", 4)], cov) == 3 * phi11 * phi11
    expected = phi11 * phi22 + 2 * phi12 * phi12
    assert gaussian_expectation([("x1", 2), ("x2", 2)], cov) == expected


def test_mixed_group_contract_violation():
    cov = lambda a, b: Polynomial.one()
    with pytest.raises(ValueError, match="independence group"):
        gaussian_expectation([(RvSymbol(XI, 1), 1), (RvSymbol(DELTA, 1), 1)], cov)
    with pytest.raises(ValueError, match="independence group"):
        gaussian_expectation([(RvSymbol(DELTA, 1), 1), (RvSymbol(DELTA, 2), 1)], cov)


GANZACH = parse_model(model_source("ganzach"))
ENGINE = MomentEngine(GANZACH)
TRUTH = true_theta("ganzach")


def named(model, name):
    for s in model.parameters:
        if s.name == name:
            return s
    raise KeyError(name)


def test_mixed_expectation_independence_zeros():
    assert ENGINE.mixed_expectation(((RvSymbol(XI, 1), 1), (RvSymbol(DELTA, 1), 1))) == Polynomial.zero()
    theta_d1 = Polynomial.variable(named(GANZACH, "var_x1"))
    assert ENGINE.mixed_expectation(((RvSymbol(DELTA, 1), 2),)) == theta_d1


def test_mixed_expectation_factorizes():
    phi11 = Polynomial.variable(named(GANZACH, "phi11"))
    psi = Polynomial.variable(named(GANZACH, "psi"))
    got = ENGINE.mixed_expectation(((RvSymbol(XI, 1), 2), (RvSymbol(ZETA, 1), 2)))
    assert got == phi11 * psi
    assert ENGINE.mixed_expectation(((RvSymbol(ZETA, 1), 4),)) == 3 * psi * psi


def test_two_indicator_raw_moments():
    model = parse_model(ONE_FACTOR)
    engine = MomentEngine(model)
    l2 = Polynomial.variable(named(model, "l2"))
    phi = Polynomial.variable(named(model, "phi"))
    v1 = Polynomial.variable(named(model, "v1"))
    assert engine.raw_moment((0, 1)) == l2 * phi
    assert engine.raw_moment((0, 0)) == phi + v1


def test_ganzach_mean_of_quadratic_form():
    expected = (
        Polynomial.variable(named(GANZACH, "omega11")) * Polynomial.variable(named(GANZACH, "phi11"))
        + Polynomial.variable(named(GANZACH, "omega12")) * Polynomial.variable(named(GANZACH, "phi12"))
        + Polynomial.variable(named(GANZACH, "omega22")) * Polynomial.variable(named(GANZACH, "phi22"))
    )
    got = ENGINE.raw_moment((6,))
    assert got == expected
    assert got.evaluate(TRUTH) == pytest.approx(0.98)


def test_ganzach_cross_moment_linear_part_only():
    expected = (
        Polynomial.variable(named(GANZACH, "gamma1")) * Polynomial.variable(named(GANZACH, "phi11"))
        + Polynomial.variable(named(GANZACH, "gamma2")) * Polynomial.variable(named(GANZACH, "phi12"))
    )
    assert ENGINE.raw_moment((6, 0)) == expected


def test_cov_tensor_x_block_matches_measurement_structure():
    tensor = ENGINE.cov_tensor(2)
    lam2 = Polynomial.variable(named(GANZACH, "lam_x2"))
    phi11 = Polynomial.variable(named(GANZACH, "phi11"))
    v1 = Polynomial.variable(named(GANZACH, "var_x1"))
    assert tensor.get((0, 1)) == lam2 * phi11
    assert tensor.get((0, 0)) == phi11 + v1


def test_cov_tensor_y_variance_contains_error_terms():
    entry = ENGINE.cov_tensor(2).get((6, 6))
    psi = named(GANZACH, "psi")
    eps1 = named(GANZACH, "var_y1")
    from sempoly.polynomial import Monomial

    assert entry.terms.get(Monomial.of(psi)) == Fraction(1)
    assert entry.terms.get(Monomial.of(eps1)) == Fraction(1)


def test_order3_tensor_of_linear_model_is_zero():
    from helpers import LINEAR_TWO_FACTOR

    engine = MomentEngine(parse_model(LINEAR_TWO_FACTOR))
    tensor = engine.cov_tensor(3)
    assert all(v.is_zero for _, v in tensor.canonical_items())


def test_implied_covariance_positive_semidefinite_at_truth():
    matrix = ENGINE.implied_covariance(TRUTH)
    assert np.allclose(matrix, matrix.T)
    assert np.linalg.eigvalsh(matrix).min() > 0


def test_memoization_transparency():
    fresh = MomentEngine(GANZACH)
    warmed = MomentEngine(GANZACH)
    warmed.cov_tensor(2)
    warmed.cov_tensor(3)
    assert fresh.cov_tensor(3) == warmed.cov_tensor(3)


def test_parallel_and_serial_tensors_identical():
    serial = MomentEngine(GANZACH).cov_tensor(3)
    parallel = MomentEngine(GANZACH).cov_tensor(3, parallel=True)
    assert serial == parallel


def test_tensor_symmetric_lookup_and_order():
    tensor = ENGINE.cov_tensor(2)
    assert tensor.get((3, 1)) == tensor.get((1, 3))
    tuples = [t for t, _ in tensor.canonical_items()]
    assert tuples == list(canonical_tuples(9, 2))
    with pytest.raises(KeyError):
        tensor.get((0, 99))


def test_tensor_order_one_rejected():
    with pytest.raises(ValueError):
        ENGINE.cov_tensor(1)


def test_tuple_multiplicity():
    assert tuple_multiplicity((0, 0)) == 1
    assert tuple_multiplicity((0, 1)) == 2
    assert tuple_multiplicity((0, 1, 2)) == 6
    assert tuple_multiplicity((0, 0, 1)) == 3


def test_tensor_render_and_dict():
    tensor = MomentEngine(parse_model(ONE_FACTOR)).cov_tensor(2)
    text = tensor.render(("x1", "x2", "x3"))
    assert text.splitlines()[0].startswith("(x1,x1) = ")
    payload = tensor.to_dict()
    assert payload["order"] == 2 and payload["dimension"] == 3
    assert "1,1" in payload["entries"]


def test_monte_carlo_consistency_quick():
    # engine vs generator on a 10^5 sample, 5 standard errors
    from sempoly.empirical import center, sample_cov_tensor
    from sempoly.simulate import generate_ganzach

    data = center(generate_ganzach(100_000, seed=99))
    implied2 = ENGINE.cov_tensor(2).evaluate(TRUTH)
    implied3 = ENGINE.cov_tensor(3).evaluate(TRUTH)
    sample2 = sample_cov_tensor(data, 2)
    sample3 = sample_cov_tensor(data, 3)
    n = data.n
    for implied, sample, order in ((implied2, sample2, 2), (implied3, sample3, 3)):
        for t, value in implied.canonical_items():
            prod = data.values[:, t[0]].copy()
            for i in t[1:]:
                prod *= data.values[:, i]
            se = prod.std() / np.sqrt(n)
            assert abs(sample.get(t) - value) < 5 * se + 1e-12, (order, t)


CROSS_LOADING = """
latent exo xi1 xi2
manifest x x1 x2 x3
measure x1 = 1 * xi1 + err(free(v1))
measure x2 = free(a) * xi1 + free(b) * xi2 + err(free(v2))
measure x3 = 1 * xi2 + err(free(v3))
cov xi1 xi1 = free(p11)
cov xi1 xi2 = free(p12)
cov xi2 xi2 = free(p22)
"""


def test_cross_loading_covariance():
    model = parse_model(CROSS_LOADING)
    engine = MomentEngine(model)
    a = Polynomial.variable(named(model, "a"))
    b = Polynomial.variable(named(model, "b"))
    p11 = Polynomial.variable(named(model, "p11"))
    p12 = Polynomial.variable(named(model, "p12"))
    assert engine.cov_tensor(2).get((0, 1)) == a * p11 + b * p12


def test_order_four_tensor_of_one_factor_model():
    model = parse_model(ONE_FACTOR)
    engine = MomentEngine(model)
    phi = Polynomial.variable(named(model, "phi"))
    v1 = Polynomial.variable(named(model, "v1"))
    l2 = Polynomial.variable(named(model, "l2"))
    tensor = engine.cov_tensor(4)
    var_x1 = phi + v1
    # fourth moments of a jointly Gaussian vector, e.g. E(a^4) = 3 var(a)^2
    # and E(a^3 b) = 3 var(a) cov(a, b)
    assert tensor.get((0, 0, 0, 0)) == 3 * var_x1 * var_x1
    assert tensor.get((0, 0, 0, 1)) == 3 * var_x1 * (l2 * phi)


@pytest.mark.parametrize(
    "template,values",
    [
        (
            "quadratic_mini",
            {
                "vx1": 0.3, "l2": 0.8, "vx2": 0.4, "vx3": 0.35, "l4": 1.2, "vx4": 0.3,
                "vy1": 0.25, "m2": 0.9, "vy2": 0.3,
                "g1": 0.4, "g2": -0.5, "w11": 0.3, "w12": -0.4, "ps": 0.5,
                "p11": 1.1, "p12": 0.25, "p22": 0.9,
            },
        ),
        (
            "chain",
            {
                "vx1": 0.3, "l2": 0.7, "vx2": 0.4,
                "vy1": 0.25, "m2": 1.1, "vy2": 0.3, "vy3": 0.35, "m4": 0.8, "vy4": 0.3,
                "b1": 0.5, "b2": 0.3, "ps1": 0.4, "b3": 0.6, "ps2": 0.5,
                "p11": 1.2,
            },
        ),
    ],
)
def test_engine_matches_generic_sampler(template, values):
    """The symbolic engine and a direct sampler built from the lowered
    polynomials agree on order-2 and order-3 moments for models beyond the
    shipped fixtures (quadratic terms, endogenous substitution)."""
    from sempoly.empirical import center, sample_cov_tensor
    from helpers import TEMPLATES, simulate_model

    model = parse_model(TEMPLATES[template])
    engine = MomentEngine(model)
    rng = np.random.default_rng(2718)
    data = center(simulate_model(model, values, 150_000, rng))
    for order in (2, 3):
        implied = engine.cov_tensor(order).evaluate(values)
        sample = sample_cov_tensor(data, order)
        for t, value in implied.canonical_items():
            prod = data.values[:, t[0]].copy()
            for i in t[1:]:
                prod *= data.values[:, i]
            se = prod.std() / np.sqrt(data.n)
            assert abs(sample.get(t) - value) < 5 * se + 1e-12, (template, order, t)
