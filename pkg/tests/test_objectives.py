import itertools

import numpy as np
import pytest

from sempoly.empirical import (
    EmpiricalMoments,
    browne_weight,
    center,
    empirical_moments,
    identity_weight,
    normal_theory_weight,
)
from sempoly.model import free_parameters, parse_model
from sempoly.moments import MomentEngine, MomentTensor, canonical_tuples
from sempoly.objectives import build_gls, build_uls, build_uls_k, build_wls
from sempoly.simulate import generate_ganzach, model_source, true_theta

from helpers import (
    ONE_FACTOR,
    TEMPLATES,
    finite_difference_gradient,
    random_true_values,
)


def implied_empirical(engine, assignment, orders, n=1000) -> EmpiricalMoments:
    """Empirical moments equal to the implied moments at the assignment."""
    return EmpiricalMoments(
        tensors={k: engine.cov_tensor(k).evaluate(assignment) for k in orders},
        n=n,
    )


SCALAR_MODEL = """
latent exo xi1
manifest x x1
measure x1 = 1 * xi1 + err(0.0)
cov xi1 xi1 = free(phi)
"""


def scalar_objective(kind, s_value, order=2):
    """One manifest variable with var = phi: residual is (phi - s)."""
    model = parse_model(SCALAR_MODEL)
    engine = MomentEngine(model)
    tensors = {2: MomentTensor(2, 1, {(0, 0): s_value})}
    if order >= 3:
        tensors[3] = MomentTensor(3, 1, {(0, 0, 0): 0.0})
    moments = EmpiricalMoments(tensors=tensors, n=100)
    if kind == "uls":
        return build_uls(engine, moments)
    return build_uls_k(engine, moments, order)


def test_zero_residual_gives_zero_value():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    space = free_parameters(engine.model)
    truth = true_theta("ganzach")
    theta = space.vector(truth)
    moments = implied_empirical(engine, truth, (2, 3))
    for objective in (
        build_uls(engine, moments),
        build_uls_k(engine, moments, 3),
        build_gls(engine, moments),
        build_wls(engine, moments, identity_weight(9)),
    ):
        assert abs(objective.value(theta)) < 1e-20


def test_scalar_uls_is_half_squared_residual():
    obj = scalar_objective("uls", s_value=2.0)
    theta = np.array([3.5])  # residual r = 1.5
    assert obj.value(theta) == pytest.approx(0.5 * 1.5**2)
    assert obj.gradient(theta)[0] == pytest.approx(1.5)


def test_scalar_uls3_order_weights():
    obj = scalar_objective("uls3", s_value=2.0, order=3)
    theta = np.array([3.5])
    # order-2 residual r2 = 1.5; order-3 residual r3 = E((x - Ex)^3) - 0 = 0
    assert obj.value(theta) == pytest.approx(0.5 * 1.5**2)
    # shift the order-3 target instead to isolate the 1/4 weight
    model = obj.space  # noqa: F841  (documentation of intent)
    engine = MomentEngine(parse_model(SCALAR_MODEL))
    moments = EmpiricalMoments(
        tensors={
            2: MomentTensor(2, 1, {(0, 0): 2.0}),
            3: MomentTensor(3, 1, {(0, 0, 0): 2.0}),
        },
        n=100,
    )
    obj3 = build_uls_k(engine, moments, 3)
    # implied order-3 central moment of a Gaussian is 0, so r3 = -2
    assert obj3.value(np.array([3.5])) == pytest.approx(0.5 * 1.5**2 + 0.25 * 4.0)


def test_uls_missing_order_raises():
    engine = MomentEngine(parse_model(SCALAR_MODEL))
    moments = EmpiricalMoments(tensors={2: MomentTensor(2, 1, {(0, 0): 1.0})}, n=10)
    with pytest.raises(ValueError, match="order 3"):
        build_uls_k(engine, moments, 3)


def test_full_index_sum_oracle():
    """The canonical-tuple objective with orbit multiplicities equals the
    naive sum over every index tuple."""
    model = parse_model(ONE_FACTOR)
    engine = MomentEngine(model)
    space = free_parameters(model)
    rng = np.random.default_rng(4)
    truth = random_true_values(space, rng)
    data = center(
        generate_ganzach(400, seed=5)
    )  # any data; only its first 3 columns are used
    from sempoly.empirical import Dataset

    data3 = center(Dataset(values=data.values[:, :3].copy(), names=("x1", "x2", "x3")))
    moments = empirical_moments(data3, (2, 3))
    objective = build_uls_k(engine, moments, 3)
    theta = space.vector(truth)
    value = objective.value(theta)

    naive = 0.0
    m = 3
    for order in (2, 3):
        implied = engine.cov_tensor(order).evaluate(truth)
        sample = moments.tensors[order]
        for idx in itertools.product(range(m), repeat=order):
            r = implied.get(idx) - sample.get(idx)
            naive += r * r / 2.0 ** (order - 1)
    assert value == pytest.approx(naive, rel=1e-12)


def test_uls_equals_half_frobenius_norm():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    space = free_parameters(engine.model)
    rng = np.random.default_rng(8)
    theta_map = random_true_values(space, rng)
    theta = space.vector(theta_map)
    data = center(generate_ganzach(500, seed=9))
    moments = empirical_moments(data, (2,))
    objective = build_uls(engine, moments)
    sigma = engine.cov_tensor(2).evaluate(theta_map).as_matrix()
    S = moments.tensors[2].as_matrix()
    assert objective.value(theta) == pytest.approx(
        0.5 * float(np.sum((S - sigma) ** 2)), rel=1e-10
    )


def test_identity_wls_equals_half_vectorized_residual():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    space = free_parameters(engine.model)
    rng = np.random.default_rng(10)
    theta_map = random_true_values(space, rng)
    theta = space.vector(theta_map)
    data = center(generate_ganzach(500, seed=11))
    moments = empirical_moments(data, (2,))
    objective = build_wls(engine, moments, identity_weight(9))
    implied = engine.cov_tensor(2).evaluate(theta_map)
    direct = 0.0
    for t in canonical_tuples(9, 2):
        r = implied.get(t) - moments.tensors[2].get(t)
        direct += r * r
    assert objective.value(theta) == pytest.approx(direct, rel=1e-12, abs=1e-12)


def test_scalar_wls():
    model = parse_model(SCALAR_MODEL)
    engine = MomentEngine(model)
    moments = EmpiricalMoments(tensors={2: MomentTensor(2, 1, {(0, 0): 2.0})}, n=100)
    from sempoly.empirical import WeightMatrix

    w = WeightMatrix(matrix=np.array([[4.0]]), m=1)
    objective = build_wls(engine, moments, w)
    assert objective.value(np.array([3.5])) == pytest.approx(1.5**2 / 4.0)


def test_wls_dimension_mismatch():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    data = center(generate_ganzach(300, seed=1))
    moments = empirical_moments(data, (2,))
    with pytest.raises(ValueError, match="weight"):
        build_wls(engine, moments, identity_weight(5))


def test_gls_is_wls_with_normal_weight():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    space = free_parameters(engine.model)
    data = center(generate_ganzach(800, seed=13))
    moments = empirical_moments(data, (2,))
    gls = build_gls(engine, moments)
    wls = build_wls(engine, moments, normal_theory_weight(moments.tensors[2]))
    theta = space.vector(true_theta("ganzach"))
    assert gls.value(theta) == pytest.approx(wls.value(theta), rel=1e-12)
    assert gls.kind == "gls"


def test_value_invariant_under_declaration_permutation():
    source = model_source("ganzach")
    lines = source.strip().splitlines()
    # move the cov statements before the measures
    covs = [l for l in lines if l.startswith("cov")]
    rest = [l for l in lines if not l.startswith("cov")]
    head = [l for l in rest if l.startswith(("latent", "manifest"))]
    tail = [l for l in rest if not l.startswith(("latent", "manifest"))]
    permuted = "\n".join(head + covs + tail)
    data = center(generate_ganzach(400, seed=3))
    truth = true_theta("ganzach")
    values = []
    for text in (source, permuted):
        engine = MomentEngine(parse_model(text))
        moments = empirical_moments(data, (2,))
        objective = build_uls(engine, moments)
        values.append(objective.value_at(truth))
    assert values[0] == pytest.approx(values[1], rel=1e-12)
    spaces = [
        free_parameters(parse_model(source)).names(),
        free_parameters(parse_model(permuted)).names(),
    ]
    assert set(spaces[0]) == set(spaces[1]) and spaces[0] != spaces[1]


@pytest.mark.parametrize("template", sorted(TEMPLATES))
def test_gradient_matches_finite_differences(template):
    engine = MomentEngine(parse_model(TEMPLATES[template]))
    space = free_parameters(engine.model)
    rng = np.random.default_rng(sorted(TEMPLATES).index(template) + 100)
    data = center(_random_dataset(engine.m, 120, rng))
    moments = empirical_moments(data, (2, 3))
    objectives = [
        build_uls(engine, moments),
        build_uls_k(engine, moments, 3),
        build_gls(engine, moments),
        build_wls(engine, moments, browne_weight(data)),
    ]
    for probe in range(3):
        theta_map = random_true_values(space, rng)
        theta = np.maximum(space.vector(theta_map), space.lower_bounds)
        for objective in objectives:
            grad = objective.gradient(theta)
            fd = finite_difference_gradient(objective.value, theta)
            scale = max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-10)
            assert np.linalg.norm(grad - fd) / scale < 1e-6


def _random_dataset(m, n, rng):
    from sempoly.empirical import Dataset

    return Dataset(values=rng.normal(size=(n, m)), names=tuple(f"c{i}" for i in range(m)))


def test_value_and_gradient_consistent():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    space = free_parameters(engine.model)
    data = center(generate_ganzach(300, seed=21))
    moments = empirical_moments(data, (2, 3))
    objective = build_uls_k(engine, moments, 3)
    theta = space.vector(true_theta("ganzach"))
    v, g = objective.value_and_gradient(theta)
    assert v == pytest.approx(objective.value(theta))
    assert np.allclose(g, objective.gradient(theta))


def test_objective_nonnegative():
    engine = MomentEngine(parse_model(model_source("ganzach")))
    space = free_parameters(engine.model)
    rng = np.random.default_rng(23)
    data = center(generate_ganzach(300, seed=25))
    moments = empirical_moments(data, (2, 3))
    objectives = [
        build_uls(engine, moments),
        build_uls_k(engine, moments, 3),
        build_gls(engine, moments),
        build_wls(engine, moments, browne_weight(data)),
    ]
    for _ in range(10):
        theta = np.maximum(space.vector(random_true_values(space, rng)), space.lower_bounds)
        for objective in objectives:
            assert objective.value(theta) >= 0.0


def test_order_four_objective_zero_residual():
    engine = MomentEngine(parse_model(ONE_FACTOR))
    space = free_parameters(engine.model)
    truth = {"v1": 0.3, "l2": 0.8, "v2": 0.25, "l3": 1.1, "v3": 0.2, "phi": 1.2}
    moments = implied_empirical(engine, truth, (2, 3, 4))
    objective = build_uls_k(engine, moments, 4)
    theta = space.vector(truth)
    assert abs(objective.value(theta)) < 1e-18
    # order weights are 1/2, 1/4, 1/8 over the three tensor blocks
    weights = {order: 1.0 / 2.0 ** (order - 1) for order in (2, 3, 4)}
    from sempoly.moments import tuple_multiplicity

    for (order, t), w in zip(objective._compiled.entries, objective._weights_diag):
        assert w == pytest.approx(tuple_multiplicity(t) * weights[order])
