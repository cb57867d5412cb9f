import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efplab.errors import ConfigError, DomainError
from efplab.model import (
    GaussianKernels,
    LinearFeatures,
    LogisticLoss,
    NegLogLoss,
    Problem,
    SquaredLoss,
    TanhNeurons,
    check_ensemble,
    f0_value,
    loss_conjugate,
    loss_eval,
    predictor_value,
)


def grid_sup(loss, g, lo=-10.0, hi=10.0, step=1e-4):
    z = np.arange(lo, hi + step / 2, step)
    return float(np.max(z * g - loss.value(z)))


def test_loss_eval_examples():
    assert np.allclose(np.ravel(loss_eval(SquaredLoss([1.0]), 3.0)), (2.0, 2.0, 1.0))
    assert np.allclose(np.ravel(loss_eval(SquaredLoss([0.0]), 0.0)), (0.0, 0.0, 1.0))
    v, d1, d2 = loss_eval(LogisticLoss([1.0]), 0.0)
    assert v == pytest.approx(math.log(2.0), abs=1e-12)
    assert d1 == pytest.approx(-0.5)
    assert d2 == pytest.approx(0.25)


def test_conjugate_examples():
    assert loss_conjugate(SquaredLoss([1.0]), 2.0) == pytest.approx(4.0)
    assert grid_sup(SquaredLoss([1.0]), 2.0) == pytest.approx(4.0, abs=1e-6)
    assert loss_conjugate(SquaredLoss([0.0]), 0.0) == pytest.approx(0.0)
    assert loss_conjugate(NegLogLoss(), -1.0) == pytest.approx(-1.0)
    z = np.arange(1e-4, 10, 1e-4)
    assert np.max(-z + np.log(z)) == pytest.approx(-1.0, abs=1e-6)


def test_neglog_domain_errors():
    loss = NegLogLoss()
    with pytest.raises(DomainError):
        loss.value(0.0)
    with pytest.raises(DomainError):
        loss.value(-1.0)
    with pytest.raises(DomainError):
        loss.conjugate(0.0)


def test_logistic_conjugate_domain():
    loss = LogisticLoss([1.0])
    with pytest.raises(DomainError):
        loss.conjugate(0.5)
    assert loss.conjugate(0.0) == pytest.approx(0.0)
    assert loss.conjugate(-1.0) == pytest.approx(0.0)


def test_neglog_floor_only_clips_derivative():
    loss = NegLogLoss(1, floor=1e-3)
    assert loss.deriv(1e-6)[0] == pytest.approx(-1e3)
    assert loss.value(1e-6)[0] == pytest.approx(-math.log(1e-6))


LOSSES = {
    "squared": (SquaredLoss([0.7]), lambda r: r.uniform(-5, 5)),
    "squared_w2": (SquaredLoss([-0.3], weight=2.0), lambda r: r.uniform(-5, 5)),
    "logistic+": (LogisticLoss([1.0]), lambda r: r.uniform(-8, 8)),
    "logistic-": (LogisticLoss([-1.0]), lambda r: r.uniform(-8, 8)),
    "neglog": (NegLogLoss(), lambda r: r.uniform(0.05, 5)),
}


@pytest.mark.parametrize("name", list(LOSSES))
def test_fenchel_young_equality(name):
    loss, draw = LOSSES[name]
    rng = np.random.default_rng(1)
    z = np.array([draw(rng) for _ in range(1000)])
    g = loss.deriv(z)
    assert np.max(np.abs(loss.value(z) + loss.conjugate(g) - z * g)) <= 1e-10


@pytest.mark.parametrize("name", list(LOSSES))
def test_convexity_sampling(name):
    loss, draw = LOSSES[name]
    rng = np.random.default_rng(2)
    z1 = np.array([draw(rng) for _ in range(1000)])
    z2 = np.array([draw(rng) for _ in range(1000)])
    assert np.all(loss.value(0.5 * (z1 + z2)) <= 0.5 * (loss.value(z1) + loss.value(z2)) + 1e-12)
    assert np.all(loss.second_deriv(z1) >= 0)


@pytest.mark.parametrize("name", ["squared", "logistic+", "logistic-", "neglog"])
def test_conjugate_matches_grid_sup(name):
    loss, draw = LOSSES[name]
    rng = np.random.default_rng(3)
    for _ in range(100):
        # a g in the conjugate domain whose maximizer lies inside the grid
        g = float(loss.deriv(draw(rng))[0])
        lo = 1e-4 if name == "neglog" else -10.0
        # grid error is at most |g| * step / 2 plus curvature terms
        assert grid_sup(loss, g, lo=lo) == pytest.approx(float(loss.conjugate(g)[0]), abs=1e-6)


@given(z=st.floats(-50, 50), y=st.floats(-5, 5))
@settings(max_examples=200, deadline=None)
def test_squared_fenchel_young_inequality(z, y):
    loss = SquaredLoss([y])
    for g in (-3.0, 0.0, 1.5):
        assert loss.value(z)[0] + loss.conjugate(g)[0] >= z * g - 1e-9


def fd_jacobian(fmap, theta, eps=1e-6):
    cols = []
    for e in np.eye(theta.size):
        hi = fmap.values((theta + eps * e)[None])[0]
        lo = fmap.values((theta - eps * e)[None])[0]
        cols.append((hi - lo) / (2 * eps))
    return np.stack(cols, axis=1)


@pytest.mark.parametrize(
    "fmap",
    [
        TanhNeurons(np.random.default_rng(0).standard_normal((6, 3))),
        LinearFeatures(np.random.default_rng(1).standard_normal((4, 2))),
        GaussianKernels(np.random.default_rng(2).standard_normal((5, 2)), 0.7),
    ],
    ids=["tanh", "linear", "kernel"],
)
def test_feature_gradients_match_finite_differences(fmap):
    rng = np.random.default_rng(4)
    for _ in range(100):
        theta = rng.standard_normal(fmap.d)
        J = fmap.jacobian(theta)
        fd = fd_jacobian(fmap, theta)
        assert np.linalg.norm(J - fd) <= 1e-5 * max(np.linalg.norm(J), 1e-8)
        w = rng.standard_normal(fmap.n)
        assert np.allclose(fmap.weighted_grad(theta[None], w)[0], w @ J, atol=1e-12)


def test_weighted_grad_default_jacobian_path():
    fmap = GaussianKernels(np.array([[0.0], [1.0]]), 0.5)
    theta = np.array([0.3])
    fd = fd_jacobian(fmap, theta)
    assert np.allclose(fmap.jacobian(theta), fd, rtol=1e-6)


def test_kernel_bounds():
    fmap = GaussianKernels(np.zeros((1, 2)), 0.5)
    X = np.random.default_rng(0).standard_normal((500, 2))
    vals = fmap.values(X)
    assert np.all(vals >= 0) and np.all(vals <= fmap.sup_bound)
    assert fmap.values(np.zeros((1, 2)))[0, 0] == pytest.approx(1 / (2 * np.pi * 0.25))


def test_f0_examples():
    assert f0_value(Problem(SquaredLoss([1.0]), LinearFeatures([[1.0]]), 0.1, 0.1), [1.0]) == 0.0
    p2 = Problem(SquaredLoss([0.0, 2.0]), LinearFeatures([[1.0], [1.0]]), 0.1, 0.1)
    assert f0_value(p2, [0.0, 2.0]) == 0.0
    assert f0_value(p2, [1.0, 1.0]) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        f0_value(p2, [1.0])


def test_f0_propagates_domain_error():
    p = Problem(NegLogLoss(1), GaussianKernels([[0.0]], 1.0), 0.1, 0.1)
    with pytest.raises(DomainError):
        f0_value(p, [-1.0])


def test_predictor_value_examples():
    x = np.array([[0.3, -1.2]])
    assert predictor_value(np.zeros((1, 2)), TanhNeurons(x))[0] == 0.0
    assert predictor_value(np.array([[1.0], [3.0]]), LinearFeatures([[1.0]]))[0] == 2.0
    X = np.random.default_rng(5).standard_normal((100, 2))
    brute = sum(math.tanh(float(X[r] @ x[0])) for r in range(100)) / 100
    assert predictor_value(X, TanhNeurons(x))[0] == pytest.approx(brute, abs=1e-14)


def test_problem_validation():
    with pytest.raises(ConfigError):
        Problem(SquaredLoss([0.0, 1.0]), LinearFeatures([[1.0]]), 0.1, 0.1)
    with pytest.raises(ConfigError):
        Problem(SquaredLoss([0.0]), LinearFeatures([[1.0]]), 0.0, 0.1)
    with pytest.raises(ConfigError):
        Problem(SquaredLoss([0.0]), LinearFeatures([[1.0]]), 0.1, -1.0)
    with pytest.raises(ConfigError):
        LogisticLoss([0.5])
    with pytest.raises(ConfigError):
        GaussianKernels([[0.0]], 0.0)


def test_check_ensemble():
    assert check_ensemble([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(ConfigError):
        check_ensemble(np.array([[np.nan]]))
    with pytest.raises(ConfigError):
        check_ensemble(np.zeros((0, 2)))
