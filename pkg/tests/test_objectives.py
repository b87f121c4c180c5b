import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from byzopt.objectives import (
    AverageObjective,
    LogisticObjective,
    NormObjective,
    ObjectiveOracle,
    OptimizationError,
    QuadraticObjective,
    UnboundedSublevelSet,
    clip_gradient,
    local_optimize,
    random_quadratic,
    sublevel_radius,
)

finite = st.floats(-50, 50, allow_nan=False)


def separable_logistic(m=20, reg=1.0, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(m) % 2
    feats = rng.standard_normal((m, 2)) + np.where(labels[:, None] == 1, 3.0, -3.0)
    return LogisticObjective(feats, labels, reg)


def central_difference(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class FlatValley(ObjectiveOracle):
    """x0^2, constant along x1: the sublevel sets are unbounded."""

    dimension = 2

    def value(self, x):
        return float(x[0] ** 2)

    def subgradient(self, x):
        return np.array([2 * x[0], 0.0])


class Budgeted(ObjectiveOracle):
    """A smooth convex bowl solved by gradient descent with no Hessian."""

    dimension = 2

    def value(self, x):
        return float(np.sum(np.asarray(x) ** 4) + np.sum((np.asarray(x) - 1.0) ** 2))

    def subgradient(self, x):
        x = np.asarray(x)
        return 4 * x ** 3 + 2 * (x - 1.0)


# ---------------------------------------------------------------- quadratic

def test_quadratic_minimizer_solves_linear_system():
    q = QuadraticObjective(np.eye(2), np.array([-1.0, -2.0]))
    np.testing.assert_allclose(local_optimize(q), [1.0, 2.0])


def test_shifted_bowl_minimizer():
    # (x1 + 1)^2 + (x2 - 1)^2 = 1/2 x^T (2I) x + (2, -2)^T x + 2
    q = QuadraticObjective(2 * np.eye(2), np.array([2.0, -2.0]), 2.0)
    np.testing.assert_allclose(local_optimize(q), [-1.0, 1.0])
    assert q.value([-1.0, 1.0]) == pytest.approx(0.0)


def test_minimizer_is_not_minus_q_transpose_b():
    q = QuadraticObjective(np.diag([2.0, 4.0]), np.array([1.0, 1.0]))
    x = local_optimize(q)
    np.testing.assert_allclose(q.subgradient(x), 0.0, atol=1e-12)
    assert not np.allclose(x, -q.Q.T @ q.b)


def test_quadratic_validation():
    with pytest.raises(ValueError, match="symmetric"):
        QuadraticObjective(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(ValueError, match="positive definite"):
        QuadraticObjective(np.diag([1.0, 0.0]), np.zeros(2))


def test_random_quadratic_is_positive_definite(rng):
    for _ in range(20):
        q = random_quadratic(3, rng)
        assert q.lambda_min >= 0.1 - 1e-12


# ---------------------------------------------------------------- sublevel radius

@pytest.mark.parametrize(
    "Q, eps, expected",
    [(np.eye(2), 0.5, 1.0), (np.diag([1.0, 4.0]), 2.0, 2.0), (2 * np.eye(2), 2.0, math.sqrt(2))],
)
def test_quadratic_sublevel_radius(Q, eps, expected):
    assert sublevel_radius(QuadraticObjective(Q, np.zeros(2)), eps) == pytest.approx(expected)


def test_quadratic_radius_against_dense_boundary():
    q = QuadraticObjective(np.diag([1.0, 4.0]), np.zeros(2))
    t = np.linspace(0, 2 * np.pi, 2000)
    # boundary of 1/2 (x^2 + 4 y^2) = 2
    pts = np.stack([2 * np.cos(t), np.sin(t)], axis=1)
    assert np.linalg.norm(pts, axis=1).max() == pytest.approx(sublevel_radius(q, 2.0), rel=1e-5)


def test_generic_radius_sound_for_logistic(rng):
    f = separable_logistic(reg=0.5)
    xs = local_optimize(f)
    eps = 0.3
    delta = sublevel_radius(f, eps, xs)
    level = f.value(xs) + eps
    # rejection-sample 1000 points of the sublevel set from a covering box
    box = 1.5 * delta
    found = 0
    while found < 1000:
        pts = xs + rng.uniform(-box, box, size=(4000, 3))
        inside = pts[f.values(pts) <= level]
        found += len(inside)
        assert np.all(np.linalg.norm(inside - xs, axis=1) <= delta)


def test_generic_radius_close_to_closed_form():
    """Bisection on a quadratic that hides its closed form."""
    q = QuadraticObjective(np.array([[3.0, 1.0], [1.0, 2.0]]), np.array([0.5, -1.0]))

    class Hidden(ObjectiveOracle):
        dimension = 2
        value = staticmethod(q.value)
        values = staticmethod(q.values)
        subgradient = staticmethod(q.subgradient)
        hessian = staticmethod(q.hessian)

    exact = q.sublevel_radius_exact(0.7)
    got = sublevel_radius(Hidden(), 0.7, q.minimizer())
    assert exact <= got <= 1.1 * exact * (1 + 1e-9)


def test_unbounded_sublevel_set_detected():
    with pytest.raises(UnboundedSublevelSet):
        sublevel_radius(FlatValley(), 1.0, np.zeros(2))


def test_norm_objective_radius():
    assert sublevel_radius(NormObjective(np.zeros(3), 2.0), 1.0) == 0.5


# ---------------------------------------------------------------- logistic

def test_logistic_first_order_optimality():
    f = separable_logistic(reg=1.0)
    x = local_optimize(f, tolerance=1e-8)
    assert np.linalg.norm(f.subgradient(x)) <= 1e-8 * f.reg


def test_logistic_rejects_bad_labels():
    with pytest.raises(ValueError, match="labels"):
        LogisticObjective(np.zeros((2, 2)), np.array([0, 2]), 1.0)


def test_logistic_scale_replicates_pooled_loss():
    f1 = separable_logistic(reg=1.0)
    f3 = LogisticObjective(f1.features, f1.labels, 1.0, scale=3.0)
    x = np.array([0.3, -0.2, 0.1])
    unreg = f1.value(x) - 0.5 * x @ x
    assert f3.value(x) == pytest.approx(3 * unreg + 0.5 * x @ x)


def test_gradient_descent_path_without_hessian():
    f = Budgeted()
    x = local_optimize(f, tolerance=1e-10)
    # f changes by ~|g|^2 per step, so progress stalls near |g| ~ 1e-8 |f|
    assert np.linalg.norm(f.subgradient(x)) <= 1e-8 * max(1.0, abs(f.value(x)))


def test_iteration_budget_error_carries_iterate():
    with pytest.raises(OptimizationError) as info:
        local_optimize(Budgeted(), tolerance=1e-12, max_iter=2)
    assert info.value.last_iterate is not None


def test_average_of_quadratics_closed_form():
    a = QuadraticObjective(2 * np.eye(1), np.array([-2.0]), 1.0)  # (x - 1)^2
    b = QuadraticObjective(2 * np.eye(1), np.array([2.0]), 1.0)  # (x + 1)^2
    avg = AverageObjective([a, b])
    np.testing.assert_allclose(avg.minimizer(), [0.0], atol=1e-15)
    assert avg.value([0.0]) == pytest.approx(1.0)


# ---------------------------------------------------------------- gradients and convexity

def test_gradients_match_finite_differences(rng):
    quad = random_quadratic(3, rng)
    logi = separable_logistic(m=30, reg=0.1)
    for f in (quad, logi):
        for _ in range(100):
            x = rng.uniform(-3, 3, size=f.dimension)
            g = f.subgradient(x)
            fd = central_difference(f.value, x)
            assert np.linalg.norm(g - fd) <= 1e-4 * max(1.0, np.linalg.norm(g))


@settings(max_examples=100, deadline=None)
@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite), st.floats(0, 1))
def test_logistic_convex_and_subgradient_inequality(x, y, t):
    f = separable_logistic(m=12, reg=0.2)
    fx, fy = f.value(x), f.value(y)
    scale = 1e-9 * max(1.0, abs(fx), abs(fy))
    assert f.value(t * x + (1 - t) * y) <= t * fx + (1 - t) * fy + scale
    assert fy >= fx + f.subgradient(x) @ (y - x) - scale


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), arrays(float, 2, elements=finite))
def test_quadratic_gradient_angle(seed, x):
    """The gradient makes an angle with x - x* whose cosine is at least 1/kappa."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2)) + 0.5 * np.eye(2)
    if abs(np.linalg.det(A)) < 1e-3:
        return
    q = QuadraticObjective(A.T @ A, rng.standard_normal(2))
    xs = q.minimizer()
    v = x - xs
    if np.linalg.norm(v) < 1e-6:
        return
    g = q.subgradient(x)
    kappa = (np.linalg.norm(A, 2) * np.linalg.norm(np.linalg.inv(A), 2)) ** 2
    cos = g @ v / (np.linalg.norm(g) * np.linalg.norm(v))
    assert cos >= 1 / kappa - 1e-9


# ---------------------------------------------------------------- clipping

def test_clip_examples():
    np.testing.assert_array_equal(clip_gradient([3.0, 4.0], 10.0), [3.0, 4.0])
    np.testing.assert_allclose(clip_gradient([3.0, 4.0], 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(clip_gradient([0.0, 0.0], 1.0), [0.0, 0.0])


@given(arrays(float, 4, elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
def test_clip_bounds_norm_and_keeps_direction(g, L):
    out = clip_gradient(g, L)
    assert np.linalg.norm(out) <= L * (1 + 1e-12)
    scale = np.linalg.norm(out) / np.linalg.norm(g) if np.linalg.norm(g) else 0.0
    np.testing.assert_allclose(out, scale * g, atol=1e-9 * max(1.0, np.abs(g).max()))
