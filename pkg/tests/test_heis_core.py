import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdlab.heis_core import (DimensionError, GroupPoint, ScalarField, dilate, flow_point,
                             group_inv, group_mul, horizontal_derivative, horizontal_gradient,
                             horizontal_lift, horizontality_residual, hsub_laplacian,
                             koranyi_dist, koranyi_norm, HorizontalPath)

import oracles

# magnitudes below 1e-6 are flushed to 0 so squares never underflow
coords = st.floats(-10, 10, allow_nan=False, allow_infinity=False).map(
    lambda v: v if abs(v) >= 1e-6 else 0.0)


def points(n):
    return arrays(np.float64, 2 * n + 1, elements=coords)


def field(n, fn, name=""):
    return ScalarField(n, fn, name=name)


# --- group algebra ------------------------------------------------------------

def test_group_law_hand_example():
    assert np.array_equal(group_mul([1, 0, 0], [0, 1, 0]), [1, 1, -2])


def test_group_point_wrapping():
    a = GroupPoint([1.0, 0.0], 0.0)
    b = GroupPoint([0.0, 1.0], 0.0)
    assert a * b == GroupPoint([1.0, 1.0], -2.0)
    assert group_inv(GroupPoint([1.0, 1.0], -2.0)) == GroupPoint([-1.0, -1.0], 2.0)
    assert GroupPoint.origin(2).n == 2


def test_group_point_rejects_bad_input():
    with pytest.raises(DimensionError):
        GroupPoint([1.0, 2.0, 3.0], 0.0)
    with pytest.raises(ValueError):
        GroupPoint([np.nan, 0.0], 0.0)
    with pytest.raises(DimensionError):
        group_mul([0, 0, 0], [0, 0, 0, 0, 0])
    with pytest.raises(DimensionError):
        koranyi_norm([1.0, 2.0])


@settings(max_examples=200)
@given(st.integers(1, 3).flatmap(lambda n: st.tuples(points(n), points(n))))
def test_group_law_matches_naive_loops(ab):
    a, b = ab
    np.testing.assert_allclose(group_mul(a, b), oracles.naive_mul(a, b), rtol=0, atol=1e-12)


@given(st.integers(1, 3).flatmap(lambda n: st.tuples(points(n), points(n), points(n))))
def test_associativity(abc):
    a, b, c = abc
    lhs = group_mul(group_mul(a, b), c)
    rhs = group_mul(a, group_mul(b, c))
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)


@given(st.integers(1, 3).flatmap(points))
def test_identity_and_inverse(g):
    e = np.zeros_like(g)
    assert np.array_equal(group_mul(e, g), g)
    assert np.array_equal(group_mul(g, e), g)
    assert np.max(np.abs(group_mul(g, group_inv(g)))) <= 1e-12
    assert np.max(np.abs(group_mul(group_inv(g), g))) <= 1e-12


def test_koranyi_norm_values():
    assert koranyi_norm([0, 0, 0]) == 0
    assert koranyi_norm([1, 0, 0]) == 1
    assert koranyi_norm([0, 0, 4]) == pytest.approx(2, abs=1e-15)


@given(st.integers(1, 3).flatmap(points))
def test_koranyi_norm_matches_naive(g):
    assert koranyi_norm(g) == pytest.approx(oracles.naive_norm(g), rel=1e-12, abs=1e-12)


@given(st.integers(1, 3).flatmap(lambda n: st.tuples(points(n), points(n), points(n))))
def test_metric_left_invariance(abc):
    a, b, c = abc
    d0 = koranyi_dist(a, b)
    d1 = koranyi_dist(group_mul(c, a), group_mul(c, b))
    assert abs(d1 - d0) <= 1e-9 * max(1.0, d0)


@given(st.integers(1, 3).flatmap(points))
def test_metric_basics(g):
    assert koranyi_dist(g, g) == 0
    assert koranyi_dist(g, np.zeros_like(g)) == koranyi_norm(g)


@given(st.integers(1, 3).flatmap(points), st.floats(0.01, 100))
def test_homogeneity(g, alpha):
    assert koranyi_norm(dilate(g, alpha)) == pytest.approx(alpha * koranyi_norm(g), rel=1e-12, abs=1e-300)


@given(st.integers(1, 2).flatmap(lambda n: st.tuples(points(n), points(n))), st.floats(0.1, 10))
def test_dilation_is_automorphism(ab, alpha):
    a, b = ab
    lhs = dilate(group_mul(a, b), alpha)
    rhs = group_mul(dilate(a, alpha), dilate(b, alpha))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


# --- horizontal derivatives ---------------------------------------------------

def test_horizontal_derivative_hand_values():
    x1 = field(1, lambda G: G[..., 0])
    t = field(1, lambda G: G[..., -1])
    rng = np.random.default_rng(3)
    for g in rng.uniform(-2, 2, (5, 3)):
        assert horizontal_derivative(x1, g, 0) == pytest.approx(1.0, abs=1e-12)
    assert horizontal_derivative(t, [0, 1, 0], 0) == pytest.approx(2.0, abs=1e-12)
    assert horizontal_derivative(t, [1, 0, 0], 1) == pytest.approx(-2.0, abs=1e-12)


def test_horizontal_gradient_hand_values():
    t = field(1, lambda G: G[..., -1])
    g = np.array([0.3, -1.7, 0.4])
    np.testing.assert_allclose(horizontal_gradient(t, g), [2 * g[1], -2 * g[0]], atol=1e-11)
    x1 = field(2, lambda G: G[..., 0])
    np.testing.assert_allclose(horizontal_gradient(x1, np.ones(5)), [1, 0, 0, 0], atol=1e-12)
    a = 3.5
    ax = field(2, lambda G: a * G[..., 0])
    grads = horizontal_gradient(ax, np.random.default_rng(0).normal(size=(20, 5)))
    np.testing.assert_allclose(np.sum(grads ** 2, axis=-1), a * a, rtol=1e-10)


def test_nonpositive_step_rejected():
    x1 = field(1, lambda G: G[..., 0])
    for step in (0.0, -1e-3):
        with pytest.raises(ValueError):
            horizontal_derivative(x1, [0, 0, 0], 0, step)
        with pytest.raises(ValueError):
            hsub_laplacian(x1, [0, 0, 0], step)


def test_flow_point_generates_left_invariant_fields():
    # right translation by a flow point moves x_j and shears t by 2 y_j h
    g = np.array([0.5, -0.25, 1.0, 2.0, 0.75])
    e = flow_point(2, 2, 0.1)
    np.testing.assert_allclose(group_mul(g, e), [0.5, -0.25, 1.1, 2.0, 0.75 + 2 * 2.0 * 0.1])


def test_analytic_gradient_consistency():
    n = 2

    def grad(G):
        out = np.zeros(G.shape[:-1] + (2 * n,))
        out[..., 0::2] = 2 * G[..., 1:-1:2]
        out[..., 1::2] = -2 * G[..., 0:-1:2]
        return out

    t = ScalarField(n, lambda G: G[..., -1], grad, "t")
    pts = np.random.default_rng(1).uniform(-2, 2, (50, 2 * n + 1))
    assert t.gradient_consistency(pts) < 1e-9
    assert horizontal_derivative(t, pts[0], 3, analytic=True) == pytest.approx(-2 * pts[0][2])


def _monomials(n):
    out = []
    for j in range(n):
        out.append(field(n, lambda G, j=j: G[..., 2 * j], f"x{j + 1}"))
        out.append(field(n, lambda G, j=j: G[..., 2 * j + 1], f"y{j + 1}"))
        for k in range(n):
            out.append(field(n, lambda G, j=j, k=k: G[..., 2 * j] * G[..., 2 * k + 1],
                             f"x{j + 1}y{k + 1}"))
    out.append(field(n, lambda G: G[..., -1], "t"))
    return out


@pytest.mark.parametrize("n", [1, 2])
def test_sublaplacian_monomials(n):
    pts = np.random.default_rng(n).uniform(-2, 2, (200, 2 * n + 1))
    for u in _monomials(n):
        lap = hsub_laplacian(u, pts, 1e-3)
        assert np.max(np.abs(lap)) <= 1e-5, u.name


@pytest.mark.parametrize("n", [1, 2, 3])
def test_sublaplacian_of_z_squared(n):
    u = field(n, lambda G: np.sum(G[..., :-1] ** 2, axis=-1))
    pts = np.random.default_rng(0).uniform(-1, 1, (30, 2 * n + 1))
    np.testing.assert_allclose(hsub_laplacian(u, pts), 4 * n, rtol=1e-6)


@pytest.mark.parametrize("n", [1, 2])
def test_fundamental_solution(n):
    assert oracles.rho_power_laplacian(n, -2 * n) == 0
    # a wrong exponent is detectably non-harmonic, so the oracle has teeth
    assert oracles.rho_power_laplacian(n, -2 * n - 2) != 0
    u = field(n, lambda G: koranyi_norm(G) ** (-2 * n))
    rng = np.random.default_rng(7)
    g = rng.normal(size=(4000, 2 * n + 1))
    g = g[(koranyi_norm(g) >= 0.5) & (koranyi_norm(g) <= 2.0)]
    h = 1e-3
    terms = [(u(group_mul(g, flow_point(n, k, h))) - 2 * u(g) + u(group_mul(g, flow_point(n, k, -h)))) / h ** 2
             for k in range(2 * n)]
    lap = hsub_laplacian(u, g, h)
    np.testing.assert_allclose(lap, np.sum(terms, axis=0), rtol=1e-12, atol=0)
    # second derivatives of rho^(-2n) scale like rho^(-2n-2)
    scale = koranyi_norm(g) ** (-2 * n - 2)
    assert np.max(np.abs(lap) / scale) <= 1e-3


def test_stencil_convergence_is_second_order():
    src = "exp(x1) * cos(t) + sin(y1 * t)"
    u_fn, lap_fn = oracles.lambdify_laplacian(src, 1)
    u = field(1, u_fn)
    g = np.random.default_rng(5).uniform(-1, 1, (50, 3))
    exact = lap_fn(g)
    e1 = np.max(np.abs(hsub_laplacian(u, g, 2e-2) - exact))
    e2 = np.max(np.abs(hsub_laplacian(u, g, 1e-2) - exact))
    assert 3.5 <= e1 / e2 <= 4.5


def test_sublaplacian_against_symbolic_h2():
    u_fn, lap_fn = oracles.lambdify_laplacian("x1 * t**2 + exp(y2) * x2", 2)
    u = field(2, u_fn)
    g = np.random.default_rng(9).uniform(-1, 1, (50, 5))
    np.testing.assert_allclose(hsub_laplacian(u, g, 1e-3), lap_fn(g), atol=1e-5)


# --- lifts and horizontality -----------------------------------------------------

def test_lift_constant_and_axis_segment():
    grid = np.linspace(0, 1, 11)
    const = horizontal_lift(grid, np.ones((11, 2)), eta0=0.7)
    assert np.all(const.vertical == 0.7)
    seg = np.stack([grid, np.zeros_like(grid)], axis=-1)
    assert np.all(horizontal_lift(grid, seg, eta0=-1.0).vertical == -1.0)


def test_lift_of_circle():
    s = np.linspace(0, 2 * math.pi, 20001)
    lift = horizontal_lift(s, np.stack([np.cos(s), np.sin(s)], axis=-1))
    ds = s[1] - s[0]
    assert np.max(np.abs(lift.vertical + 2 * s)) < 10 * ds
    assert horizontality_residual(lift) <= 1e-12


def test_residual_detects_flattened_circle():
    s = np.linspace(0, 1, 1001)
    flat = np.stack([np.cos(s), np.sin(s), np.zeros_like(s)], axis=-1)
    res = horizontality_residual(HorizontalPath(s, flat))
    assert res == pytest.approx(2 * (s[1] - s[0]), rel=1e-3)


def test_residual_of_single_point_is_zero():
    assert horizontality_residual(HorizontalPath(np.zeros(1), np.zeros((1, 3)))) == 0.0


def test_lift_rejects_bad_grid():
    with pytest.raises(ValueError):
        horizontal_lift([0.0, 0.5, 0.5], np.zeros((3, 2)))
