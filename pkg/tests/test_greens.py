import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mimo_scatter import greens
from mimo_scatter.checks import helmholtz_residual

K0 = 2 * np.pi


def test_helmholtz_residual_second_order():
    rep = helmholtz_residual(K0)
    assert abs(rep["order"] - 2.0) < 0.1
    assert rep["relative_residuals"][-1] < 1e-3


@pytest.mark.parametrize("kappa", [K0, K0 + 0.3j, -K0 + 0.3j])
@pytest.mark.parametrize("a", [1e-6, 0.01, 0.2])
def test_ball_integral_matches_radial_quadrature(kappa, a):
    re = quad(lambda p: (np.exp(1j * kappa * p) * p).real, 0, a)[0]
    im = quad(lambda p: (np.exp(1j * kappa * p) * p).imag, 0, a)[0]
    assert greens.ball_integral(a, kappa) == pytest.approx(re + 1j * im, rel=1e-9)


def test_cell_kernel_solves_unit_source_inside_ball():
    a, h = 0.1, 1e-3
    vol = 4 / 3 * np.pi * a**3
    y = np.zeros((1, 3))
    x = np.array([[0.03, 0.02, -0.01]])
    k = lambda p: greens.kernel(p, y, K0, a)[:, 0]
    lap = sum(k(x + h * e) + k(x - h * e) for e in np.eye(3)) - 6 * k(x)
    resid = -lap / h**2 - K0**2 * k(x)
    assert resid[0] == pytest.approx(1 / vol, rel=1e-4)


def test_cell_kernel_edge_ratio_is_ball_form_factor():
    # outside a uniform ball the potential is g(d) V F(ka)
    a = 0.05
    x = np.array([[a * (1 - 1e-12), 0, 0]])
    inner = greens.kernel(x, np.zeros((1, 3)), K0, a)[0, 0]
    outer = greens.kernel(x, np.zeros((1, 3)), K0)[0, 0]
    ka = K0 * a
    form = 3 * (np.sin(ka) - ka * np.cos(ka)) / ka**3
    assert inner / outer == pytest.approx(form, rel=1e-9)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
@settings(max_examples=40, deadline=None)
def test_kernel_symmetric_and_gradient_consistent(c):
    x, y = np.array([c[:3]]), np.array([c[3:]])
    if np.linalg.norm(x - y) < 0.1:
        return
    assert greens.kernel(x, y, K0)[0, 0] == pytest.approx(greens.kernel(y, x, K0)[0, 0])
    h = 1e-6
    fd = np.array([(greens.kernel(x + h * e, y, K0) - greens.kernel(x - h * e, y, K0))[0, 0] / (2 * h)
                   for e in np.eye(3)])
    assert np.allclose(greens.kernel_grad(x, y, K0)[0, 0], fd, rtol=1e-6, atol=1e-9)


def test_hessian_matches_finite_differences():
    x, y = np.array([[0.4, -0.2, 0.3]]), np.array([[-0.1, 0.2, 0.0]])
    h = 1e-5
    fd = np.stack([(greens.kernel_grad(x + h * e, y, K0) - greens.kernel_grad(x - h * e, y, K0))[0, 0]
                   / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(greens.kernel_hess(x, y, K0)[0, 0], fd, rtol=1e-6, atol=1e-8)
    assert np.trace(greens.kernel_hess(x, y, K0)[0, 0]) == pytest.approx(
        -K0**2 * greens.kernel(x, y, K0)[0, 0])


def test_g0_derivs_are_with_respect_to_source():
    x, y = np.array([0.3, 0.1, 0.0]), np.array([0.0, 0.5, 0.2])
    ev = greens.g0_derivs(x, y, K0, order=2)
    h = 1e-6
    fd = (greens.g0(x, y + h * np.eye(3)[1], K0).value - greens.g0(x, y - h * np.eye(3)[1], K0).value) / (2 * h)
    assert np.allclose(ev.grad[:, :, 1], fd, rtol=1e-6)
    assert np.allclose(ev.value, ev.value[0, 0] * np.eye(3))


def test_coincident_points_raise():
    with pytest.raises(greens.CoincidentPointsError):
        greens.g0(np.zeros(3), np.zeros(3), K0)


@pytest.mark.parametrize("dist", [10.0, 20.0, 40.0])
def test_farfield_error_within_bound(dist):
    d = np.array([0.6, 0.0, 0.8])
    anchor = np.array([1.0, 0.0, 0.0])
    y = anchor + dist * np.array([0.0, 1.0, 0.0])
    approx, bound = greens.g0_farfield(d, y, anchor, K0, 0.5)
    exact = greens.g0(anchor + 0.5 * d, y, K0).value
    assert np.abs(approx.value - exact).max() <= bound


def test_farfield_refuses_near_points():
    with pytest.raises(greens.NearFieldError):
        greens.g0_farfield([1, 0, 0], [1, 0, 0], [0, 0, 0], K0, 0.5)
