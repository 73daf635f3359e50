import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimo_scatter import operators as op
from mimo_scatter.scatter import w_adjoint_mismatch

K0 = 2 * np.pi


@pytest.fixture(scope="module")
def carrier(desk, freq):
    return op.build_carrier(desk.transmitters[0], freq, 200)


def test_sphere_grid_integrates_low_order_polynomials():
    g = op.sphere_grid(8, 16)
    x, y, z = g.directions.T
    assert g.weights.sum() == pytest.approx(4 * np.pi, rel=1e-13)
    assert np.sum(g.weights * z**2) == pytest.approx(4 * np.pi / 3, rel=1e-13)
    assert np.sum(g.weights * x**2 * y**2) == pytest.approx(4 * np.pi / 15, rel=1e-13)
    assert np.sum(g.weights * x * z) == pytest.approx(0, abs=1e-13)


def test_rotated_grid_keeps_unit_directions():
    from scipy.spatial.transform import Rotation
    R = Rotation.from_euler("xyz", [0.3, -0.2, 1.1]).as_matrix()
    g = op.sphere_grid(6, 12, R)
    assert np.allclose(np.linalg.norm(g.directions, axis=1), 1)
    assert np.sum(g.weights * g.directions[:, 0] ** 2) == pytest.approx(4 * np.pi / 3)


def test_annulus_quadrature_volume_and_moment():
    q = op.annulus_quadrature((1.0, 2.0, 0.0), 0.5, 0.125, 4, 6, 12)
    vol = 4 * np.pi / 3 * (0.5**3 - 0.375**3)
    assert q.weights.sum() == pytest.approx(vol, rel=1e-13)
    r2 = np.sum(q.weights * q.radii**2)
    assert r2 == pytest.approx(4 * np.pi / 5 * (0.5**5 - 0.375**5), rel=1e-13)
    assert np.all((q.radii >= 0.375) & (q.radii <= 0.5))


def test_cutoff_plateaus_and_derivatives():
    cf = op.CutoffFunction((0.0, 0.0, 0.0), 0.5, 0.125, "T")
    v, _, _ = op.cutoff_eval(cf, np.array([[0.1, 0, 0], [0.6, 0, 0]]))
    assert v.tolist() == [1.0, 0.0]
    x = np.array([[0.3, 0.2, 0.2]])
    h = 1e-4
    val = lambda p: op.cutoff_eval(cf, p)[0]
    _, grad, lap = op.cutoff_eval(cf, x)
    fd_grad = np.array([(val(x + h * e) - val(x - h * e))[0] / (2 * h) for e in np.eye(3)])
    fd_lap = (sum(val(x + h * e) + val(x - h * e) for e in np.eye(3)) - 6 * val(x))[0] / h**2
    assert np.allclose(grad[0], fd_grad, rtol=1e-6)
    assert lap[0] == pytest.approx(fd_lap, rel=1e-5)


def test_middle_cutoff_vanishes_near_antennas(desk):
    cuts = op.cutoffs_for(desk)
    v, _, _ = op.cutoff_eval(cuts["M"], np.array([desk.origin, desk.e, (2.5, 1.0, 0.0)]))
    assert v.tolist() == [0.0, 0.0, 1.0]


def test_commutator_matches_product_rule():
    cf = op.CutoffFunction((0.0, 0.0, 0.0), 0.5, 0.125, "T")
    kvec = np.array([1.0, 2.0, -0.5])
    pol = np.array([0.2, -0.1, 0.7])
    u = lambda p: np.exp(1j * p @ kvec)[:, None] * pol
    x = np.array([[0.2, 0.25, 0.2]])
    h = 1e-4
    Ju = lambda p: op.cutoff_eval(cf, p)[0][:, None] * u(p)
    lap = lambda F: (sum(F(x + h * e) + F(x - h * e) for e in np.eye(3)) - 6 * F(x)) / h**2
    expected = -lap(Ju) + op.cutoff_eval(cf, x)[0][:, None] * lap(u)
    jac = 1j * u(x)[:, :, None] * kvec[None, None, :]
    got = op.commutator_neg_laplacian(cf, x, u(x), jac)
    assert np.allclose(got, expected, rtol=1e-5)


def test_lattice_divergence_exact_on_linear_field(carrier):
    A = np.array([[1.0, 2.0, 0.0], [0.0, -1.0, 3.0], [0.5, 0.0, 1.0]])
    V = carrier.points @ A.T
    div = op.lattice_div(carrier, V)
    full = np.all(carrier.nb_plus >= 0, axis=1) & np.all(carrier.nb_minus >= 0, axis=1)
    assert np.allclose(div[full], np.trace(A))


def test_lattice_W_matrix_matches_apply(carrier, rng):
    V = rng.standard_normal((len(carrier), 3)) + 1j * rng.standard_normal((len(carrier), 3))
    direct = op.lattice_W_apply(carrier, V)
    via = (op.lattice_W_matrix(carrier) @ V.ravel()).reshape(-1, 3)
    assert np.allclose(direct, via, atol=1e-12 * np.abs(direct).max())


def test_time_reversed_W_is_exact_adjoint(desk, freq):
    for reg in desk.regions:
        assert w_adjoint_mismatch(reg, freq, 80) < 1e-14


def test_lattice_W_converges_to_analytic(desk, freq):
    src = op.Potential(np.array([[0.6, 0.4, 0.2]]), np.ones(1), np.array([[0.3, -0.5, 1.0]]),
                       freq.kappa, cells=False)
    pw = op.PerturbationW(desk, freq, "T")
    errs = []
    for count in (100, 800):
        c = op.build_carrier(desk.transmitters[0], freq, count)
        full = np.all(c.nb_plus >= 0, axis=1) & np.all(c.nb_minus >= 0, axis=1)
        lat = op.lattice_W_apply(c, src.values(c.points))[full]
        exact = pw.apply(src, c.points[full])
        errs.append(np.abs(lat - exact).max() / np.abs(exact).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


@given(st.floats(0.05, 0.3), st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=20, deadline=None)
def test_potential_jacobian_matches_differences(a, sx, sy):
    pts = np.array([[0.0, 0.0, 0.0], [0.1, 0.05, -0.02]])
    pot = op.Potential(pts, np.full(2, 1e-3), np.array([[1, 0, 0], [0, 1j, 0.5]]), K0 + 0.1j)
    x = np.array([[a + 0.5, sx, sy]])
    h = 1e-6
    fd = np.stack([(pot.values(x + h * e) - pot.values(x - h * e))[0] / (2 * h) for e in np.eye(3)],
                  axis=-1)
    assert np.allclose(pot.jacobian(x)[0], fd, rtol=1e-5, atol=1e-12)


def test_shell_layer_radial_part_is_source_derivative():
    d = np.array([[0.0, 0.0, 1.0]])
    r, h = 0.5, 1e-6
    x = np.array([[1.0, 0.3, 0.2]])
    lay = lambda rho, a, b: op.ShellLayer(rho * d, d, np.ones(1), b, a, K0)
    one = np.array([[1.0, 0.0, 0.0]])
    zero = np.zeros((1, 3))
    fd = (lay(r + h, zero, one).values(x) - lay(r - h, zero, one).values(x)) / (2 * h)
    assert np.allclose(lay(r, one, zero).values(x), fd, rtol=1e-6)


def test_self_term_guard(desk, freq):
    c = op.build_carrier(desk.transmitters[0], freq, 50)
    op.check_self_term(c, freq.kappa)
    with pytest.raises(op.SingularityRuleError):
        op.check_self_term(c, 200.0)


def test_perturbation_needs_kernel_field(desk, freq):
    with pytest.raises(op.DivergenceUnavailableError):
        op.apply_W("T", object(), np.zeros((1, 3)), freq, desk)
