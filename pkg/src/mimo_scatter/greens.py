"""Free-space Helmholtz kernel ``exp(j k |x-y|) / (4 pi |x-y|)`` and derivatives.

The vector kernel is this scalar times the 3x3 identity.  Vectorised helpers
take ``x`` of shape (nx, 3) and ``y`` of shape (ny, 3) and return arrays
indexed ``[ix, iy, ...]``; derivatives are with respect to ``x`` (those with
respect to ``y`` follow by sign flips because the kernel depends on ``x - y``).

Sources that stand for lattice cells may carry a cell radius ``a``: for
``|x - y| < a`` the kernel is replaced by the potential of a uniform ball of
radius ``a`` divided by its volume.  At ``x = y`` this is the analytic mean of
the weakly singular kernel over the ball.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FOUR_PI = 4.0 * np.pi
_SERIES_KA = 1e-4


class CoincidentPointsError(ValueError):
    pass


class NearFieldError(ValueError):
    pass


@dataclass(frozen=True)
class GreenEval:
    """Kernel value (3x3) with optional derivative tensors.

    ``grad[s, p, i]`` is the derivative of ``value[s, p]`` with respect to the
    ``i``-th coordinate of the second argument; ``hess[s, p, i, k]`` holds the
    mixed second derivatives ``d^2 / dx_i dy_k``.
    """

    value: np.ndarray
    grad: np.ndarray | None = None
    hess: np.ndarray | None = None


def ball_integral(a, kappa: complex) -> np.ndarray:
    """Integral of the kernel over a ball of radius ``a`` centred on the pole."""
    a = np.asarray(a, float)
    ka = kappa * a
    exact = (np.exp(1j * ka) * (1.0 - 1j * ka) - 1.0) / (kappa**2 if kappa != 0 else 1.0)
    series = a**2 / 2.0 + 1j * kappa * a**3 / 3.0
    return np.where(np.abs(ka) < _SERIES_KA, series, exact)


def _radial(d, kappa):
    g = np.exp(1j * kappa * d) / (FOUR_PI * d)
    dg = g * (1j * kappa - 1.0 / d)
    return g, dg


def _ball_radial(d, a, kappa):
    """Ball potential ``I(d)`` and ``I'(d)`` for ``d < a`` (not normalised)."""
    ka = kappa * a
    kd = kappa * d
    small = np.abs(ka) < _SERIES_KA
    kap2 = kappa**2 if kappa != 0 else 1.0
    E = np.exp(1j * ka) * (1.0 - 1j * ka)
    kd_safe = np.where(np.abs(kd) > 0, kd, 1.0)
    sinc = np.where(np.abs(kd) > 1e-8, np.sin(kd_safe) / kd_safe, 1.0 - kd**2 / 6.0)
    I = np.where(small, a**2 / 2.0 - d**2 / 6.0 + 1j * kappa * a**3 / 3.0, (E * sinc - 1.0) / kap2)
    # (kd cos kd - sin kd) / (kappa d^2) without cancellation
    num = np.where(np.abs(kd) > 1e-2, kd_safe * np.cos(kd_safe) - np.sin(kd_safe),
                   -kd**3 / 3.0 + kd**5 / 30.0)
    d_safe = np.where(d > 0, d, 1.0)
    dsinc = np.where(d > 0, num / (kappa * d_safe**2) if kappa != 0 else 0.0, 0.0)
    dI = np.where(small, -d / 3.0, E * dsinc / kap2)
    return I, dI


def _pairs(x, y):
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    diff = x[:, None, :] - y[None, :, :]
    d = np.linalg.norm(diff, axis=-1)
    return diff, d


def kernel(x, y, kappa: complex, cell_radius=None) -> np.ndarray:
    """Scalar kernel matrix ``g(x_i, y_j)`` with the cell rule for near pairs."""
    _, d = _pairs(x, y)
    return _kernel_from_d(d, kappa, cell_radius)


def _kernel_from_d(d, kappa, cell_radius):
    if cell_radius is None:
        if np.any(d == 0):
            raise CoincidentPointsError("kernel evaluated at coincident points")
        return _radial(d, kappa)[0]
    a = np.broadcast_to(np.asarray(cell_radius, float), d.shape[-1:])[None, :] * np.ones_like(d)
    near = d < a
    out = np.empty(d.shape, complex)
    far = ~near
    out[far] = _radial(d[far], kappa)[0]
    if np.any(near):
        I, _ = _ball_radial(d[near], a[near], kappa)
        out[near] = I / (FOUR_PI * a[near] ** 3 / 3.0)
    return out


def kernel_grad(x, y, kappa: complex, cell_radius=None) -> np.ndarray:
    """``grad_x g(x_i, y_j)``, shape (nx, ny, 3)."""
    diff, d = _pairs(x, y)
    if cell_radius is None:
        if np.any(d == 0):
            raise CoincidentPointsError("kernel gradient at coincident points")
        near = np.zeros(d.shape, bool)
        a = None
    else:
        a = np.broadcast_to(np.asarray(cell_radius, float), d.shape[-1:])[None, :] * np.ones_like(d)
        near = d < a
    dr = np.empty(d.shape, complex)
    far = ~near
    dr[far] = _radial(d[far], kappa)[1]
    if np.any(near):
        _, dI = _ball_radial(d[near], a[near], kappa)
        dr[near] = dI / (FOUR_PI * a[near] ** 3 / 3.0)
    d_safe = np.where(d > 0, d, 1.0)
    return (dr / d_safe)[..., None] * diff


def kernel_hess(x, y, kappa: complex) -> np.ndarray:
    """``d^2 g / dx_i dx_k``, shape (nx, ny, 3, 3); point kernel only."""
    diff, d = _pairs(x, y)
    if np.any(d == 0):
        raise CoincidentPointsError("kernel Hessian at coincident points")
    g, dg = _radial(d, kappa)
    d2g = g * ((1j * kappa - 1.0 / d) ** 2 + 1.0 / d**2)
    u = diff / d[..., None]
    uu = u[..., :, None] * u[..., None, :]
    eye = np.eye(3)
    return d2g[..., None, None] * uu + (dg / d)[..., None, None] * (eye - uu)


# ---------------------------------------------------------------------------
# Single-pair API
# ---------------------------------------------------------------------------
def g0(x, y, k0: complex) -> GreenEval:
    """Free vector kernel ``delta_sp exp(j k0 |x-y|) / (4 pi |x-y|)``."""
    val = kernel(np.asarray(x)[None], np.asarray(y)[None], k0)[0, 0]
    return GreenEval(val * np.eye(3))


def g0_derivs(x, y, k0: complex, order: int = 1) -> GreenEval:
    """Kernel with analytic derivatives with respect to the second argument."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    x = np.asarray(x, float)[None]
    y = np.asarray(y, float)[None]
    val = kernel(x, y, k0)[0, 0]
    grad_y = -kernel_grad(x, y, k0)[0, 0]
    eye = np.eye(3)
    grad = eye[:, :, None] * grad_y[None, None, :]
    hess = None
    if order == 2:
        # d^2/dx_i dy_k = -d^2/dx_i dx_k
        mixed = -kernel_hess(x, y, k0)[0, 0]
        hess = eye[:, :, None, None] * mixed[None, None]
    return GreenEval(val * eye, grad, hess)


def g0_farfield(direction, y, anchor, k0: complex, r: float) -> tuple[GreenEval, float]:
    """Far-field form of ``g0(anchor + r * direction, y)``.

    Returns the approximation and an absolute error bound of order
    ``|y - anchor|**-2``.
    """
    direction = np.asarray(direction, float)
    rel = np.asarray(y, float) - np.asarray(anchor, float)
    dist = float(np.linalg.norm(rel))
    if dist <= 10.0 * r:
        raise NearFieldError("far-field form needs |y - anchor| > 10 r")
    unit = rel / dist
    val = np.exp(1j * k0 * dist) * np.exp(-1j * k0 * r * direction @ unit) / (FOUR_PI * dist)
    growth = np.exp(max(0.0, -np.imag(k0)) * (dist + r))
    bound = growth * (r + abs(k0) * r**2) / (FOUR_PI * dist**2) * 1.5
    return GreenEval(val * np.eye(3)), float(bound)
