"""Discrete perturbation operators, kernel blocks, cutoffs and commutators.

Every region is carried by a cubic lattice (``scene.sample_region`` with one
padding layer).  The perturbation ``W A = -dk2 A + (div A) grad ln k^2`` acts on
lattice values with a central-difference divergence; its time-reversed
partner ``W~ A = -grad(h . A) - dk2~ A`` uses the central-difference gradient.
The two stencils are exact negative adjoints of each other on the lattice, so
the discrete reciprocity identity holds to solver precision.

Fields living off the lattice are represented as kernel potentials
(:class:`Potential`, :class:`ShellLayer`) and differentiated analytically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from . import greens
from .scene import (CollocationSet, Frequency, Region, SceneLayout, SceneError, delta_k2,
                    grad_log_k2, region_delta_k2, sample_region)

GROUPS = ("T", "M", "R")


class SingularityRuleError(ValueError):
    pass


class DivergenceUnavailableError(TypeError):
    pass


# ---------------------------------------------------------------------------
# Field representations
# ---------------------------------------------------------------------------
class Field(Protocol):
    def values(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> np.ndarray: ...


def cell_radius(weights) -> np.ndarray:
    return (3.0 * np.asarray(weights, float) / (4.0 * math.pi)) ** (1.0 / 3.0)


@dataclass
class Potential:
    """``A(x) = sum_j g(x, y_j) w_j mu_j`` with the cell rule near the nodes.

    ``jacobian`` returns ``J[n, s, i] = d A_s / d x_i``.
    """

    points: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    kappa: complex
    cells: bool = True

    def _radius(self):
        return cell_radius(self.weights) if self.cells else None

    def values(self, x, chunk: int = 2048) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 3), complex)
        if len(self.points) == 0:
            return out
        wm = self.weights[:, None] * self.density
        for lo in range(0, len(x), chunk):
            G = greens.kernel(x[lo:lo + chunk], self.points, self.kappa, self._radius())
            out[lo:lo + chunk] = G @ wm
        return out

    def jacobian(self, x, chunk: int = 1024) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 3, 3), complex)
        if len(self.points) == 0:
            return out
        wm = self.weights[:, None] * self.density
        for lo in range(0, len(x), chunk):
            dG = greens.kernel_grad(x[lo:lo + chunk], self.points, self.kappa, self._radius())
            out[lo:lo + chunk] = np.einsum("nji,js->nsi", dG, wm)
        return out

    def hessian(self, x) -> np.ndarray:
        """``H[n, s, i, k] = d^2 A_s / dx_i dx_k`` (point kernel)."""
        x = np.atleast_2d(x)
        if len(self.points) == 0:
            return np.zeros((len(x), 3, 3, 3), complex)
        H = greens.kernel_hess(x, self.points, self.kappa)
        return np.einsum("njik,js->nsik", H, self.weights[:, None] * self.density)

    def scaled(self, c: complex) -> "Potential":
        return Potential(self.points, self.weights, c * self.density, self.kappa, self.cells)


@dataclass
class ShellLayer:
    """Point sources on a sphere plus sources differentiated along the radius.

    ``A(x) = sum_n w_n [ g(x, p_n) b_n + d/drho' g(x, c + rho' d_n)|_r a_n ]``
    where ``d_n`` are the node directions, ``b`` the value density and ``a``
    the radial-derivative density.
    """

    points: np.ndarray
    directions: np.ndarray
    weights: np.ndarray
    value_density: np.ndarray
    radial_density: np.ndarray
    kappa: complex

    def values(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        G = greens.kernel(x, self.points, self.kappa)
        dG = greens.kernel_grad(x, self.points, self.kappa)
        # d/d rho' of g(x, p) = d . grad_p g = -d . grad_x g
        dr = -np.einsum("nji,ji->nj", dG, self.directions)
        return G @ (self.weights[:, None] * self.value_density) + dr @ (
            self.weights[:, None] * self.radial_density)

    def jacobian(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        dG = greens.kernel_grad(x, self.points, self.kappa)
        H = greens.kernel_hess(x, self.points, self.kappa)
        dr = -np.einsum("njik,jk->nji", H, self.directions)
        return (np.einsum("nji,js->nsi", dG, self.weights[:, None] * self.value_density)
                + np.einsum("nji,js->nsi", dr, self.weights[:, None] * self.radial_density))


@dataclass
class FieldSum:
    parts: list

    def values(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 3), complex)
        for p in self.parts:
            out += p.values(x)
        return out

    def jacobian(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 3, 3), complex)
        for p in self.parts:
            out += p.jacobian(x)
        return out

    def hessian(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros((len(x), 3, 3, 3), complex)
        for p in self.parts:
            if not hasattr(p, "hessian"):
                raise DivergenceUnavailableError("field part lacks second derivatives")
            out += p.hessian(x)
        return out


@dataclass
class ZeroField:
    def values(self, x):
        return np.zeros((len(np.atleast_2d(x)), 3), complex)

    def jacobian(self, x):
        return np.zeros((len(np.atleast_2d(x)), 3, 3), complex)

    def hessian(self, x):
        return np.zeros((len(np.atleast_2d(x)), 3, 3, 3), complex)


# ---------------------------------------------------------------------------
# Lattice carriers
# ---------------------------------------------------------------------------
@dataclass
class Carrier:
    """Padded lattice of one region with its material coefficients."""

    region: Region
    cset: CollocationSet
    dk2: np.ndarray
    gamma: np.ndarray
    nb_plus: np.ndarray
    nb_minus: np.ndarray
    full: bool = False

    @property
    def points(self) -> np.ndarray:
        return self.cset.points

    @property
    def weight(self) -> float:
        return self.cset.weight

    @property
    def spacing(self) -> float:
        return self.cset.spacing

    @property
    def group(self) -> str:
        return self.region.group

    @property
    def inner(self) -> np.ndarray:
        """Indices of nodes inside the support (the padding carries no unknowns)."""
        return np.nonzero(~self.cset.padded)[0]

    @property
    def inner_points(self) -> np.ndarray:
        return self.cset.points[self.inner]

    @property
    def active(self) -> np.ndarray:
        """Nodes carrying unknowns: the interior, or every node when ``full``.

        ``W`` vanishes on the padding, ``W~`` does not, so time-reversed
        systems are built with ``full=True``.
        """
        return np.arange(len(self.cset)) if self.full else self.inner

    @property
    def active_points(self) -> np.ndarray:
        return self.cset.points[self.active]

    def __len__(self) -> int:
        return len(self.cset)


def _neighbours(index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lookup = {tuple(v): i for i, v in enumerate(index.tolist())}
    n = len(index)
    plus = np.full((n, 3), -1, int)
    minus = np.full((n, 3), -1, int)
    for i, v in enumerate(index.tolist()):
        for t in range(3):
            up = list(v)
            up[t] += 1
            dn = list(v)
            dn[t] -= 1
            plus[i, t] = lookup.get(tuple(up), -1)
            minus[i, t] = lookup.get(tuple(dn), -1)
    return plus, minus


def build_carrier(region: Region, f: Frequency, count: int, full: bool = False) -> Carrier:
    cset = sample_region(region, count, pad=True)
    dk2, grad = region_delta_k2(region, cset.points, f)
    k2 = f.k0**2 + dk2
    if np.any(np.abs(k2) < 1e-12 * f.k0**2):
        raise SceneError(f"degenerate material in {region.id}")
    plus, minus = _neighbours(cset.index)
    return Carrier(region, cset, dk2, grad / k2[:, None], plus, minus, full)


def lattice_div(carrier: Carrier, V: np.ndarray) -> np.ndarray:
    """Central-difference divergence of lattice values ``V`` (n, 3, ...)."""
    Vp = np.concatenate([V, np.zeros((1,) + V.shape[1:], V.dtype)])
    out = 0
    for t in range(3):
        out = out + Vp[carrier.nb_plus[:, t], t] - Vp[carrier.nb_minus[:, t], t]
    return out / (2.0 * carrier.spacing)


def lattice_grad(carrier: Carrier, phi: np.ndarray) -> np.ndarray:
    """Central-difference gradient of lattice scalars ``phi`` (n, ...) -> (n, 3, ...)."""
    pp = np.concatenate([phi, np.zeros((1,) + phi.shape[1:], phi.dtype)])
    comps = [pp[carrier.nb_plus[:, t]] - pp[carrier.nb_minus[:, t]] for t in range(3)]
    return np.stack(comps, axis=1) / (2.0 * carrier.spacing)


def lattice_W_apply(carrier: Carrier, V: np.ndarray) -> np.ndarray:
    """Apply the lattice ``W`` to values ``V`` of shape (n, 3) or (n, 3, m)."""
    div = lattice_div(carrier, V)
    if V.ndim == 2:
        return -carrier.dk2[:, None] * V + carrier.gamma * div[:, None]
    return -carrier.dk2[:, None, None] * V + carrier.gamma[:, :, None] * div[:, None, :]


def lattice_W_matrix(carrier: Carrier) -> sp.csr_matrix:
    """Sparse (3n x 3n) matrix of the lattice ``W``; row/col index ``3 i + s``."""
    n = len(carrier)
    h2 = 2.0 * carrier.spacing
    rows, cols, vals = [], [], []
    for s in range(3):
        rows.append(3 * np.arange(n) + s)
        cols.append(3 * np.arange(n) + s)
        vals.append(-carrier.dk2)
        for t in range(3):
            for nb, sgn in ((carrier.nb_plus, 1.0), (carrier.nb_minus, -1.0)):
                ok = nb[:, t] >= 0
                rows.append(3 * np.nonzero(ok)[0] + s)
                cols.append(3 * nb[ok, t] + t)
                vals.append(sgn * carrier.gamma[ok, s] / h2)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(3 * n, 3 * n))


def lattice_W_tilde_matrix(carrier: Carrier) -> sp.csr_matrix:
    """Sparse matrix of ``W~ A = -grad(h . A) - dk2 A`` with this carrier's
    coefficients used as ``h`` and ``dk2`` (build the carrier at ``-omega``)."""
    n = len(carrier)
    h2 = 2.0 * carrier.spacing
    rows, cols, vals = [], [], []
    for s in range(3):
        rows.append(3 * np.arange(n) + s)
        cols.append(3 * np.arange(n) + s)
        vals.append(-carrier.dk2)
        for nb, sgn in ((carrier.nb_plus, -1.0), (carrier.nb_minus, 1.0)):
            ok = nb[:, s] >= 0
            j = nb[ok, s]
            for t in range(3):
                rows.append(3 * np.nonzero(ok)[0] + s)
                cols.append(3 * j + t)
                vals.append(sgn * carrier.gamma[j, t] / h2)
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(3 * n, 3 * n))


def kernel_matrix(ci: Carrier, ck: Carrier, kappa: complex) -> np.ndarray:
    """Scalar kernel from the active nodes of ``ck`` to every node of ``ci``."""
    return greens.kernel(ci.points, ck.active_points, kappa, cell_radius(ck.weight))


def check_self_term(carrier: Carrier, kappa: complex) -> None:
    a = float(cell_radius(carrier.weight))
    S = complex(greens.ball_integral(a, kappa))
    static = a**2 / 2.0
    if abs(S - static) > 0.5 * abs(S):
        raise SingularityRuleError(
            f"cell too coarse in {carrier.region.id}: self-term correction exceeds 50%")


def w_times_kernel(ci: Carrier, G: np.ndarray, tilde: bool = False) -> np.ndarray:
    """Apply the lattice ``W_i`` (or ``W~_i``) to the kernel columns.

    ``G`` is the scalar kernel (n_i, n_k); the result is (3 n_i, 3 n_k) with
    column ``3 k + t`` the field ``G[:, k] e_t``.
    """
    ni, nk = G.shape
    Gp = np.concatenate([G, np.zeros((1, nk), G.dtype)])
    h2 = 2.0 * ci.spacing
    out = np.zeros((ni, 3, nk, 3), complex)
    for s in range(3):
        out[:, s, :, s] = -ci.dk2[:, None] * G
    if not tilde:
        divG = np.stack([(Gp[ci.nb_plus[:, t]] - Gp[ci.nb_minus[:, t]]) / h2 for t in range(3)],
                        axis=-1)
        out += ci.gamma[:, :, None, None] * divG[:, None, :, :]
    else:
        gp = np.concatenate([ci.gamma, np.zeros((1, 3), complex)])
        for s in range(3):
            jp, jm = ci.nb_plus[:, s], ci.nb_minus[:, s]
            out[:, s, :, :] -= (gp[jp][:, None, :] * Gp[jp][:, :, None]
                                - gp[jm][:, None, :] * Gp[jm][:, :, None]) / h2
    return out.reshape(3 * ni, 3 * nk)


@dataclass
class BlockMatrix:
    row_region: str
    col_region: str
    entries: np.ndarray


def assemble_block(ci: Carrier, ck: Carrier, f: Frequency, tilde: bool = False) -> BlockMatrix:
    """``M_ik = W_i R0 chi_k`` between the active nodes of regions ``i`` and ``k``.

    Padding nodes enter only as neighbours of the lattice divergence.
    """
    kappa = f.kappa
    if ci is ck:
        check_self_term(ci, kappa)
    G = kernel_matrix(ci, ck, kappa)
    rows = (3 * ci.active[:, None] + np.arange(3)).ravel()
    entries = w_times_kernel(ci, G, tilde=tilde)[rows] * ck.weight
    return BlockMatrix(ci.region.id, ck.region.id, entries)


# ---------------------------------------------------------------------------
# Perturbation operators on kernel-represented fields
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PerturbationW:
    """``W`` (or ``W~`` when ``tilde``) restricted to one group of regions."""

    scene: SceneLayout
    frequency: Frequency
    group: str = "total"
    tilde: bool = False

    def coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        g = None if self.group == "total" else self.group
        return (delta_k2(x, self.frequency, self.scene, g),
                grad_log_k2(x, self.frequency, self.scene, g))

    def apply(self, fld, x) -> np.ndarray:
        """Analytic ``W A`` at points ``x`` for a kernel-represented field."""
        if not hasattr(fld, "jacobian"):
            raise DivergenceUnavailableError("field has no kernel representation")
        x = np.atleast_2d(x)
        dk, gam = self.coefficients(x)
        if self.tilde:
            raise NotImplementedError("W~ needs second derivatives of ln k^2; use the lattice form")
        A = fld.values(x)
        div = np.einsum("nss->n", fld.jacobian(x))
        return -dk[:, None] * A + gam * div[:, None]


def apply_W(group: str, fld, x, f: Frequency, scene: SceneLayout) -> np.ndarray:
    return PerturbationW(scene, f, group).apply(fld, x)


def adjoint_W(group: str, f_reversed: Frequency, scene: SceneLayout) -> PerturbationW:
    """Time-reversed perturbation built at ``-omega``.

    Its coefficients are those of ``W`` at the reversed frequency, which equal
    the complex conjugates of the forward coefficients.
    """
    return PerturbationW(scene, f_reversed, group, tilde=True)


# ---------------------------------------------------------------------------
# Angular and annulus quadrature
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SphereGrid:
    """Gauss-Legendre in cos(theta) x uniform in phi; weights sum to 4 pi."""

    n_theta: int
    n_phi: int
    directions: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.weights)


def sphere_grid(n_theta: int, n_phi: int, rotation: np.ndarray | None = None) -> SphereGrid:
    mu, wmu = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    M, P = np.meshgrid(mu, phi, indexing="ij")
    st = np.sqrt(1.0 - M**2)
    dirs = np.stack([st * np.cos(P), st * np.sin(P), M], axis=-1).reshape(-1, 3)
    if rotation is not None:
        dirs = dirs @ np.asarray(rotation).T
    w = np.repeat(wmu[:, None] * (2.0 * np.pi / n_phi), n_phi, axis=1).ravel()
    return SphereGrid(n_theta, n_phi, dirs, w)


@dataclass(frozen=True)
class AnnulusQuadrature:
    center: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    radii: np.ndarray
    directions: np.ndarray


def annulus_quadrature(center, r: float, w: float, n_radial: int, n_theta: int,
                       n_phi: int) -> AnnulusQuadrature:
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    rho = (r - w) + 0.5 * w * (t + 1.0)
    wr = 0.5 * w * wt * rho**2
    sg = sphere_grid(n_theta, n_phi)
    c = np.asarray(center, float)
    pts = c + (rho[:, None, None] * sg.directions[None]).reshape(-1, 3)
    wts = (wr[:, None] * sg.weights[None]).ravel()
    radii = np.repeat(rho, len(sg))
    dirs = np.tile(sg.directions, (n_radial, 1))
    return AnnulusQuadrature(c, pts, wts, radii, dirs)


# ---------------------------------------------------------------------------
# Cutoff functions
# ---------------------------------------------------------------------------
def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    s = t**3 * (10.0 - 15.0 * t + 6.0 * t**2)
    ds = 30.0 * t**2 * (1.0 - t) ** 2
    d2s = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
    return s, ds, d2s


@dataclass(frozen=True)
class CutoffFunction:
    """Radial quintic-smoothstep cutoff.

    Flavors ``'T'`` and ``'R'`` equal 1 for ``|x - center| <= r - w`` and 0 for
    ``|x - center| >= r``.  Flavor ``'M'`` is ``1 - ramp_T - ramp_R`` where each
    ramp drops from 1 at ``inner`` to 0 at ``r - w`` about ``center`` and
    ``center2``.
    """

    center: tuple[float, float, float]
    r: float
    w: float
    flavor: str = "T"
    center2: tuple[float, float, float] | None = None
    inner: float | None = None


def _radial_cutoff(x, center, lo, hi):
    rel = np.atleast_2d(x) - np.asarray(center, float)
    rho = np.linalg.norm(rel, axis=1)
    s, ds, d2s = _smoothstep((rho - lo) / (hi - lo))
    width = hi - lo
    val = 1.0 - s
    d1 = -ds / width
    d2 = -d2s / width**2
    rho_safe = np.where(rho > 0, rho, 1.0)
    grad = (d1 / rho_safe)[:, None] * rel
    lap = d2 + 2.0 * d1 / rho_safe
    return val, grad, lap


def cutoff_eval(cf: CutoffFunction, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Value, gradient and Laplacian of the cutoff at points ``x``."""
    if cf.flavor in ("T", "R"):
        return _radial_cutoff(x, cf.center, cf.r - cf.w, cf.r)
    inner = cf.inner if cf.inner is not None else 0.5 * (cf.r - cf.w)
    v1, g1, l1 = _radial_cutoff(x, cf.center, inner, cf.r - cf.w)
    v2, g2, l2 = _radial_cutoff(x, cf.center2, inner, cf.r - cf.w)
    return 1.0 - v1 - v2, -g1 - g2, -l1 - l2


def cutoffs_for(scene: SceneLayout) -> dict[str, CutoffFunction]:
    w = scene.width
    ext_t = max(np.linalg.norm(np.subtract(reg.center, scene.origin)) + reg.radius
                for reg in scene.transmitters)
    ext_r = max(np.linalg.norm(np.subtract(reg.center, scene.e)) + reg.radius
                for reg in scene.receivers)
    return {
        "T": CutoffFunction(scene.origin, scene.r, w, "T"),
        "R": CutoffFunction(scene.e, scene.r, w, "R"),
        "M": CutoffFunction(scene.origin, scene.r, w, "M", scene.e, max(ext_t, ext_r)),
    }


def commutator_neg_laplacian(cf: CutoffFunction, x, u, jac) -> np.ndarray:
    """``[-Delta, J] u = -(Delta J) u - 2 (grad J . grad) u`` at points ``x``."""
    _, gJ, lJ = cutoff_eval(cf, x)
    return -lJ[:, None] * u - 2.0 * np.einsum("nsi,ni->ns", jac, gJ)


@dataclass
class AnnulusField:
    """Commutator output tabulated on an annulus quadrature."""

    quadrature: AnnulusQuadrature
    values: np.ndarray

    def as_potential(self, kappa: complex) -> Potential:
        return Potential(self.quadrature.points, self.quadrature.weights, self.values, kappa,
                         cells=False)


def commutator_apply(kind: str, input_field, cutoff: CutoffFunction, quad: AnnulusQuadrature,
                     system, kappa: complex):
    """Apply ``K`` or ``K~`` for one side.

    ``kind`` is ``'K'`` or ``'K~'``.  For ``'K'`` the input is a source
    (:class:`Potential` on the side's carriers) that is restricted to the side
    and propagated by ``system`` (the side's subsystem solver); the commutator
    is then tabulated on ``quad``.  For ``'K~'`` the input is a field
    evaluated on ``quad``; ``[Delta, J]`` of it is propagated by ``system``
    and the solution field is returned.
    """
    if kind == "K":
        inside = system.restrict_source(input_field)
        sol = system.solve_source(inside)
        fld = sol.field()
        vals = commutator_neg_laplacian(cutoff, quad.points, fld.values(quad.points),
                                        fld.jacobian(quad.points))
        return AnnulusField(quad, vals)
    if kind == "K~":
        vals = -commutator_neg_laplacian(cutoff, quad.points, input_field.values(quad.points),
                                         input_field.jacobian(quad.points))
        return system.solve_source(AnnulusField(quad, vals).as_potential(kappa))
    raise ValueError(f"unknown commutator kind {kind!r}")
