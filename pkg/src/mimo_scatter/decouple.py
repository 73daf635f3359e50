"""Decoupled transmitter -> environment -> receiver factorization.

The receiver field is rebuilt in three stages:

1. the transmitter-only solve ``u_T`` is cut off by ``J_T`` and its
   commutator ``[-Delta, J_T] u_T`` is tabulated on the transmitter annulus;
2. that annulus source is propagated by a middle resolvent (the full one for
   the exact factorization, the environment-only one for the small-antenna
   approximation);
3. ``[Delta, J_R]`` of the middle field on the receiver annulus drives the
   receiver-only solve.

With the full middle resolvent the result equals the direct full solve up to
the annulus quadrature, also at the discrete level.  Letting the cutoffs
become sharp turns the annulus sources into single and double layers on the
spheres of radius ``r``; this yields the six-component g-vectors of each
antenna and the environment matrix ``Mid(x_R, x_T)`` coupling them.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import greens
from .channel import TransferMatrix
from .operators import (AnnulusQuadrature, Potential, ShellLayer, SphereGrid, annulus_quadrature,
                        commutator_neg_laplacian, cutoffs_for, lattice_W_matrix, sphere_grid)
from .scatter import (ScatterSolution, antenna_source, reciprocity_mismatch, scene_system,
                      solve_full, w_adjoint_mismatch)
from .scene import MU0, Frequency, SceneLayout, conductivity, disc_quadrature, permittivity

log = logging.getLogger(__name__)

_EYE = np.eye(3)


# ---------------------------------------------------------------------------
# Solver bundle
# ---------------------------------------------------------------------------
@dataclass
class SideSolvers:
    """Factorized subsystem solutions shared by the decoupling routines."""

    scene: SceneLayout
    frequency: Frequency
    count: int
    cache: dict = field(default_factory=dict)

    def get(self, which: str) -> ScatterSolution:
        if which not in self.cache:
            self.cache[which] = solve_full(scene_system(self.scene, self.frequency, which,
                                                        self.count))
        return self.cache[which]


def _solvers(scene, f, count, solvers):
    if solvers is not None:
        return solvers
    return SideSolvers(scene, f, count or scene.solver.points_per_region)


def receiver_nodes(sol: ScatterSolution) -> np.ndarray:
    """Interior lattice nodes of the receivers where ``W_R`` is nonzero."""
    pts = []
    for c in sol.system.carriers:
        active = np.abs(c.dk2[c.inner]) > 0
        pts.append(c.inner_points[active])
    return np.concatenate(pts) if pts else np.zeros((0, 3))


# ---------------------------------------------------------------------------
# Annulus pipeline (exact factorization and small-antenna approximation)
# ---------------------------------------------------------------------------
@dataclass
class FactorizationResult:
    points: np.ndarray
    direct: np.ndarray
    factorized: np.ndarray
    middle: str

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    @property
    def discrepancy(self) -> float:
        if self.empty:
            return 0.0
        return float(np.linalg.norm(self.factorized - self.direct) / np.linalg.norm(self.direct))


def _annuli(scene: SceneLayout, levels) -> tuple[AnnulusQuadrature, AnnulusQuadrature]:
    nr, nt, npz = levels if levels is not None else scene.solver.annulus
    w = scene.width
    return (annulus_quadrature(scene.origin, scene.r, w, nr, nt, npz),
            annulus_quadrature(scene.e, scene.r, w, nr, nt, npz))


def factorized_receiver_field(scene: SceneLayout, n: int, f: Frequency, middle: str = "total",
                              annulus=None, count: int | None = None,
                              solvers: SideSolvers | None = None):
    """``Kt_R . (middle resolvent) . K_T J_n`` as a field evaluator.

    ``middle`` is ``'total'`` (exact factorization) or ``'M'`` (environment
    only).
    """
    sv = _solvers(scene, f, count, solvers)
    cuts = cutoffs_for(scene)
    quad_t, quad_r = _annuli(scene, annulus)
    src = antenna_source(scene, n, f, sv.count)
    u_t = sv.get("T").solve_source(src)
    kappa = commutator_neg_laplacian(cuts["T"], quad_t.points, u_t.values(quad_t.points),
                                     u_t.jacobian(quad_t.points))
    mid = sv.get(middle).solve_source(
        Potential(quad_t.points, quad_t.weights, kappa, f.kappa, cells=False))
    p = -commutator_neg_laplacian(cuts["R"], quad_r.points, mid.values(quad_r.points),
                                  mid.jacobian(quad_r.points))
    return sv.get("R").solve_source(Potential(quad_r.points, quad_r.weights, p, f.kappa,
                                              cells=False))


def lemma1_factorized(scene: SceneLayout, f: Frequency, n: int = 0, annulus=None,
                      count: int | None = None,
                      solvers: SideSolvers | None = None) -> FactorizationResult:
    """Direct full solve and the exact factorization at the receiver nodes."""
    sv = _solvers(scene, f, count, solvers)
    pts = receiver_nodes(sv.get("R"))
    if len(pts) == 0:
        log.info("lemma1_factorized: receivers carry no perturbation; empty support")
        return FactorizationResult(pts, np.zeros((0, 3)), np.zeros((0, 3)), "total")
    direct = sv.get("total").solve_source(antenna_source(scene, n, f, sv.count)).values(pts)
    fact = factorized_receiver_field(scene, n, f, "total", annulus, solvers=sv).values(pts)
    return FactorizationResult(pts, direct, fact, "total")


def decoupled_vector_potential(scene: SceneLayout, n: int, f: Frequency, annulus=None,
                               count: int | None = None,
                               solvers: SideSolvers | None = None):
    """Receiver field with the environment-only resolvent in the middle."""
    return factorized_receiver_field(scene, n, f, "M", annulus, count, solvers)


def lemma2_error(scene: SceneLayout, f: Frequency, n: int = 0, annulus=None,
                 count: int | None = None) -> dict:
    """Relative error of the environment-only middle factor at the receiver nodes.

    ``error`` compares against the exact factorization on the same annulus
    quadrature, isolating the substitution of the middle resolvent;
    ``error_direct`` compares against the direct full solve.
    """
    sv = _solvers(scene, f, count, None)
    pts = receiver_nodes(sv.get("R"))
    exact = factorized_receiver_field(scene, n, f, "total", annulus, solvers=sv).values(pts)
    approx = factorized_receiver_field(scene, n, f, "M", annulus, solvers=sv).values(pts)
    direct = sv.get("total").solve_source(antenna_source(scene, n, f, sv.count)).values(pts)
    scale = np.abs(direct).max()
    return {"error": float(np.abs(approx - exact).max() / scale),
            "error_direct": float(np.abs(approx - direct).max() / scale),
            "volume": float(sum(4 / 3 * np.pi * reg.radius**3
                                for reg in scene.transmitters + scene.receivers))}


# ---------------------------------------------------------------------------
# Scalar kernel families on shell nodes
# ---------------------------------------------------------------------------
def _family(x, nodes, dirs, kappa, kind):
    """Scalar ``s(x, node)`` and ``grad_x s`` for point or radial-dipole sources."""
    if kind == "point":
        return greens.kernel(x, nodes, kappa), greens.kernel_grad(x, nodes, kappa)
    dG = greens.kernel_grad(x, nodes, kappa)
    H = greens.kernel_hess(x, nodes, kappa)
    return -np.einsum("nji,ji->nj", dG, dirs), -np.einsum("njik,jk->nji", H, dirs)


def _family_solve(sol: ScatterSolution, nodes, dirs, kind):
    """Unknowns ``X`` of the solve for every (node, polarization) incident field."""
    sysm = sol.system
    nn = len(nodes)
    B = np.zeros((sysm.size, nn, 3), complex)
    from .operators import lattice_W_apply
    for i, c in enumerate(sysm.carriers):
        s, _ = _family(c.points, nodes, dirs, sol.frequency.kappa, kind)
        V = s[:, None, :, None] * _EYE[None, :, None, :]
        Wv = lattice_W_apply(c, V.reshape(len(c), 3, nn * 3))[c.active]
        B[sysm.block_slice(i)] = Wv.reshape(-1, nn, 3)
    if sysm.size == 0:
        return B
    return sol.solve_rhs(B.reshape(sysm.size, -1)).reshape(sysm.size, nn, 3)


def _family_field(sol: ScatterSolution, nodes, dirs, kind, x):
    """Field ``A[x, node, s, t]`` and radial-free Jacobian for each incident family."""
    kappa = sol.frequency.kappa
    s, ds = _family(x, nodes, dirs, kappa, kind)
    A = s[:, :, None, None] * _EYE[None, None]
    J = ds[:, :, None, None, :] * _EYE[None, None, :, :, None]  # [x, node, s, t, i]
    X = _family_solve(sol, nodes, dirs, kind)
    if sol.system.size:
        pot = sol.system.potential(np.zeros(sol.system.size))
        G = greens.kernel(x, pot.points, kappa, (3 * pot.weights / (4 * np.pi)) ** (1 / 3))
        dG = greens.kernel_grad(x, pot.points, kappa, (3 * pot.weights / (4 * np.pi)) ** (1 / 3))
        Xr = X.reshape(len(pot.points), 3, len(nodes), 3) * pot.weights[:, None, None, None]
        A = A - np.einsum("xj,jsnt->xnst", G, Xr)
        J = J - np.einsum("xji,jsnt->xnsti", dG, Xr)
    return A, J


# ---------------------------------------------------------------------------
# Shell traces
# ---------------------------------------------------------------------------
@dataclass
class ShellTrace:
    """Radial-derivative and value traces of a side kernel on a sphere.

    ``blocks[k, 0]`` is the radial derivative and ``blocks[k, 1]`` the value,
    each a 3x3 matrix indexed ``[s, t]``.
    """

    side: str
    grid: SphereGrid
    blocks: np.ndarray

    def to_json(self) -> str:
        return json.dumps({"side": self.side, "n_theta": self.grid.n_theta,
                           "n_phi": self.grid.n_phi, "directions": self.grid.directions.tolist(),
                           "weights": self.grid.weights.tolist(),
                           "re": self.blocks.real.tolist(), "im": self.blocks.imag.tolist()})


def shell_traces(side: str, scene: SceneLayout, f: Frequency, grid: SphereGrid, point,
                 count: int | None = None, solvers: SideSolvers | None = None) -> ShellTrace:
    """Traces of the side kernel on the sphere of radius ``r``.

    ``side='T'``: ``(d_rho G_T(rho x, y), G_T(r x, y))`` for the source point
    ``y = point``.  ``side='R'``: ``(d_rho' G_R(x, e + rho' x), G_R(x, e + r x))``
    at the evaluation point ``x = point``.
    """
    sv = _solvers(scene, f, count, solvers)
    point = np.asarray(point, float)
    dirs = grid.directions
    if side == "T":
        nodes = np.asarray(scene.origin) + scene.r * dirs
        sol = sv.get("T")
        blocks = np.zeros((len(dirs), 2, 3, 3), complex)
        for t in range(3):
            src = Potential(point[None], np.ones(1), _EYE[t][None].astype(complex), f.kappa,
                            cells=False)
            fld = sol.solve_source(src)
            blocks[:, 1, :, t] = fld.values(nodes)
            blocks[:, 0, :, t] = np.einsum("nsi,ni->ns", fld.jacobian(nodes), dirs)
        return ShellTrace("T", grid, blocks)
    if side == "R":
        nodes = np.asarray(scene.e) + scene.r * dirs
        sol = sv.get("R")
        blocks = np.zeros((len(dirs), 2, 3, 3), complex)
        for b, kind in enumerate(("dipole", "point")):
            A, _ = _family_field(sol, nodes, dirs, kind, point[None])
            blocks[:, b] = A[0]
        return ShellTrace("R", grid, blocks)
    raise ValueError(f"unknown side {side!r}")


# ---------------------------------------------------------------------------
# g-vectors
# ---------------------------------------------------------------------------
@dataclass
class GVector:
    side: str
    antenna: int
    grid: SphereGrid
    values: np.ndarray  # (n_dirs, 6)


def transmitter_gvector(scene: SceneLayout, n: int, f: Frequency, grid: SphereGrid,
                        count: int | None = None, solvers: SideSolvers | None = None) -> GVector:
    """``(d_rho u_T, u_T)`` on the transmitter sphere for a unit feed on antenna ``n``."""
    sv = _solvers(scene, f, count, solvers)
    u = sv.get("T").solve_source(antenna_source(scene, n, f, sv.count))
    nodes = np.asarray(scene.origin) + scene.r * grid.directions
    dr = np.einsum("nsi,ni->ns", u.jacobian(nodes), grid.directions)
    return GVector("T", n, grid, np.concatenate([dr, u.values(nodes)], axis=1))


class ReceiverFunctional:
    """``A -> int_{S_m} sigma E(A) . n dS`` for fields solved by the receiver system.

    For an incident field ``u0`` the value is the direct contribution of
    ``u0`` plus ``r . u0(lattice)``, where the row vector ``r`` carries the
    receiver system's response.
    """

    def __init__(self, scene: SceneLayout, m: int, f: Frequency, sol: ScatterSolution,
                 step: float | None = None):
        from .channel import default_step
        self.scene, self.f, self.sol = scene, f, sol
        reg = scene.receivers[m]
        if reg.wire is None:
            raise ValueError(f"receiver {reg.id} has no wire section")
        nr, na = scene.solver.disc
        self.pts, wts = disc_quadrature(reg.wire, nr, na)
        self.normal = reg.wire.unit_normal
        self.h = default_step(scene) if step is None else step
        self.ws = wts * conductivity(self.pts, scene, reg.id)
        self.stencil = np.concatenate([self.pts + self.h * _EYE[i] for i in range(3)]
                                      + [self.pts - self.h * _EYE[i] for i in range(3)])
        adm = 1j * permittivity(self.stencil, scene) * f.omega + conductivity(self.stencil, scene)
        self.inv_adm = (1.0 / adm).reshape(6, len(self.pts))
        self._row = self._response_row()

    def _direct(self, s_c, ds_st):
        """Direct part for scalar families; ``s_c`` (nd, K), ``ds_st`` (6 nd, K, 3)."""
        nd = len(self.pts)
        K = s_c.shape[1]
        val = -1j * MU0 * self.f.omega * np.einsum("d,dk->k", self.ws, s_c)[:, None] * self.normal
        ds = ds_st.reshape(6, nd, K, 3) * self.inv_adm[:, :, None, None]
        grad = (ds[:3] - ds[3:]) / (2.0 * self.h)  # [i, d, k, t]
        val = val + np.einsum("d,i,idkt->kt", self.ws, self.normal, grad)
        return val  # (K, 3): polarization t

    def _response_row(self):
        sysm = self.sol.system
        if sysm.size == 0:
            return np.zeros(0, complex)
        pot = sysm.potential(np.zeros(sysm.size))
        a = (3 * pot.weights / (4 * np.pi)) ** (1 / 3)
        G = greens.kernel(self.pts, pot.points, self.f.kappa, a) * pot.weights
        dG = greens.kernel_grad(self.stencil, pot.points, self.f.kappa, a) * pot.weights[:, None]
        # the scattered field is -sum_j g w X_j: X_j e_t has divergence d_t g
        ell = -self._direct(G, dG).ravel()  # index (j, t)
        rows = []
        for c in sysm.carriers:
            W = lattice_W_matrix(c).tocsr()
            idx = (3 * c.active[:, None] + np.arange(3)).ravel()
            rows.append(W[idx])
        y = sla.lu_solve(self.sol.lu, ell, trans=1)  # (I + M)^-T ell
        out = []
        for i, W in enumerate(rows):
            out.append(W.T @ y[sysm.block_slice(i)])
        return out

    def family(self, nodes, dirs, kind) -> np.ndarray:
        """Functional of each ``(node, polarization)`` incident field, shape (n, 3)."""
        kappa = self.f.kappa
        s_c, _ = _family(self.pts, nodes, dirs, kappa, kind)
        _, ds_st = _family(self.stencil, nodes, dirs, kappa, kind)
        val = self._direct(s_c, ds_st)
        for c, r in zip(self.sol.system.carriers, self._row):
            s_lat, _ = _family(c.points, nodes, dirs, kappa, kind)
            val = val + np.einsum("jt,jk->kt", r.reshape(-1, 3), s_lat)
        return val

    def apply(self, source) -> complex:
        """Functional of the receiver-system solution for a kernel-represented source."""
        vals = source.values(self.pts)
        div = np.einsum("nss->n", source.jacobian(self.stencil)).reshape(6, -1) * self.inv_adm
        grad = (div[:3] - div[3:]).T / (2.0 * self.h)
        out = np.sum(self.ws * ((-1j * MU0 * self.f.omega * vals + grad) @ self.normal))
        for c, r in zip(self.sol.system.carriers, self._row):
            out = out + np.sum(r.reshape(-1, 3) * source.values(c.points))
        return complex(out)


def receiver_gvector(scene: SceneLayout, m: int, f: Frequency, grid: SphereGrid,
                     count: int | None = None, solvers: SideSolvers | None = None) -> GVector:
    """Receiver functional of the dipole and point kernels on the receiver sphere."""
    sv = _solvers(scene, f, count, solvers)
    L = ReceiverFunctional(scene, m, f, sv.get("R"))
    nodes = np.asarray(scene.e) + scene.r * grid.directions
    dip = L.family(nodes, grid.directions, "dipole")
    pt = L.family(nodes, grid.directions, "point")
    return GVector("R", m, grid, np.concatenate([dip, pt], axis=1))


# ---------------------------------------------------------------------------
# Environment coupling and the decoupled transfer matrix
# ---------------------------------------------------------------------------
def mid_product(scene: SceneLayout, f: Frequency, gT: GVector, grid_r: SphereGrid,
                solvers: SideSolvers | None = None, env: ScatterSolution | None = None) -> np.ndarray:
    """``b(x_R) = int Mid(x_R, x_T) g_T(x_T) dx_T`` on the receiver grid, shape (n_R, 6).

    The transmitter integral is a single/double layer on the transmitter
    sphere propagated by the environment resolvent.
    """
    sv = solvers
    env = env if env is not None else sv.get("M")
    dirs_t = gT.grid.directions
    layer = ShellLayer(np.asarray(scene.origin) + scene.r * dirs_t, dirs_t, gT.grid.weights,
                       value_density=gT.values[:, :3], radial_density=-gT.values[:, 3:],
                       kappa=f.kappa)
    mfield = env.solve_source(layer)
    nodes = np.asarray(scene.e) + scene.r * grid_r.directions
    b1 = mfield.values(nodes)
    b2 = -np.einsum("nsi,ni->ns", mfield.jacobian(nodes), grid_r.directions)
    return np.concatenate([b1, b2], axis=1)


def mid_spread(scene: SceneLayout, f: Frequency, grid_r: SphereGrid, grid_t: SphereGrid,
               count: int | None = None, solvers: SideSolvers | None = None,
               env: ScatterSolution | None = None) -> np.ndarray:
    """Explicit 6x6 environment blocks ``Mid[x_R, x_T]``, shape (n_R, n_T, 6, 6).

    Block layout: ``[[G, -d_rho G], [-d_rho' G, d_rho' d_rho G]]`` with ``G``
    the environment kernel between ``e + r x_R`` and ``r x_T``.
    """
    sv = _solvers(scene, f, count, solvers)
    env = env if env is not None else sv.get("M")
    nodes_t = np.asarray(scene.origin) + scene.r * grid_t.directions
    nodes_r = np.asarray(scene.e) + scene.r * grid_r.directions
    out = np.zeros((len(nodes_r), len(nodes_t), 6, 6), complex)
    for col, kind in ((0, "point"), (1, "dipole")):
        A, J = _family_field(env, nodes_t, grid_t.directions, kind, nodes_r)
        drp = np.einsum("xnsti,xi->xnst", J, grid_r.directions)
        sgn_col = 1.0 if kind == "point" else -1.0
        out[:, :, 0:3, 3 * col:3 * col + 3] = sgn_col * A
        out[:, :, 3:6, 3 * col:3 * col + 3] = -sgn_col * drp
    return out


def decoupled_transfer(scene: SceneLayout, f: Frequency, grid: SphereGrid | None = None,
                       count: int | None = None, solvers: SideSolvers | None = None,
                       env: ScatterSolution | None = None) -> TransferMatrix:
    """Transfer matrix ``r^4 int int <g_R, Mid g_T>`` on the angular grid."""
    sv = _solvers(scene, f, count, solvers)
    grid = grid or sphere_grid(*scene.solver.angular)
    gts = [transmitter_gvector(scene, n, f, grid, solvers=sv) for n in range(len(scene.transmitters))]
    grs = [receiver_gvector(scene, m, f, grid, solvers=sv) for m in range(len(scene.receivers))]
    H = np.zeros((len(grs), len(gts)), complex)
    for n, gT in enumerate(gts):
        b = mid_product(scene, f, gT, grid, solvers=sv, env=env)
        for m, gR in enumerate(grs):
            H[m, n] = scene.r**4 * np.sum(grid.weights * np.sum(gR.values * b, axis=1))
    return TransferMatrix(H, f, "decoupled", {"angular": [grid.n_theta, grid.n_phi]})


def transfer_from_mid(scene: SceneLayout, gR: GVector, gT: GVector, mid: np.ndarray) -> complex:
    """``r^4 sum w_R w_T <g_R, Mid g_T>`` from an explicit table."""
    prod = np.einsum("rtab,tb->ra", mid, gT.values * gT.grid.weights[:, None])
    return complex(scene.r**4 * np.sum(gR.grid.weights[:, None] * gR.values * prod))


def mid_spread_to_json(mid: np.ndarray, grid_r: SphereGrid, grid_t: SphereGrid) -> str:
    return json.dumps({"grid_R": [grid_r.n_theta, grid_r.n_phi],
                       "grid_T": [grid_t.n_theta, grid_t.n_phi],
                       "re": mid.real.tolist(), "im": mid.imag.tolist()})


# ---------------------------------------------------------------------------
# Reciprocity
# ---------------------------------------------------------------------------
def reciprocity_check(scene: SceneLayout, f: Frequency, count: int | None = None) -> dict:
    """Adjoint mismatch of the time-reversed resolvents, total and per group."""
    count = count or scene.solver.points_per_region
    report = {"frequency_hz": f.f_hz}
    for which in ("total", "T", "M", "R"):
        regs = [r for r in scene.regions if which == "total" or r.group == which]
        report[which] = reciprocity_mismatch(regs, f, count)
    report["W_adjoint"] = max((w_adjoint_mismatch(r, f, count) for r in scene.regions),
                              default=0.0)
    report["max"] = max(report[k] for k in ("total", "T", "M", "R", "W_adjoint"))
    return report
