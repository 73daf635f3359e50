"""Far-field spread of the environment between two small antenna clusters.

The environment kernel splits into the free kernel and a scattering part

    G_M(x, x') = g(x, x') - sum_{u, v} g(x, y_u) w_u t_uv w_v g(y_v, x'),

where ``u`` runs over the environment lattice nodes carrying unknowns, ``v``
over all lattice nodes, and ``w_u t_uv w_v = A_uv w_u`` comes from the
discrete environment operator ``A = (I + M)^-1 W``.  Replacing the outer
kernels by their far-field forms about ``e`` and the origin turns the
scattering part of the decoupled transfer into

    H_scatt = sum_{u, v} h_R(Omega_R(u))^T B_uv h_T(Omega_T(v)),

with ``B_uv = -r^4 w_u w_v t_uv / (16 pi^2 s_R s_T)`` and the h-vectors being
phase-weighted sphere integrals of the g-vectors.  The propagation phases
``exp(j k s)`` are absorbed into ``t``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .channel import TransferMatrix
from .decouple import (GVector, SideSolvers, decoupled_transfer, receiver_gvector,
                       transmitter_gvector)
from .operators import SphereGrid, lattice_W_matrix, sphere_grid
from .scatter import ScatterSolution, build_system, solve_full
from .scene import Frequency, SceneLayout

log = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    pass


@dataclass
class ScatteringKernel:
    """Discrete ``t_M``: off-diagonal pairs ``tau`` plus per-node diagonal ``theta``.

    ``t[u, v]`` is indexed by active nodes ``u`` and lattice nodes ``v``;
    ``diag_v[u]`` is the column index of node ``u`` (the ``delta`` part).
    """

    points_u: np.ndarray
    weights_u: np.ndarray
    points_v: np.ndarray
    weights_v: np.ndarray
    t: np.ndarray  # (n_u, n_v, 3, 3)
    diag_v: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.points_u) == 0

    @property
    def theta(self) -> np.ndarray:
        return self.t[np.arange(len(self.points_u)), self.diag_v]

    @property
    def tau(self) -> np.ndarray:
        out = self.t.copy()
        out[np.arange(len(self.points_u)), self.diag_v] = 0.0
        return out

    def scaled(self, c: complex) -> "ScatteringKernel":
        return ScatteringKernel(self.points_u, self.weights_u, self.points_v, self.weights_v,
                                c * self.t, self.diag_v)


def environment_operator(env: ScatterSolution) -> np.ndarray:
    """``(I + M)^-1 W`` as a dense (3 n_active, 3 n_all) matrix."""
    sysm = env.system
    blocks = []
    for c in sysm.carriers:
        W = lattice_W_matrix(c).tocsr()
        idx = (3 * c.active[:, None] + np.arange(3)).ravel()
        blocks.append(W[idx].toarray())
    if not blocks:
        return np.zeros((0, 0), complex)
    return env.solve_rhs(sla.block_diag(*blocks))


def scattering_kernel(scene: SceneLayout, f: Frequency, env: ScatterSolution | None = None,
                      count: int | None = None) -> ScatteringKernel:
    """Extract the discrete scattering kernel with the far-field phases absorbed."""
    count = count or scene.solver.points_per_region
    if env is None:
        env = solve_full(build_system(scene.scatterers, f, count))
    sysm = env.system
    if sysm.size == 0:
        z = np.zeros((0, 3))
        return ScatteringKernel(z, np.zeros(0), z, np.zeros(0), np.zeros((0, 0, 3, 3), complex),
                                np.zeros(0, int))
    if scene.d_m < 10 * scene.r:
        log.warning("scattering_kernel: D_M = %.3g < 10 r; far-field forms are weak", scene.d_m)
    A = environment_operator(env)
    pu = np.concatenate([c.active_points for c in sysm.carriers])
    wu = np.concatenate([np.full(len(c.active), c.weight) for c in sysm.carriers])
    pv = np.concatenate([c.points for c in sysm.carriers])
    wv = np.concatenate([np.full(len(c), c.weight) for c in sysm.carriers])
    diag, off = [], 0
    for c in sysm.carriers:
        diag.append(off + c.active)
        off += len(c)
    k = f.kappa
    s_r = np.linalg.norm(pu - np.asarray(scene.e), axis=1)
    s_t = np.linalg.norm(pv - np.asarray(scene.origin), axis=1)
    t = A.reshape(len(pu), 3, len(pv), 3).transpose(0, 2, 1, 3) / wv[None, :, None, None]
    t = t * (np.exp(1j * k * s_r)[:, None, None, None] * np.exp(1j * k * s_t)[None, :, None, None])
    return ScatteringKernel(pu, wu, pv, wv, t, np.concatenate(diag))


def reconstruct_kernel(kernel: ScatteringKernel, scene: SceneLayout, f: Frequency, x, xp,
                       farfield: bool = True) -> np.ndarray:
    """Scattering part of ``G_M(x, x')`` (3x3) rebuilt from the kernel.

    With ``farfield`` the outer kernels use their far-field forms about ``e``
    (for ``x``) and the origin (for ``x'``); otherwise the exact kernels are
    used, which reproduces the discrete environment kernel exactly.
    """
    if kernel.empty:
        return np.zeros((3, 3), complex)
    k = f.kappa
    x, xp = np.asarray(x, float), np.asarray(xp, float)
    e, o = np.asarray(scene.e, float), np.asarray(scene.origin, float)
    s_r = np.linalg.norm(kernel.points_u - e, axis=1)
    s_t = np.linalg.norm(kernel.points_v - o, axis=1)
    if farfield:
        om_r = (kernel.points_u - e) / s_r[:, None]
        om_t = (kernel.points_v - o) / s_t[:, None]
        a = np.exp(-1j * k * om_r @ (x - e)) / (4 * np.pi * s_r)
        b = np.exp(-1j * k * om_t @ (xp - o)) / (4 * np.pi * s_t)
    else:
        d_u = np.linalg.norm(kernel.points_u - x, axis=1)
        d_v = np.linalg.norm(kernel.points_v - xp, axis=1)
        a = np.exp(1j * k * (d_u - s_r)) / (4 * np.pi * d_u)
        b = np.exp(1j * k * (d_v - s_t)) / (4 * np.pi * d_v)
    return -np.einsum("u,uvst,v->st", a * kernel.weights_u, kernel.t, b * kernel.weights_v)


# ---------------------------------------------------------------------------
# Spread table and h-vectors
# ---------------------------------------------------------------------------
@dataclass
class SpreadTable:
    """Spread blocks on the native node directions.

    ``blocks[u, v]`` (3x3) multiplies ``h_R1 + h_R2`` at ``omega_r[u]`` and
    ``h_T1 + h_T2`` at ``omega_t[v]``; the 6x6 form is ``blocks (x) [[1,1],[1,1]]``.
    """

    omega_r: np.ndarray
    omega_t: np.ndarray
    s_r: np.ndarray
    s_t: np.ndarray
    blocks: np.ndarray

    def six_by_six(self, u: int, v: int) -> np.ndarray:
        return np.kron(np.ones((2, 2)), self.blocks[u, v])

    def binned(self, grid_r: SphereGrid, grid_t: SphereGrid) -> np.ndarray:
        """Angular view: blocks summed into the nearest grid directions (n_R, n_T, 6, 6)."""
        out = np.zeros((len(grid_r), len(grid_t), 3, 3), complex)
        if len(self.omega_r):
            iu = np.argmax(self.omega_r @ grid_r.directions.T, axis=1)
            iv = np.argmax(self.omega_t @ grid_t.directions.T, axis=1)
            for u in range(len(iu)):
                np.add.at(out[iu[u]], iv, self.blocks[u])
        return np.kron(np.ones((1, 1, 2, 2)), out)

    def to_json(self) -> str:
        return json.dumps({"omega_R": self.omega_r.tolist(), "omega_T": self.omega_t.tolist(),
                           "s_R": self.s_r.tolist(), "s_T": self.s_t.tolist(),
                           "re": self.blocks.real.tolist(), "im": self.blocks.imag.tolist()})


def spread_matrix(kernel: ScatteringKernel, scene: SceneLayout, f: Frequency) -> SpreadTable:
    e, o = np.asarray(scene.e, float), np.asarray(scene.origin, float)
    if kernel.empty:
        z = np.zeros((0, 3))
        return SpreadTable(z, z, np.zeros(0), np.zeros(0), np.zeros((0, 0, 3, 3), complex))
    s_r = np.linalg.norm(kernel.points_u - e, axis=1)
    s_t = np.linalg.norm(kernel.points_v - o, axis=1)
    scale = -scene.r**4 / (16 * np.pi**2)
    B = kernel.t * (scale * (kernel.weights_u / s_r)[:, None] * (kernel.weights_v / s_t)[None, :]
                    )[:, :, None, None]
    return SpreadTable((kernel.points_u - e) / s_r[:, None], (kernel.points_v - o) / s_t[:, None],
                       s_r, s_t, B)


@dataclass
class HVector:
    side: str
    antenna: int
    directions: np.ndarray
    values: np.ndarray  # (n_dirs, 6)

    @property
    def summed(self) -> np.ndarray:
        return self.values[:, :3] + self.values[:, 3:]


def h_vectors(gvec: GVector, f: Frequency, r: float, directions) -> HVector:
    """Phase-weighted sphere integrals of a g-vector at the given directions."""
    dirs = np.atleast_2d(np.asarray(directions, float))
    k = f.kappa
    mu = dirs @ gvec.grid.directions.T  # (n_dirs, n_grid)
    phase = np.exp(-1j * k * r * mu) * gvec.grid.weights[None, :]
    h1 = phase @ gvec.values[:, :3]
    h2 = (1j * k * mu * phase) @ gvec.values[:, 3:]
    return HVector(gvec.side, gvec.antenna, dirs, np.concatenate([h1, h2], axis=1))


def scatt_transfer(table: SpreadTable, h_r: list[HVector], h_t: list[HVector],
                   f: Frequency) -> TransferMatrix:
    """``H_scatt[m, n] = sum_uv h_R^(m)(u)^T B_uv h_T^(n)(v)`` on native directions."""
    H = np.zeros((len(h_r), len(h_t)), complex)
    for hv in h_r:
        if hv.directions.shape != table.omega_r.shape or not np.allclose(hv.directions, table.omega_r):
            raise GridMismatchError("receiver h-vectors are not on the table's directions")
    for hv in h_t:
        if hv.directions.shape != table.omega_t.shape or not np.allclose(hv.directions, table.omega_t):
            raise GridMismatchError("transmitter h-vectors are not on the table's directions")
    for m, hr in enumerate(h_r):
        for n, ht in enumerate(h_t):
            H[m, n] = np.einsum("us,uvst,vt->", hr.summed, table.blocks, ht.summed)
    return TransferMatrix(H, f, "spread-farfield")


# ---------------------------------------------------------------------------
# End-to-end helpers
# ---------------------------------------------------------------------------
@dataclass
class FarFieldReport:
    free: np.ndarray
    scatt: np.ndarray
    bound: float

    def total(self) -> np.ndarray:
        return self.free + self.scatt


def _empty_env(f: Frequency, count: int) -> ScatterSolution:
    return solve_full(build_system([], f, count))


def farfield_scatt(scene: SceneLayout, f: Frequency, grid: SphereGrid | None = None,
                   count: int | None = None, solvers: SideSolvers | None = None) -> FarFieldReport:
    """Free part (exact) and far-field scattering part of the decoupled transfer."""
    count = count or scene.solver.points_per_region
    sv = solvers or SideSolvers(scene, f, count)
    grid = grid or sphere_grid(*scene.solver.angular)
    free = decoupled_transfer(scene, f, grid, solvers=sv, env=_empty_env(f, count)).entries
    kern = scattering_kernel(scene, f, env=sv.get("M"))
    N, M = len(scene.transmitters), len(scene.receivers)
    if kern.empty:
        return FarFieldReport(free, np.zeros((M, N), complex), 0.0)
    table = spread_matrix(kern, scene, f)
    h_t = [h_vectors(transmitter_gvector(scene, n, f, grid, solvers=sv), f, scene.r, table.omega_t)
           for n in range(N)]
    h_r = [h_vectors(receiver_gvector(scene, m, f, grid, solvers=sv), f, scene.r, table.omega_r)
           for m in range(M)]
    Hs = scatt_transfer(table, h_r, h_t, f).entries
    k = abs(f.kappa)
    bound = float(np.abs(Hs).max() * (scene.r + k * scene.r**2) / scene.d_m)
    return FarFieldReport(free, Hs, bound)


def farfield_transfer(scene: SceneLayout, f: Frequency, grid: SphereGrid | None = None,
                      count: int | None = None) -> TransferMatrix:
    rep = farfield_scatt(scene, f, grid, count)
    return TransferMatrix(rep.total(), f, "spread-farfield",
                          {"scatt_bound": rep.bound, "scatt": [rep.scatt.real.tolist(),
                                                               rep.scatt.imag.tolist()]})


def theorem1_scatt(scene: SceneLayout, f: Frequency, grid: SphereGrid | None = None,
                   count: int | None = None, solvers: SideSolvers | None = None) -> np.ndarray:
    """Reference scattering part: decoupled transfer minus its free-space part."""
    count = count or scene.solver.points_per_region
    sv = solvers or SideSolvers(scene, f, count)
    grid = grid or sphere_grid(*scene.solver.angular)
    full = decoupled_transfer(scene, f, grid, solvers=sv).entries
    free = decoupled_transfer(scene, f, grid, solvers=sv, env=_empty_env(f, count)).entries
    return full - free


def decay_slope(distances, values) -> tuple[float, float]:
    """Least-squares slope and R^2 of ``log|values|`` against ``log distances``."""
    x, y = np.log(np.asarray(distances, float)), np.log(np.abs(np.asarray(values)))
    p = np.polyfit(x, y, 1)
    resid = y - np.polyval(p, x)
    ss = np.sum((y - y.mean()) ** 2)
    return float(p[0]), float(1 - np.sum(resid**2) / ss) if ss > 0 else 1.0


def scene_at_dm(scene: SceneLayout, target: float) -> SceneLayout:
    """Move all scatterers radially about the TX/RX midpoint so ``d_m == target``."""
    from scipy.optimize import brentq

    mid = 0.5 * (np.asarray(scene.origin, float) + np.asarray(scene.e, float))
    scat = scene.scatterers
    fixed = [reg for reg in scene.regions if reg.role != "scatterer"]

    def build(lam: float) -> SceneLayout:
        moved = [reg.moved(mid + lam * (np.asarray(reg.center, float) - mid)) for reg in scat]
        return scene.with_regions(fixed + moved)

    hi = 2.0
    while build(hi).d_m < target:
        hi *= 2.0
    lam = brentq(lambda s: build(s).d_m - target, 1e-3, hi, xtol=1e-12)
    return build(lam).validate()


@dataclass
class DistanceSweep:
    d_m: np.ndarray
    gap: np.ndarray
    magnitude: np.ndarray
    path: np.ndarray  # mean sqrt(s_R s_T) over scatterer centres

    @property
    def gap_slope(self) -> tuple[float, float]:
        return decay_slope(self.d_m, self.gap)

    @property
    def magnitude_slope(self) -> tuple[float, float]:
        return decay_slope(self.d_m, self.magnitude)

    def report(self) -> dict:
        gs, gr = self.gap_slope
        ms, mr = self.magnitude_slope
        return {"d_m": self.d_m.tolist(), "gap": self.gap.tolist(),
                "magnitude": self.magnitude.tolist(), "gap_slope": gs, "gap_r2": gr,
                "magnitude_slope": ms, "magnitude_r2": mr, "slope_difference": ms - gs,
                "path": self.path.tolist(),
                "slope_difference_vs_path": decay_slope(self.path, self.magnitude)[0]
                - decay_slope(self.path, self.gap)[0]}


def dm_sweep(scene: SceneLayout, f: Frequency, multipliers=(1, 2, 4),
             grid: SphereGrid | None = None, count: int | None = None) -> DistanceSweep:
    """Far-field gap against the Theorem-1 scattering part over scaled ``D_M``."""
    if not scene.scatterers:
        raise ValueError("dm_sweep needs at least one scatterer")
    grid = grid or sphere_grid(*scene.solver.angular)
    d0 = scene.d_m
    d, gap, mag, path = [], [], [], []
    for mult in multipliers:
        sc = scene_at_dm(scene, mult * d0)
        sv = SideSolvers(sc, f, count or sc.solver.points_per_region)
        ref = theorem1_scatt(sc, f, grid, count, sv)
        ff = farfield_scatt(sc, f, grid, count, sv)
        d.append(sc.d_m)
        c = np.array([reg.center for reg in sc.scatterers], float)
        path.append(float(np.mean(np.sqrt(np.linalg.norm(c - np.asarray(sc.e, float), axis=1)
                                          * np.linalg.norm(c - np.asarray(sc.origin, float), axis=1)))))
        gap.append(float(np.abs(ff.scatt - ref).max()))
        mag.append(float(np.abs(ref).max()))
        log.info("dm_sweep: D_M=%.4g gap=%.3e |H_scatt|=%.3e", sc.d_m, gap[-1], mag[-1])
    return DistanceSweep(np.array(d), np.array(gap), np.array(mag), np.array(path))
