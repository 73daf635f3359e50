"""Block Lippmann-Schwinger solver for a set of scattering regions.

Unknowns are ``X = W A`` at the interior lattice nodes of every region,
three components per node.  With ``G`` the kernel matrix and ``D`` the cell
volumes the system reads ``(I + W G D) X = W u0`` where ``u0 = R0 J`` is the
incident field; the total field is ``A = u0 - G D X``.  Splitting ``M = W G D``
into its diagonal region blocks ``M_d`` and the rest ``M_o`` gives the
multiple-scattering series ``X = sum_i (-1)^i (I + M_d)^-1 K^i b`` with
``K = M_o (I + M_d)^-1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import greens
from .operators import (Carrier, FieldSum, Potential, assemble_block, build_carrier,
                        lattice_W_apply, lattice_W_matrix, lattice_W_tilde_matrix)
from .scene import (Frequency, Region, SceneLayout, SourceCurrent, normalized_current,
                    sample_region)

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class ResonanceError(RuntimeError):
    """Raised when ``I + M`` is numerically singular at the requested frequency."""

    def __init__(self, f: Frequency, cond: float):
        super().__init__(f"near-singular system at f = {f.f_hz:.6g} Hz "
                         f"(condition estimate {cond:.3g})")
        self.frequency = f
        self.cond = cond


class BornDivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------
def current_source(current: SourceCurrent, region: Region, f: Frequency, count: int,
                   subgrid: int = 6) -> Potential:
    """Lattice representation of a feed current on its transmitter's lattice.

    Each interior cell carries the average of the density over the cell,
    computed on a ``subgrid**3`` midpoint grid.
    """
    cset = sample_region(region, count).interior()
    h = cset.spacing
    off = (np.arange(subgrid) + 0.5) / subgrid - 0.5
    sub = h * np.stack(np.meshgrid(off, off, off, indexing="ij"), -1).reshape(-1, 3)
    dens = np.zeros((len(cset), 3), complex)
    for lo in range(0, len(cset), 256):
        pts = (cset.points[lo:lo + 256, None, :] + sub[None]).reshape(-1, 3)
        vals = current.density(pts).reshape(-1, len(sub), 3)
        dens[lo:lo + 256] = vals.mean(axis=1)
    return Potential(cset.points, cset.weights, dens, f.kappa)


def antenna_source(scene: SceneLayout, n: int, f: Frequency, count: int | None = None) -> Potential:
    count = count or scene.solver.points_per_region
    cur = normalized_current(n, scene)
    return current_source(cur, scene.transmitters[n], f, count)


# ---------------------------------------------------------------------------
# Block system
# ---------------------------------------------------------------------------
@dataclass
class BlockSystem:
    """Assembled ``M = W G D`` over the active nodes of a list of regions."""

    frequency: Frequency
    carriers: list[Carrier]
    matrix: np.ndarray
    offsets: np.ndarray

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def block_slice(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    @property
    def region_ids(self) -> list[str]:
        return [c.region.id for c in self.carriers]

    def diagonal_part(self) -> np.ndarray:
        out = np.zeros_like(self.matrix)
        for i in range(len(self.carriers)):
            s = self.block_slice(i)
            out[s, s] = self.matrix[s, s]
        return out

    def off_diagonal_part(self) -> np.ndarray:
        return self.matrix - self.diagonal_part()

    def incident(self, source) -> np.ndarray:
        """``b = W u0`` at the active nodes for an incident field ``source``."""
        b = np.zeros(self.size, complex)
        for i, c in enumerate(self.carriers):
            u0 = source.values(c.points)
            rows = lattice_W_apply(c, u0)[c.active]
            b[self.block_slice(i)] = rows.ravel()
        return b

    def potential(self, X: np.ndarray, kappa: complex | None = None) -> Potential:
        """``sum_j g(., y_j) w_j X_j`` over all active nodes."""
        kappa = self.frequency.kappa if kappa is None else kappa
        if not self.carriers:
            return Potential(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)), kappa)
        pts = np.concatenate([c.active_points for c in self.carriers])
        wts = np.concatenate([np.full(len(c.active), c.weight) for c in self.carriers])
        return Potential(pts, wts, np.asarray(X).reshape(-1, 3), kappa)


def build_system(regions: Sequence[Region], f: Frequency, count: int,
                 tilde: bool = False, full: bool = False) -> BlockSystem:
    """Assemble the block system for ``regions``.

    ``tilde`` assembles the time-reversed operator (pass the reversed
    frequency); it forces ``full`` so the padding nodes carry unknowns.
    """
    full = full or tilde
    carriers = [build_carrier(reg, f, count, full) for reg in regions]
    sizes = [3 * len(c.active) for c in carriers]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    M = np.zeros((offsets[-1], offsets[-1]), complex)
    for i, ci in enumerate(carriers):
        for k, ck in enumerate(carriers):
            M[offsets[i]:offsets[i + 1], offsets[k]:offsets[k + 1]] = \
                assemble_block(ci, ck, f, tilde=tilde).entries
    return BlockSystem(f, carriers, M, offsets)


def scene_system(scene: SceneLayout, f: Frequency, which: str = "total",
                 count: int | None = None) -> BlockSystem:
    """Block system of the whole scene or of one group (``'T'``, ``'M'``, ``'R'``)."""
    count = count or scene.solver.points_per_region
    regs = [r for r in scene.regions if which == "total" or r.group == which]
    return build_system(regs, f, count)


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------
@dataclass
class SolvedField:
    """Total field ``u0 - G D X`` produced by one solve."""

    incident: object
    scattered: Potential
    coefficients: np.ndarray

    def field(self) -> FieldSum:
        return FieldSum([self.incident, self.scattered.scaled(-1.0)])

    def values(self, x) -> np.ndarray:
        return self.field().values(x)

    def jacobian(self, x) -> np.ndarray:
        return self.field().jacobian(x)


@dataclass
class ScatterSolution:
    """Factorized ``I + M`` with diagnostics; solves any number of sources."""

    system: BlockSystem
    lu: tuple | None
    condition: float
    mode: str = "direct"
    contraction: float | None = None

    @property
    def frequency(self) -> Frequency:
        return self.system.frequency

    def solve_rhs(self, b: np.ndarray) -> np.ndarray:
        if self.system.size == 0:
            return np.zeros_like(b)
        return sla.lu_solve(self.lu, b)

    def solve_source(self, source) -> SolvedField:
        X = self.solve_rhs(self.system.incident(source))
        return SolvedField(source, self.system.potential(X), X)

    def restrict_source(self, source: Potential) -> Potential:
        """Keep the part of a lattice source lying inside this system's regions."""
        keep = np.zeros(len(source.points), bool)
        for c in self.system.carriers:
            keep |= c.region.inside(source.points)
        return Potential(source.points[keep], source.weights[keep], source.density[keep],
                         source.kappa, source.cells)

    def coupling(self) -> np.ndarray:
        """``(I + M)^-1``: maps incident data ``W u0`` to the unknowns ``W A``."""
        return self.solve_rhs(np.eye(self.system.size, dtype=complex))

    def report(self) -> dict:
        return {"frequency_hz": self.frequency.f_hz, "unknowns": self.system.size,
                "regions": self.system.region_ids, "condition_estimate": self.condition,
                "contraction_estimate": self.contraction, "mode": self.mode}


def _factor(A: np.ndarray, f: Frequency) -> tuple[tuple, float]:
    lu = sla.lu_factor(A, check_finite=False)
    anorm = np.linalg.norm(A, 1)
    rcond, info = sla.lapack.zgecon(lu[0], anorm, norm="1")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ResonanceError(f, cond)
    return lu, float(cond)


def solve_full(system: BlockSystem) -> ScatterSolution:
    """Factorize ``I + M`` (dense LU) after checking its conditioning."""
    if system.size == 0:
        return ScatterSolution(system, None, 1.0)
    lu, cond = _factor(np.eye(system.size) + system.matrix, system.frequency)
    log.info("solve_full: f=%.6g Hz unknowns=%d cond=%.3e", system.frequency.f_hz,
             system.size, cond)
    return ScatterSolution(system, lu, cond)


def subsystem_resolvent(scene: SceneLayout, f: Frequency, which: str,
                        count: int | None = None) -> ScatterSolution:
    """Solution operator of ``-Delta + W_which - z`` (``which`` in T, M, R, total)."""
    return solve_full(scene_system(scene, f, which, count))


def t_single(system: BlockSystem, i: int) -> np.ndarray:
    """``T_i = (I + M_ii)^-1 W_i`` as a dense matrix on the lattice of region ``i``.

    Columns act on lattice values of the incident field (all nodes, padding
    included); rows are interior nodes.
    """
    c = system.carriers[i]
    s = system.block_slice(i)
    lu, _ = _factor(np.eye(s.stop - s.start) + system.matrix[s, s], system.frequency)
    rows = (3 * c.active[:, None] + np.arange(3)).ravel()
    W = lattice_W_matrix(c).toarray()[rows]
    return sla.lu_solve(lu, W)


# ---------------------------------------------------------------------------
# Multiple-scattering series
# ---------------------------------------------------------------------------
@dataclass
class BornResult:
    partial_sums: list[np.ndarray]
    term_norms: list[float]
    contraction: float
    ratios: list[float] = field(default_factory=list)

    @property
    def decay_ratio(self) -> float:
        """Geometric-mean two-step decay of the last computed terms."""
        n = self.term_norms
        if len(n) < 3 or n[-3] == 0:
            return 0.0
        return math.sqrt(n[-1] / n[-3])

    def report(self) -> dict:
        return {"contraction_estimate": self.contraction, "term_norms": self.term_norms,
                "ratios": self.ratios, "decay_ratio": self.decay_ratio}


class _DiagonalInverse:
    def __init__(self, system: BlockSystem):
        self.system = system
        self.lus = []
        for i in range(len(system.carriers)):
            s = system.block_slice(i)
            lu, _ = _factor(np.eye(s.stop - s.start) + system.matrix[s, s], system.frequency)
            self.lus.append(lu)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        for i, lu in enumerate(self.lus):
            s = self.system.block_slice(i)
            out[s] = sla.lu_solve(lu, v[s])
        return out


def contraction_estimate(system: BlockSystem, steps: int = 20,
                         inv: _DiagonalInverse | None = None) -> float:
    """Spectral-radius proxy of ``M_o (I + M_d)^-1`` by power iteration.

    Uses the two-step growth ratio, which is insensitive to the sign-paired
    eigenvalues typical of two-body coupling.
    """
    if len(system.carriers) < 2:
        return 0.0
    inv = inv or _DiagonalInverse(system)
    Mo = system.off_diagonal_part()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(system.size) + 1j * rng.standard_normal(system.size)
    x /= np.linalg.norm(x)
    norms = []
    for _ in range(steps):
        y = Mo @ inv(x)
        nrm = np.linalg.norm(y)
        norms.append(nrm)
        if nrm == 0:
            return 0.0
        x = y / nrm
    return float(math.sqrt(norms[-1] * norms[-2]))


def born_series(system: BlockSystem, b: np.ndarray, max_order: int) -> BornResult:
    """Partial sums of ``sum_i (-1)^i (I + M_d)^-1 K^i b``, ``K = M_o (I + M_d)^-1``.

    Order ``i`` collects every path of ``i`` hops between distinct regions.
    """
    inv = _DiagonalInverse(system)
    rho = contraction_estimate(system, inv=inv)
    if rho >= 1.0:
        log.warning("born_series: contraction estimate %.3f >= 1; series may diverge", rho)
    Mo = system.off_diagonal_part()
    v = b.astype(complex)
    total = np.zeros_like(v)
    sums, norms, ratios = [], [], []
    growth = 0
    for order in range(max_order + 1):
        term = inv(v)
        total = total + (-1) ** order * term
        sums.append(total.copy())
        nrm = float(np.linalg.norm(term))
        if norms:
            ratios.append(nrm / norms[-1] if norms[-1] else 0.0)
            growth = growth + 1 if nrm > norms[-1] else 0
            if growth >= 3:
                raise BornDivergenceError(f"series terms grew for 3 consecutive orders "
                                          f"(order {order})")
        norms.append(nrm)
        v = Mo @ term
    log.info("born_series: order=%d contraction=%.3e last term=%.3e", max_order, rho, norms[-1])
    return BornResult(sums, norms, rho, ratios)


def born_solution(system: BlockSystem, source, max_order: int) -> tuple[SolvedField, BornResult]:
    res = born_series(system, system.incident(source), max_order)
    X = res.partial_sums[-1]
    return SolvedField(source, system.potential(X), X), res


# ---------------------------------------------------------------------------
# Resolvent evaluation and discrete operators
# ---------------------------------------------------------------------------
def resolvent_field(sol: ScatterSolution, source, points, derivatives: bool = False):
    """``A = R0 J - sum R0 chi_n A_nm chi_m R0 J`` at arbitrary points.

    Returns values (n, 3), and with ``derivatives`` also the Jacobian
    (n, 3, 3).  The second element of the tuple flags points that sit on a
    lattice node of a solved region (evaluated with the cell rule).
    """
    solved = sol.solve_source(source)
    pts = np.atleast_2d(points)
    flagged = np.zeros(len(pts), bool)
    for c in sol.system.carriers:
        d = np.linalg.norm(pts[:, None, :] - c.active_points[None], axis=-1)
        flagged |= np.any(d < 1e-12 * c.spacing + 1e-300, axis=1)
    vals = solved.values(pts)
    if derivatives:
        return vals, solved.jacobian(pts), flagged
    return vals, flagged


def lattice_resolvent(system: BlockSystem, sol: ScatterSolution | None = None) -> np.ndarray:
    """Discrete solution operator ``G D (I + M)^-1`` on the active nodes.

    Maps a source density at the nodes to the field at the same nodes.
    """
    sol = sol or solve_full(system)
    pot_pts = np.concatenate([c.active_points for c in system.carriers])
    wts = np.concatenate([np.full(len(c.active), c.weight) for c in system.carriers])
    G = greens.kernel(pot_pts, pot_pts, system.frequency.kappa, (3 * wts / (4 * np.pi)) ** (1 / 3))
    GD = np.kron(G * wts[None, :], np.eye(3))
    # G D (I + M)^-1 = ((I + M)^-T (G D)^T)^T
    return sla.lu_solve(sol.lu, GD.T, trans=1).T


def tilde_system(regions: Sequence[Region], f: Frequency, count: int) -> BlockSystem:
    """Block system of the time-reversed operator ``W~`` at ``-omega``."""
    return build_system(regions, f.reversed(), count, tilde=True)


def reciprocity_mismatch(regions: Sequence[Region], f: Frequency, count: int) -> float:
    """``|| D^-1 R~^H D - R || / || R ||`` for the discrete resolvents."""
    if not regions:
        return 0.0
    fwd = build_system(regions, f, count, full=True)
    rev = tilde_system(regions, f, count)
    R = lattice_resolvent(fwd)
    Rt = lattice_resolvent(rev)
    w = np.concatenate([np.full(3 * len(c.active), c.weight) for c in fwd.carriers])
    lhs = (Rt.conj().T * w[None, :]) / w[:, None]
    return float(np.linalg.norm(lhs - R) / np.linalg.norm(R))


def w_adjoint_mismatch(region: Region, f: Frequency, count: int) -> float:
    """``|| (W~ at -omega)^H - W || / || W ||`` on one lattice."""
    W = lattice_W_matrix(build_carrier(region, f, count))
    Wt = lattice_W_tilde_matrix(build_carrier(region, f.reversed(), count))
    nrm = np.abs(W).max()
    return 0.0 if nrm == 0 else float(np.abs(Wt.conj().T - W).max() / nrm)
