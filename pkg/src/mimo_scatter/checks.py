"""Verification suite shared by ``mimo-scatter verify`` and the acceptance tests.

Every check returns a :class:`CheckResult` holding the measured quantities,
the tolerance it was judged against and a pass flag.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import channel, decouple, greens, spread
from .operators import sphere_grid
from .scatter import antenna_source, born_series, scene_system, solve_full
from .scene import (Frequency, MaterialProfile, Region, SceneLayout, SolverConfig, WireSection,
                    normalized_current)

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: dict
    tolerance: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.tolerance}"

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "seconds": self.seconds}


# ---------------------------------------------------------------------------
# Reference scenes
# ---------------------------------------------------------------------------
def _region(rid, role, center, delta_eps, sigma, radius, wire=True):
    w = WireSection(center, (0, 0, 1), 0.2 * radius, 0.5 * radius) if wire else None
    return Region(rid, role, center, MaterialProfile(role, delta_eps, sigma, radius), w)


def desk_scene(scale: float = 1.0, scatterers: bool = True, sigma: float = 1.0,
               d_tr: float = 5.0, count: int = 100) -> SceneLayout:
    """Two small antennas 5 m apart with two dielectric scatterers off axis."""
    regs = [_region("tx0", "transmitter", (0, 0, 0), 0.5, sigma, 0.1 * scale),
            _region("rx0", "receiver", (d_tr, 0, 0), 0.5, sigma, 0.1 * scale)]
    if scatterers:
        regs += [_region("m1", "scatterer", (2, 3, 0), 1.0, 0.0, 0.25, wire=False),
                 _region("m2", "scatterer", (3, -3, 0), 1.0, 0.0, 0.25, wire=False)]
    return SceneLayout(tuple(regs), (0, 0, 0), (d_tr, 0, 0), 0.5,
                       frequency=Frequency.from_hz(3e8),
                       solver=SolverConfig(points_per_region=count)).validate()


def scene_frequency(scene: SceneLayout) -> Frequency:
    return scene.frequency or Frequency.from_hz(3e8)


def _fit(x, y) -> tuple[float, float]:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    p = np.polyfit(lx, ly, 1)
    ss = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum((ly - np.polyval(p, lx)) ** 2) / ss if ss > 0 else 1.0
    return float(p[0]), float(r2)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------
def helmholtz_residual(k0: float, n_points: int = 100, h0: float = 0.04, levels: int = 4,
                       seed: int = 0) -> dict:
    """Seven-point ``(-Lap - k0^2) g0`` at random off-diagonal pairs under step halving."""
    rng = np.random.default_rng(seed)
    y = rng.uniform(-1, 1, (n_points, 3))
    u = rng.standard_normal((n_points, 3))
    u /= np.linalg.norm(u, axis=1)[:, None]
    x = y + rng.uniform(0.5, 2.0, n_points)[:, None] * u
    steps, res = [], []
    g = lambda p: np.exp(1j * k0 * np.linalg.norm(p - y, axis=1)) / (4 * np.pi * np.linalg.norm(p - y, axis=1))
    g_x = g(x)
    for i in range(levels):
        h = h0 / 2**i
        lap = sum(g(x + h * e) + g(x - h * e) for e in np.eye(3)) - 6 * g_x
        r = -lap / h**2 - k0**2 * g_x
        steps.append(h)
        res.append(float(np.max(np.abs(r) / (k0**2 * np.abs(g_x)))))
    order, r2 = _fit(steps, res)
    return {"steps": steps, "relative_residuals": res, "order": order, "r2": r2}


def check_green(scene: SceneLayout) -> CheckResult:
    m = helmholtz_residual(scene_frequency(scene).k0)
    return CheckResult("green", abs(m["order"] - 2.0) <= 0.3, m, "order 2.0 +- 0.3")


def check_oracle(scene: SceneLayout, order: int | None = None) -> CheckResult:
    """Born series against the direct block solve for the first transmitter."""
    f = scene_frequency(scene)
    order = order or scene.solver.born_order
    system = scene_system(scene, f, "total")
    source = antenna_source(scene, 0, f)
    b = system.incident(source)
    direct = solve_full(system).solve_rhs(b)
    born = born_series(system, b, order)
    err = float(np.linalg.norm(born.partial_sums[-1] - direct) / np.linalg.norm(direct))
    rho, ratio = born.contraction, born.decay_ratio
    ratio_dev = abs(ratio - rho) / rho if rho > 0 else 0.0
    ok = rho <= 0.5 and err <= 1e-6 and ratio_dev <= 0.3
    return CheckResult("oracle", ok, {"relative_error": err, "contraction": rho,
                                      "decay_ratio": ratio, "ratio_deviation": ratio_dev,
                                      "order": order, "unknowns": system.size},
                       "contraction <= 0.5, error <= 1e-6, decay ratio within 30%")


LEMMA1_LEVELS = ((3, 6, 12), (4, 8, 16), (5, 10, 20))


def check_lemma1(scene: SceneLayout, levels=LEMMA1_LEVELS) -> CheckResult:
    f = scene_frequency(scene)
    sv = decouple.SideSolvers(scene, f, scene.solver.points_per_region)
    disc = [decouple.lemma1_factorized(scene, f, 0, lv, solvers=sv).discrepancy for lv in levels]
    factors = [disc[i] / disc[i + 1] for i in range(len(disc) - 1)]
    ok = all(q >= 2.0 for q in factors)
    return CheckResult("lemma1", ok, {"levels": [list(lv) for lv in levels], "discrepancy": disc,
                                      "reduction_factors": factors},
                       ">= 2x reduction per refinement level")


LEMMA2_SCALES = (1.0, 0.5, 0.25, 0.125)


def scaled_antennas(scene: SceneLayout, s: float) -> SceneLayout:
    regs = [reg.scaled(s) if reg.role != "scatterer" else reg for reg in scene.regions]
    return scene.with_regions(regs).validate()


def check_lemma2(scene: SceneLayout, scales=LEMMA2_SCALES) -> CheckResult:
    f = scene_frequency(scene)
    rows = [decouple.lemma2_error(scaled_antennas(scene, s), f) for s in scales]
    err = [r["error"] for r in rows]
    vol = [r["volume"] for r in rows]
    slope, r2 = _fit(np.sqrt(vol), err)
    return CheckResult("lemma2", slope >= 0.45 and r2 >= 0.9,
                       {"scales": list(scales), "error": err,
                        "error_direct": [r["error_direct"] for r in rows], "volume": vol,
                        "slope": slope, "r2": r2}, "slope >= 0.45 and R^2 >= 0.9")


DM_MULTIPLIERS = (1, 2, 4)


def check_farfield(scene: SceneLayout, multipliers=DM_MULTIPLIERS) -> CheckResult:
    f = scene_frequency(scene)
    sw = spread.dm_sweep(scene, f, multipliers)
    rep = sw.report()
    return CheckResult("farfield", rep["slope_difference"] >= 1.0, rep,
                       "gap slope >= 1 steeper than |H_scatt| slope in D_M")


def check_reciprocity(scene: SceneLayout, count: int = 40) -> CheckResult:
    f = scene_frequency(scene)
    with_sigma = decouple.reciprocity_check(scene, f, count)
    no_sigma = scene.with_regions([replace(reg, profile=replace(reg.profile, sigma_peak=0.0))
                                   for reg in scene.regions])
    without = decouple.reciprocity_check(no_sigma, f, count)
    worst = max(with_sigma["max"], without["max"])
    return CheckResult("reciprocity", worst <= 1e-8,
                       {"with_sigma": with_sigma, "without_sigma": without, "max": worst},
                       "relative mismatch <= 1e-8")


def check_gvector(scene: SceneLayout, angular=(8, 16)) -> CheckResult:
    """g-vectors are unchanged when the scatterers are removed or altered."""
    f = scene_frequency(scene)
    grid = sphere_grid(*angular)
    variants = [scene, scene.without("scatterer"),
                scene.with_regions([reg.moved(np.asarray(reg.center) * 1.5)
                                    if reg.role == "scatterer" else reg for reg in scene.regions])]
    gt = [decouple.transmitter_gvector(sc, 0, f, grid).values for sc in variants]
    gr = [decouple.receiver_gvector(sc, 0, f, grid).values for sc in variants]
    diff = max(float(np.abs(a - gt[0]).max() / np.abs(gt[0]).max()) for a in gt[1:])
    diff = max(diff, max(float(np.abs(a - gr[0]).max() / np.abs(gr[0]).max()) for a in gr[1:]))
    return CheckResult("gvector", diff <= 1e-12, {"max_relative_difference": diff},
                       "relative difference <= 1e-12")


def check_closed_forms(scene: SceneLayout) -> CheckResult:
    f = scene_frequency(scene)
    empty = scene.without("scatterer")
    rep = spread.farfield_scatt(empty, f, sphere_grid(4, 8))
    h_empty = float(np.abs(rep.scatt).max()) if rep.scatt.size else 0.0
    cap = channel.capacity(np.eye(2), 3.0)
    cap_err = abs(cap - 2 * math.log2(2.5))
    nc = normalized_current(0, scene)
    flux_err = abs(nc.flux(*scene.solver.disc) - 1.0)
    ok = h_empty == 0.0 and cap_err <= 1e-12 and flux_err <= 1e-10
    return CheckResult("closed_forms", ok, {"empty_scatt": h_empty, "capacity_error": cap_err,
                                            "flux_error": flux_err},
                       "H_scatt == 0, capacity +- 1e-12, flux +- 1e-10")


def check_maxwell(scene: SceneLayout, h: float = 0.02, levels: int = 3) -> CheckResult:
    """Five-equation residuals at probes outside all supports.

    Inside a support the field carries the lattice discretization error, which
    does not vanish under probe-step halving.
    """
    f = scene_frequency(scene)
    A = channel.vector_potential(scene, 0, f)
    tx = scene.transmitters[0]
    nc = normalized_current(0, scene)
    c = np.asarray(tx.center, float)
    rad = tx.radius
    probes = np.array([c + [1.5 * rad, 0.5 * rad, 0.2 * rad], c + [1.0, 1.0, 0.5],
                       np.asarray(scene.e) + [0.0, 1.2, 0.3], [2.0, 0.0, 1.0]])
    rep = channel.maxwell_residual(A, scene, f, probes, h=min(h, 0.2 * rad), levels=levels,
                                   current=nc.physical_density)
    orders = {eq: v["order"] for eq, v in rep["equations"].items()}
    ok = all(abs(o - 2.0) <= 0.3 for o in orders.values())
    return CheckResult("maxwell", ok, {"orders": orders, "report": rep}, "order 2.0 +- 0.3 each")


CHECKS: dict[str, Callable[[SceneLayout], CheckResult]] = {
    "green": check_green,
    "oracle": check_oracle,
    "lemma1": check_lemma1,
    "lemma2": check_lemma2,
    "farfield": check_farfield,
    "reciprocity": check_reciprocity,
    "gvector": check_gvector,
    "closed_forms": check_closed_forms,
    "maxwell": check_maxwell,
}


def run_checks(scene: SceneLayout, only: list[str] | None = None) -> list[CheckResult]:
    names = only or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check(s): {', '.join(unknown)}")
    out = []
    for name in names:
        t = time.perf_counter()
        res = CHECKS[name](scene)
        res.seconds = time.perf_counter() - t
        log.info("verify: %s", res.line())
        out.append(res)
    return out
