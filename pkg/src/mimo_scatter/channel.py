"""Physical fields, transfer matrices, Maxwell residuals and capacity.

The vector potential ``A`` comes from a block solve; the fields follow as

    E = -j mu0 omega A + grad( div A / (j eps omega + sigma) ),    H = curl A.

``div A`` and ``curl A`` are analytic (kernel derivatives); the outer gradient
in ``E`` is a central-difference stencil.  The transfer entry ``H_mn`` is the
current ``int sigma E . n dS`` through receiver ``m``'s wire section when
transmitter ``n`` carries a unit feed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .scatter import ScatterSolution, SolvedField, antenna_source, scene_system, solve_full
from .scene import (MU0, Frequency, SceneLayout, conductivity, disc_quadrature, permittivity)

log = logging.getLogger(__name__)

_EYE = np.eye(3)


@dataclass
class FieldSample:
    points: np.ndarray
    values: np.ndarray
    kind: str
    frequency: Frequency | None = None

    def __post_init__(self):
        if self.kind not in ("A", "E", "H"):
            raise ValueError(f"unknown field kind {self.kind!r}")
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("non-finite field values")


@dataclass
class TransferMatrix:
    entries: np.ndarray
    frequency: Frequency
    mode: str = "full"
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row_m", "col_n", "re", "im"])
        for (m, n), v in np.ndenumerate(self.entries):
            w.writerow([m, n, repr(float(v.real)), repr(float(v.imag))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"frequency_hz": self.frequency.f_hz, "mode": self.mode,
                           "re": self.entries.real.tolist(), "im": self.entries.imag.tolist(),
                           "meta": self.meta}, indent=1)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------
def vector_potential(scene: SceneLayout, n: int, f: Frequency,
                     sol: ScatterSolution | None = None) -> SolvedField:
    """Evaluator of ``A`` radiated by unit feed on transmitter ``n``."""
    sol = sol or solve_full(scene_system(scene, f))
    return sol.solve_source(antenna_source(scene, n, f))


def _admittance(x, scene: SceneLayout, f: Frequency) -> np.ndarray:
    return 1j * permittivity(x, scene) * f.omega + conductivity(x, scene)


def _gauge_scalar(A, scene, f, x) -> np.ndarray:
    div = np.einsum("nss->n", A.jacobian(x))
    return div / _admittance(x, scene, f)


def default_step(scene: SceneLayout) -> float:
    from .scene import lattice_spacing
    return min(lattice_spacing(reg, scene.solver.points_per_region)
               for reg in scene.regions) / 4.0


def e_field(A, scene: SceneLayout, f: Frequency, points, step: float | None = None) -> FieldSample:
    """Electric field with a 7-point stencil for the outer gradient."""
    x = np.atleast_2d(np.asarray(points, float))
    h = default_step(scene) if step is None else step
    if h < 1e-6 * default_step(scene) * 4:
        raise ValueError("probe stencil step below 1e-6 of the cell size")
    stencil = np.concatenate([x + h * _EYE[i] for i in range(3)] + [x - h * _EYE[i] for i in range(3)])
    phi = _gauge_scalar(A, scene, f, stencil).reshape(6, len(x))
    grad = (phi[:3] - phi[3:]).T / (2.0 * h)
    E = -1j * MU0 * f.omega * A.values(x) + grad
    return FieldSample(x, E, "E", f)


def curl_from_jacobian(J: np.ndarray) -> np.ndarray:
    return np.stack([J[:, 2, 1] - J[:, 1, 2], J[:, 0, 2] - J[:, 2, 0], J[:, 1, 0] - J[:, 0, 1]],
                    axis=1)


def h_field(A, points, f: Frequency | None = None) -> FieldSample:
    x = np.atleast_2d(np.asarray(points, float))
    return FieldSample(x, curl_from_jacobian(A.jacobian(x)), "H", f)


# ---------------------------------------------------------------------------
# Transfer matrix
# ---------------------------------------------------------------------------
def receiver_current(A, scene: SceneLayout, m: int, f: Frequency,
                     step: float | None = None) -> complex:
    """``int_{S_m} sigma E . n dS`` for receiver ``m``."""
    reg = scene.receivers[m]
    if reg.wire is None:
        raise ValueError(f"receiver {reg.id} has no wire section")
    nr, na = scene.solver.disc
    pts, wts = disc_quadrature(reg.wire, nr, na)
    E = e_field(A, scene, f, pts, step).values
    sig = conductivity(pts, scene, reg.id)
    return complex(np.sum(wts * sig * (E @ reg.wire.unit_normal)))


def transfer_matrix(scene: SceneLayout, f: Frequency, mode: str = "full",
                    sol: ScatterSolution | None = None) -> TransferMatrix:
    """Full-solve transfer matrix (``mode='full'``).

    The decoupled and far-field modes live in :mod:`decouple` and
    :mod:`spread`; they are dispatched here for convenience.
    """
    if mode == "decoupled":
        from .decouple import decoupled_transfer
        return decoupled_transfer(scene, f)
    if mode == "spread-farfield":
        from .spread import farfield_transfer
        return farfield_transfer(scene, f)
    if mode != "full":
        raise ValueError(f"unknown transfer mode {mode!r}")
    sol = sol or solve_full(scene_system(scene, f))
    N, M = len(scene.transmitters), len(scene.receivers)
    H = np.zeros((M, N), complex)
    for n in range(N):
        A = vector_potential(scene, n, f, sol)
        for m in range(M):
            H[m, n] = receiver_current(A, scene, m, f)
    log.info("transfer_matrix: f=%.6g Hz mode=full cond=%.3e", f.f_hz, sol.condition)
    return TransferMatrix(H, f, "full", {"condition_estimate": sol.condition})


def output_currents(H: TransferMatrix, feeds) -> np.ndarray:
    return H.entries @ np.asarray(feeds, complex)


def capacity(H, snr: float) -> float:
    """Equal-power capacity ``sum log2(1 + snr lambda_i / N)`` in bit/s/Hz."""
    if snr <= 0:
        raise ValueError("snr must be positive")
    Hm = H.entries if isinstance(H, TransferMatrix) else np.asarray(H, complex)
    N = Hm.shape[1]
    lam = np.clip(np.linalg.eigvalsh(Hm.conj().T @ Hm), 0.0, None)
    return float(np.sum(np.log2(1.0 + snr * lam / N)))


def capacity_curve(H, snrs) -> np.ndarray:
    return np.array([capacity(H, s) for s in snrs])


# ---------------------------------------------------------------------------
# Maxwell residuals
# ---------------------------------------------------------------------------
EQUATIONS = ("div_H", "ampere", "faraday", "gauss", "continuity")


def _fields_at(A, scene, f, x, h):
    E = e_field(A, scene, f, x, step=h).values
    H = curl_from_jacobian(A.jacobian(x))
    return E, H


def _stencil(x, h):
    return np.concatenate([x] + [x + h * _EYE[i] for i in range(3)] + [x - h * _EYE[i] for i in range(3)])


def _derivs(F, n, h):
    """Central-difference Jacobian ``D[p, s, i] = dF_s/dx_i`` from a stencil."""
    F = F.reshape(7, n, -1)
    return np.stack([(F[1 + i] - F[4 + i]) / (2.0 * h) for i in range(3)], axis=-1)


def maxwell_fields(A, scene: SceneLayout, f: Frequency, probes, h: float, current=None) -> dict:
    """Residual vectors of the five frequency-domain equations at ``probes``.

    The outer gradient inside ``E`` uses the same step ``h`` as the probe
    stencil, so every residual is ``O(h^2)``.  ``rho`` is recovered as
    ``div(eps E)``.
    """
    x = np.atleast_2d(np.asarray(probes, float))
    n = len(x)
    pts = _stencil(x, h)
    E, H = _fields_at(A, scene, f, pts, h)
    eps = permittivity(pts, scene)
    sig = conductivity(pts, scene)
    J = np.zeros_like(E) if current is None else current(pts)
    dE, dH = _derivs(E, n, h), _derivs(H, n, h)
    dD = _derivs(eps[:, None] * E, n, h)
    dC = _derivs(J + sig[:, None] * E, n, h)
    curl = lambda D: np.stack([D[:, 2, 1] - D[:, 1, 2], D[:, 0, 2] - D[:, 2, 0],
                               D[:, 1, 0] - D[:, 0, 1]], axis=1)
    div = lambda D: np.einsum("nss->n", D)
    E0, H0, J0 = E[:n], H[:n], J[:n]
    y0 = 1j * eps[:n] * f.omega + sig[:n]
    rho = div(dD)
    return {
        "div_H": div(dH),
        "ampere": curl(dH) - J0 - y0[:, None] * E0,
        "faraday": curl(dE) + 1j * MU0 * f.omega * H0,
        "gauss": rho - 1j * div(dC) / f.omega,
        "continuity": -1j * f.omega * rho - div(dC),
        "_scale": {
            "div_H": np.linalg.norm(dH.reshape(n, -1), axis=1),
            "ampere": np.linalg.norm(y0[:, None] * E0, axis=1) + np.linalg.norm(curl(dH), axis=1),
            "faraday": np.linalg.norm(MU0 * f.omega * H0, axis=1),
            "gauss": np.linalg.norm(dD.reshape(n, -1), axis=1),
            "continuity": abs(f.omega) * np.linalg.norm(dD.reshape(n, -1), axis=1),
        },
    }


def charge_elimination_residual(A, scene, f, probes, h, current=None) -> np.ndarray:
    """``div{J + (j eps omega + sigma) E}`` by central differences."""
    x = np.atleast_2d(np.asarray(probes, float))
    pts = _stencil(x, h)
    E = e_field(A, scene, f, pts, step=h).values
    y = 1j * permittivity(pts, scene) * f.omega + conductivity(pts, scene)
    J = np.zeros_like(E) if current is None else current(pts)
    return np.einsum("nss->n", _derivs(J + y[:, None] * E, len(x), h))


def maxwell_residual(A, scene: SceneLayout, f: Frequency, probes, h: float = 0.02,
                     levels: int = 3, current=None) -> dict:
    """Relative residuals under step halving with observed convergence orders.

    Returns per equation the max relative residual at each step and the
    least-squares order of ``log residual`` against ``log h``.
    """
    steps = [h / 2**i for i in range(levels)]
    table = {eq: [] for eq in EQUATIONS}
    for s in steps:
        res = maxwell_fields(A, scene, f, probes, s, current)
        for eq in EQUATIONS:
            rel = np.linalg.norm(np.atleast_2d(res[eq].T).T.reshape(len(res[eq]), -1), axis=1)
            table[eq].append(float(np.max(rel / res["_scale"][eq])))
    report = {"steps": steps, "equations": {}}
    for eq, vals in table.items():
        order = float(np.polyfit(np.log(steps), np.log(np.maximum(vals, 1e-300)), 1)[0])
        report["equations"][eq] = {"relative_residuals": vals, "order": order}
    report["max_relative_residual"] = max(v[-1] for v in table.values())
    return report
