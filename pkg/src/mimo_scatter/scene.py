"""Scene description: frequencies, material bumps, antennas and region sampling.

All quantities are SI.  A scene is a set of disjoint spherical regions, each
carrying a smooth relative-permittivity excess and (antennas only) a
conductivity, both shaped by the polynomial bump ``q(s) = (1 - s**2)**4``.
Transmitters cluster around ``origin``, receivers around ``e``; the enclosure
radius ``r`` and cutoff width ``w`` fix the two spherical annuli used by the
decoupling machinery.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MU0 = 4e-7 * math.pi
C0 = 299_792_458.0
EPS0 = 1.0 / (MU0 * C0**2)

ROLES = ("transmitter", "receiver", "scatterer")
GROUP_OF_ROLE = {"transmitter": "T", "receiver": "R", "scatterer": "M"}
K2_FLOOR = 1e-12


class SceneError(ValueError):
    """Raised when a scene document or layout violates an invariant."""


# ---------------------------------------------------------------------------
# Frequency
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Frequency:
    """Angular frequency and the spectral parameter of the resolvent.

    ``omega`` may be negative; the time-reversed frequency carries the
    conjugated spectral parameter and the incoming-wave kernel, so every
    discrete object at ``-omega`` is the complex conjugate of the one at
    ``omega`` for real sources.
    """

    omega: float
    eta: float = 0.0

    def __post_init__(self):
        if self.omega == 0.0:
            raise SceneError("omega must be nonzero")
        if self.eta < 0.0:
            raise SceneError("eta must be >= 0")

    @classmethod
    def from_hz(cls, f_hz: float, eta: float = 0.0) -> "Frequency":
        return cls(2.0 * math.pi * f_hz, eta)

    @property
    def sign(self) -> int:
        return 1 if self.omega > 0 else -1

    @property
    def k0(self) -> float:
        return abs(self.omega) / C0

    @property
    def z0(self) -> complex:
        return complex(self.k0**2, self.sign * self.eta)

    @property
    def kappa(self) -> complex:
        """Wavenumber of the kernel ``exp(j*kappa*|x-y|)/(4*pi*|x-y|)``."""
        root = np.sqrt(complex(self.k0**2, self.eta))
        return complex(self.sign * root.real, root.imag)

    @property
    def f_hz(self) -> float:
        return self.omega / (2.0 * math.pi)

    def reversed(self) -> "Frequency":
        return Frequency(-self.omega, self.eta)


# ---------------------------------------------------------------------------
# Materials and regions
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MaterialProfile:
    """Radial bump carrying a permittivity excess and a conductivity.

    The bump equals 1 on the plateau ``|x-c| <= radius - transition`` and
    decays as ``(1 - s**2)**4`` across the transition layer.
    """

    kind: str
    delta_eps_peak: float
    sigma_peak: float
    radius: float
    transition: float | None = None

    def __post_init__(self):
        if self.kind not in ROLES:
            raise SceneError(f"unknown material kind {self.kind!r}")
        if self.radius <= 0:
            raise SceneError("profile radius must be positive")
        if self.delta_eps_peak <= -1.0:
            raise SceneError("relative permittivity must stay positive")
        if self.sigma_peak < 0:
            raise SceneError("conductivity must be >= 0")
        if self.kind == "scatterer" and self.sigma_peak != 0.0:
            raise SceneError("scatterers carry no conductivity")
        t = self.width
        if not 0 < t <= self.radius:
            raise SceneError("transition width must lie in (0, radius]")

    @property
    def width(self) -> float:
        return self.radius if self.transition is None else self.transition

    def bump(self, dist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``q`` and ``dq/d|x-c|`` at the given distances."""
        t = self.width
        s = np.clip((np.asarray(dist, float) - (self.radius - t)) / t, 0.0, 1.0)
        q = (1.0 - s**2) ** 4
        dq = -8.0 * s * (1.0 - s**2) ** 3 / t
        return q, dq

    def scaled(self, factor: float) -> "MaterialProfile":
        tr = None if self.transition is None else self.transition * factor
        return replace(self, radius=self.radius * factor, transition=tr)


@dataclass(frozen=True)
class WireSection:
    """Transverse disc of an antenna wire and the tapered feed length."""

    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    radius: float
    half_length: float

    @property
    def unit_normal(self) -> np.ndarray:
        n = np.asarray(self.normal, float)
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class Region:
    id: str
    role: str
    center: tuple[float, float, float]
    profile: MaterialProfile
    wire: WireSection | None = None

    @property
    def group(self) -> str:
        return GROUP_OF_ROLE[self.role]

    @property
    def radius(self) -> float:
        return self.profile.radius

    def inside(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.linalg.norm(x - np.asarray(self.center), axis=1) <= self.radius * (1 + 1e-12)

    def scaled(self, factor: float) -> "Region":
        """Shrink the region about its centre (materials unchanged)."""
        wire = None
        if self.wire is not None:
            c = np.asarray(self.center)
            wc = c + factor * (np.asarray(self.wire.center) - c)
            wire = replace(self.wire, center=tuple(wc), radius=self.wire.radius * factor,
                           half_length=self.wire.half_length * factor)
        return replace(self, profile=self.profile.scaled(factor), wire=wire)

    def moved(self, center: Sequence[float]) -> "Region":
        shift = np.asarray(center, float) - np.asarray(self.center)
        wire = None
        if self.wire is not None:
            wire = replace(self.wire, center=tuple(np.asarray(self.wire.center) + shift))
        return replace(self, center=tuple(float(v) for v in center), wire=wire)


@dataclass(frozen=True)
class SolverConfig:
    points_per_region: int = 100
    born_order: int = 8
    angular: tuple[int, int] = (16, 32)
    annulus: tuple[int, int, int] = (4, 12, 24)
    disc: tuple[int, int] = (8, 16)


@dataclass(frozen=True)
class SceneLayout:
    """Validated collection of regions with the separation geometry."""

    regions: tuple[Region, ...]
    origin: tuple[float, float, float]
    e: tuple[float, float, float]
    r: float
    w: float | None = None
    frequency: Frequency | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)

    @property
    def width(self) -> float:
        return self.r / 4.0 if self.w is None else self.w

    def by_role(self, role: str) -> list[Region]:
        return [reg for reg in self.regions if reg.role == role]

    @property
    def transmitters(self) -> list[Region]:
        return self.by_role("transmitter")

    @property
    def receivers(self) -> list[Region]:
        return self.by_role("receiver")

    @property
    def scatterers(self) -> list[Region]:
        return self.by_role("scatterer")

    @property
    def d_tr(self) -> float:
        return _set_distance(self.transmitters, self.receivers)

    @property
    def d_m(self) -> float:
        if not self.scatterers:
            return math.inf
        return min(_set_distance(self.transmitters, self.scatterers),
                   _set_distance(self.receivers, self.scatterers))

    def without(self, *roles: str) -> "SceneLayout":
        return replace(self, regions=tuple(r for r in self.regions if r.role not in roles))

    def with_regions(self, regions: Sequence[Region]) -> "SceneLayout":
        return replace(self, regions=tuple(regions))

    def validate(self) -> "SceneLayout":
        ids = [reg.id for reg in self.regions]
        if len(set(ids)) != len(ids):
            raise SceneError("region ids must be unique")
        if not self.transmitters or not self.receivers:
            raise SceneError("scene needs at least one transmitter and one receiver")
        regs = self.regions
        for i, a in enumerate(regs):
            for b in regs[i + 1:]:
                gap = np.linalg.norm(np.subtract(a.center, b.center)) - a.radius - b.radius
                if gap <= 0:
                    raise SceneError(f"disjoint supports violated: {a.id} and {b.id}")
        for reg in regs:
            if reg.role in ("transmitter", "receiver") and reg.wire is not None:
                _check_wire(reg)
        if self.d_tr <= 0:
            raise SceneError("transmitters and receivers must be separated")
        if self.r > self.d_tr / 2 or self.r > self.d_m / 2:
            raise SceneError(f"enclosure radius too large: r={self.r} exceeds "
                             f"min(D_TR/2={self.d_tr / 2}, D_M/2={self.d_m / 2})")
        w = self.width
        if not 0 < w < self.r:
            raise SceneError("cutoff width must lie in (0, r)")
        origin, e = np.asarray(self.origin), np.asarray(self.e)
        for reg in regs:
            c = np.asarray(reg.center)
            to_o, to_e = np.linalg.norm(c - origin), np.linalg.norm(c - e)
            if reg.role == "transmitter" and to_o + reg.radius > self.r - w:
                raise SceneError(f"annulus about origin intersects {reg.id}")
            if reg.role == "receiver" and to_e + reg.radius > self.r - w:
                raise SceneError(f"annulus about e intersects {reg.id}")
            if reg.role != "transmitter" and to_o - reg.radius < self.r:
                raise SceneError(f"annulus about origin intersects {reg.id}")
            if reg.role != "receiver" and to_e - reg.radius < self.r:
                raise SceneError(f"annulus about e intersects {reg.id}")
        return self


def _set_distance(a: Sequence[Region], b: Sequence[Region]) -> float:
    if not a or not b:
        return math.inf
    return min(np.linalg.norm(np.subtract(p.center, q.center)) - p.radius - q.radius
               for p in a for q in b)


def _check_wire(reg: Region) -> None:
    wire = reg.wire
    off = np.linalg.norm(np.subtract(wire.center, reg.center))
    if off + math.hypot(wire.radius, wire.half_length) > reg.radius:
        raise SceneError(f"wire section of {reg.id} leaves the region support")


# ---------------------------------------------------------------------------
# Scene documents
# ---------------------------------------------------------------------------
def load_scene(text: str | Path | dict) -> SceneLayout:
    """Parse and validate a JSON scene document.

    Accepts the document text, a path to it, or an already-decoded dict.
    """
    if isinstance(text, Path):
        text = text.read_text()
    if isinstance(text, str):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SceneError(f"parse error: {exc}") from exc
    else:
        doc = text
    try:
        return _scene_from_doc(doc).validate()
    except (KeyError, TypeError) as exc:
        raise SceneError(f"parse error: missing or malformed field {exc}") from exc


def _vec(v) -> tuple[float, float, float]:
    v = tuple(float(x) for x in v)
    if len(v) != 3:
        raise SceneError("positions must have 3 components")
    return v


def _scene_from_doc(doc: dict) -> SceneLayout:
    if doc.get("schema") != 1:
        raise SceneError("parse error: unsupported schema (expected 1)")
    solver_doc = doc.get("solver", {})
    freq = None
    if "frequency" in doc:
        fdoc = doc["frequency"]
        eta = float(solver_doc.get("eta", fdoc.get("eta", 0.0)))
        if "omega" in fdoc:
            freq = Frequency(float(fdoc["omega"]), eta)
        else:
            freq = Frequency.from_hz(float(fdoc["f_hz"]), eta)
    regions = []
    for rdoc in doc["regions"]:
        prof = rdoc["profile"]
        role = rdoc["role"]
        profile = MaterialProfile(
            kind=role,
            delta_eps_peak=float(prof.get("delta_eps", 0.0)),
            sigma_peak=float(prof.get("sigma", 0.0)),
            radius=float(prof["radius"]),
            transition=None if prof.get("transition") is None else float(prof["transition"]),
        )
        center = _vec(rdoc["center"])
        wire = None
        if "wire" in rdoc:
            wdoc = rdoc["wire"]
            radius = float(wdoc["radius"])
            wire = WireSection(
                center=_vec(wdoc.get("center", center)),
                normal=_vec(wdoc.get("normal", (0, 0, 1))),
                radius=radius,
                half_length=float(wdoc.get("half_length", 0.6 * profile.radius)),
            )
        regions.append(Region(str(rdoc["id"]), role, center, profile, wire))
    enc = doc["enclosure"]
    solver = SolverConfig(
        points_per_region=int(solver_doc.get("points_per_region", 100)),
        born_order=int(solver_doc.get("born_order", 8)),
        angular=tuple(solver_doc.get("angular", (16, 32))),
        annulus=tuple(solver_doc.get("annulus", (4, 12, 24))),
        disc=tuple(solver_doc.get("disc", (8, 16))),
    )
    return SceneLayout(
        regions=tuple(regions),
        origin=_vec(enc.get("origin", (0, 0, 0))),
        e=_vec(enc["e"]),
        r=float(enc["r"]),
        w=None if enc.get("w") is None else float(enc["w"]),
        frequency=freq,
        solver=solver,
    )


def scene_to_doc(scene: SceneLayout) -> dict:
    """Inverse of :func:`load_scene` (up to defaults)."""
    regions = []
    for reg in scene.regions:
        p = reg.profile
        rdoc = {"id": reg.id, "role": reg.role, "center": list(reg.center),
                "profile": {"radius": p.radius, "transition": p.transition,
                            "delta_eps": p.delta_eps_peak, "sigma": p.sigma_peak}}
        if reg.wire is not None:
            rdoc["wire"] = {"center": list(reg.wire.center), "normal": list(reg.wire.normal),
                            "radius": reg.wire.radius, "half_length": reg.wire.half_length}
        regions.append(rdoc)
    doc = {"schema": 1, "regions": regions,
           "enclosure": {"origin": list(scene.origin), "e": list(scene.e), "r": scene.r, "w": scene.w}}
    if scene.frequency is not None:
        doc["frequency"] = {"f_hz": scene.frequency.f_hz}
    s = scene.solver
    doc["solver"] = {"points_per_region": s.points_per_region, "born_order": s.born_order,
                     "angular": list(s.angular), "annulus": list(s.annulus), "disc": list(s.disc),
                     "eta": 0.0 if scene.frequency is None else scene.frequency.eta}
    return doc


# ---------------------------------------------------------------------------
# Material fields
# ---------------------------------------------------------------------------
def _groups_filter(group: str | None) -> Callable[[Region], bool]:
    if group in (None, "total"):
        return lambda reg: True
    return lambda reg: reg.group == group


def region_delta_k2(reg: Region, x: np.ndarray, f: Frequency) -> tuple[np.ndarray, np.ndarray]:
    """``delta k^2`` of one region and its gradient at points ``x`` (n, 3)."""
    x = np.atleast_2d(np.asarray(x, float))
    rel = x - np.asarray(reg.center)
    dist = np.linalg.norm(rel, axis=1)
    q, dq = reg.profile.bump(dist)
    amp = reg.profile.delta_eps_peak * f.k0**2 - 1j * MU0 * f.omega * reg.profile.sigma_peak
    safe = np.where(dist > 0, dist, 1.0)
    grad = (amp * dq / safe)[:, None] * rel
    grad[dist == 0] = 0.0
    return amp * q, grad


def delta_k2(x, f: Frequency, scene: SceneLayout, group: str | None = None) -> np.ndarray:
    """``(eps_r - 1) k0^2 - j mu0 omega sigma`` at ``x``; zero in free space.

    ``group`` restricts the sum to ``'T'``, ``'M'`` or ``'R'`` regions.
    """
    x = np.atleast_2d(np.asarray(x, float))
    out = np.zeros(len(x), complex)
    keep = _groups_filter(group)
    for reg in scene.regions:
        if keep(reg):
            out += region_delta_k2(reg, x, f)[0]
    return out


def grad_log_k2(x, f: Frequency, scene: SceneLayout, group: str | None = None) -> np.ndarray:
    """Analytic gradient of ``ln k^2`` where ``k^2 = k0^2 + delta k^2``.

    Raises
    ------
    SceneError
        If ``|k^2|`` falls below a floor (degenerate material).
    """
    x = np.atleast_2d(np.asarray(x, float))
    d = np.zeros(len(x), complex)
    g = np.zeros((len(x), 3), complex)
    keep = _groups_filter(group)
    for reg in scene.regions:
        if keep(reg):
            dk, gk = region_delta_k2(reg, x, f)
            d += dk
            g += gk
    k2 = f.k0**2 + d
    if np.any(np.abs(k2) < K2_FLOOR * max(f.k0**2, 1.0)):
        raise SceneError("degenerate material: |k^2| below floor")
    return g / k2[:, None]


def permittivity(x, scene: SceneLayout) -> np.ndarray:
    """Absolute permittivity epsilon(x)."""
    x = np.atleast_2d(np.asarray(x, float))
    eps_r = np.ones(len(x))
    for reg in scene.regions:
        q, _ = reg.profile.bump(np.linalg.norm(x - np.asarray(reg.center), axis=1))
        eps_r += reg.profile.delta_eps_peak * q
    return EPS0 * eps_r


def conductivity(x, scene: SceneLayout, region_id: str | None = None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, float))
    sig = np.zeros(len(x))
    for reg in scene.regions:
        if region_id is not None and reg.id != region_id:
            continue
        q, _ = reg.profile.bump(np.linalg.norm(x - np.asarray(reg.center), axis=1))
        sig += reg.profile.sigma_peak * q
    return sig


# ---------------------------------------------------------------------------
# Source currents
# ---------------------------------------------------------------------------
def disc_quadrature(wire: WireSection, n_radial: int = 8, n_angular: int = 16):
    """Polar Gauss-Legendre x uniform quadrature on a wire section.

    Returns nodes (n, 3) and area weights (n,) summing to ``pi * radius**2``.
    """
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * wire.radius * (t + 1.0)
    w_rho = 0.5 * wire.radius * wt * rho
    phi = 2.0 * np.pi * np.arange(n_angular) / n_angular
    n = wire.unit_normal
    u = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(u) < 1e-8:
        u = np.cross(n, [0.0, 1.0, 0.0])
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    R, P = np.meshgrid(rho, phi, indexing="ij")
    W = np.repeat(w_rho[:, None] * (2.0 * np.pi / n_angular), n_angular, axis=1)
    pts = (np.asarray(wire.center)[None, :]
           + (R * np.cos(P)).reshape(-1, 1) * u + (R * np.sin(P)).reshape(-1, 1) * v)
    return pts, W.ravel()


@dataclass(frozen=True)
class SourceCurrent:
    """Axial feed current of one transmitter with unit flux through its wire."""

    antenna_index: int
    wire: WireSection
    feed: complex = 1.0 + 0.0j

    def density(self, x) -> np.ndarray:
        """Normalized current density (A/m^2 per ampere of feed)."""
        x = np.atleast_2d(np.asarray(x, float))
        n = self.wire.unit_normal
        rel = x - np.asarray(self.wire.center)
        axial = rel @ n
        perp = np.linalg.norm(rel - axial[:, None] * n, axis=1)
        L = self.wire.half_length
        taper = np.where(np.abs(axial) < L, (1.0 - (axial / L) ** 2) ** 2, 0.0)
        inside = perp <= self.wire.radius
        mag = np.where(inside, taper, 0.0) / (math.pi * self.wire.radius**2)
        return mag[:, None] * n[None, :]

    def physical_density(self, x) -> np.ndarray:
        return self.feed * self.density(x)

    def flux(self, n_radial: int = 8, n_angular: int = 16) -> complex:
        pts, wts = disc_quadrature(self.wire, n_radial, n_angular)
        return complex(np.sum(wts * (self.density(pts) @ self.wire.unit_normal)))


def normalized_current(n: int, scene: SceneLayout, feed: complex = 1.0) -> SourceCurrent:
    """Normalized feed density of transmitter ``n`` (index among transmitters)."""
    tx = scene.transmitters
    if not 0 <= n < len(tx):
        raise SceneError(f"no transmitter with index {n}")
    if tx[n].wire is None:
        raise SceneError(f"missing wire section on {tx[n].id}")
    return SourceCurrent(n, tx[n].wire, complex(feed))


# ---------------------------------------------------------------------------
# Region sampling
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CollocationSet:
    """Lattice quadrature of a region.

    ``points`` are lattice nodes ``center + spacing * index``; all weights are
    equal.  ``padded`` marks the layer of nodes just outside the support that
    the lattice divergence needs as neighbours.
    """

    region_id: str
    points: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    spacing: float
    padded: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    @property
    def weight(self) -> float:
        return float(self.weights[0])

    def interior(self) -> "CollocationSet":
        keep = ~self.padded
        return CollocationSet(self.region_id, self.points[keep], self.weights[keep],
                              self.index[keep], self.spacing, self.padded[keep])


def lattice_spacing(region: Region, target_count: int) -> float:
    vol = 4.0 / 3.0 * math.pi * region.radius**3
    return (vol / target_count) ** (1.0 / 3.0)


def sample_region(region: Region, target_count: int, pad: bool = False) -> CollocationSet:
    """Deterministic cubic-lattice sampling of a region's support ball.

    The spacing is ``(V / target_count)**(1/3)``, so multiplying the target by
    8 halves the spacing and nests the lattices.  Weights are uniform and sum
    to the ball volume over the interior nodes.  With ``pad=True`` the layer
    of nodes within one spacing outside the ball is appended.
    """
    if target_count < 8:
        raise SceneError("targetCount must be >= 8")
    a = region.radius
    h = lattice_spacing(region, target_count)
    m = int(math.ceil(a / h)) + 2
    rng = np.arange(-m, m + 1)
    idx = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = h * np.linalg.norm(idx, axis=1)
    inner = dist <= a * (1 + 1e-12)
    limit = a + h * (1 + 1e-9) if pad else a * (1 + 1e-12)
    keep = dist <= limit
    idx = idx[keep]
    inner = inner[keep]
    vol = 4.0 / 3.0 * math.pi * a**3
    w = vol / int(inner.sum())
    pts = np.asarray(region.center)[None, :] + h * idx
    return CollocationSet(region.id, pts, np.full(len(pts), w), idx, h, ~inner)
