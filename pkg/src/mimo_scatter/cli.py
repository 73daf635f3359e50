"""Command-line front end: ``mimo-scatter <validate|transfer|verify|sweep>``.

Reports are written as JSON, matrices and curves as CSV.  Every file is
written to a temporary sibling first and renamed into place, so an
interrupted run never leaves a truncated output behind.  The environment
variable ``MIMO_SCATTER_THREADS`` caps both the BLAS threads and the worker
pool used for independent frequency points.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import channel, checks, decouple, spread
from .scatter import BornDivergenceError, ResonanceError
from .scene import Frequency, SceneError, SceneLayout, lattice_spacing, load_scene, sample_region

log = logging.getLogger("mimo_scatter.cli")

MODES = ("full", "decoupled", "spread-farfield")
SWEEP_KINDS = ("antenna-scale", "dm-distance", "frequency")
DEFAULT_SNR = tuple(10.0 ** (db / 10.0) for db in range(-10, 31, 5))


@dataclass
class RunConfig:
    command: str
    scene_path: Path
    frequencies: list[float] = field(default_factory=list)
    quad_level: int | None = None
    born_order: int | None = None
    angular: tuple[int, int] | None = None
    sweep_kind: str | None = None
    sweep_points: list[float] = field(default_factory=list)
    only: list[str] = field(default_factory=list)
    snr: tuple[float, ...] = DEFAULT_SNR
    out: Path = Path("out")

    def __post_init__(self):
        if not self.scene_path.exists():
            raise SceneError(f"scene file not found: {self.scene_path}")
        if self.sweep_points and list(self.sweep_points) != sorted(self.sweep_points):
            raise ValueError("sweep points must be sorted")


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------
def write_atomic(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def hz_label(f_hz: float) -> str:
    return f"{round(float(f_hz), 3):.3f}".rstrip("0").rstrip(".")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o)}")


def _threads() -> int:
    raw = os.environ.get("MIMO_SCATTER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"MIMO_SCATTER_THREADS must be an integer, got {raw!r}")
    return max(1, n)


# ---------------------------------------------------------------------------
# Scene preparation
# ---------------------------------------------------------------------------
def configured_scene(cfg: RunConfig) -> SceneLayout:
    scene = load_scene(cfg.scene_path)
    solver = scene.solver
    if cfg.born_order is not None:
        solver = replace(solver, born_order=cfg.born_order)
    if cfg.angular is not None:
        solver = replace(solver, angular=cfg.angular)
    if cfg.quad_level is not None:
        L = cfg.quad_level
        solver = replace(solver, annulus=(L, 2 * L, 4 * L))
    return replace(scene, solver=solver)


def frequencies(cfg: RunConfig, scene: SceneLayout) -> list[Frequency]:
    eta = scene.frequency.eta if scene.frequency else 0.0
    if cfg.frequencies:
        return [Frequency.from_hz(fz, eta) for fz in cfg.frequencies]
    if scene.frequency is None:
        raise SceneError("no frequency in the scene and none given with --freq")
    return [scene.frequency]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------
def validation_report(scene: SceneLayout) -> dict:
    count = scene.solver.points_per_region
    regions = []
    for reg in scene.regions:
        cs = sample_region(reg, count).interior()
        volume = 4.0 / 3.0 * np.pi * reg.radius**3
        regions.append({
            "id": reg.id, "role": reg.role, "center": list(reg.center), "radius": reg.radius,
            "delta_eps_peak": reg.profile.delta_eps_peak, "sigma_peak": reg.profile.sigma_peak,
            "lattice_spacing": lattice_spacing(reg, count), "nodes": len(cs),
            "quadrature_volume": float(np.sum(cs.weights)), "analytic_volume": volume,
            "has_wire": reg.wire is not None,
        })
    return {"valid": True, "d_tr": scene.d_tr, "d_m": scene.d_m if scene.scatterers else None,
            "r": scene.r, "annulus_width": scene.width, "regions": regions,
            "far_field_ok": bool(scene.scatterers) and scene.d_m >= 10 * scene.r}


def cmd_validate(cfg: RunConfig) -> int:
    try:
        scene = configured_scene(cfg)
    except SceneError as exc:
        print(f"invalid scene: {exc}", file=sys.stderr)
        write_atomic(cfg.out / "validate.json", _dump({"valid": False, "error": str(exc)}))
        return 2
    rep = validation_report(scene)
    write_atomic(cfg.out / "validate.json", _dump(rep))
    print(f"scene valid: D_TR={rep['d_tr']:.4g} m, r={rep['r']:.4g} m, "
          f"{len(rep['regions'])} regions")
    return 0


def _transfer_point(scene: SceneLayout, f: Frequency) -> dict:
    out = {}
    for mode in MODES:
        try:
            out[mode] = channel.transfer_matrix(scene, f, mode)
        except (ResonanceError, BornDivergenceError, FloatingPointError) as exc:
            out[mode] = exc
    return out


def cmd_transfer(cfg: RunConfig) -> int:
    scene = configured_scene(cfg)
    freqs = frequencies(cfg, scene)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda f: _transfer_point(scene, f), freqs))
    summary = {"frequencies_hz": [f.f_hz for f in freqs], "failures": [], "files": []}
    for f, res in zip(freqs, results):
        tag = hz_label(f.f_hz)
        for mode, H in res.items():
            if isinstance(H, Exception):
                summary["failures"].append({"frequency_hz": f.f_hz, "mode": mode,
                                            "error": f"{type(H).__name__}: {H}"})
                log.warning("transfer: %s Hz %s failed: %s", tag, mode, H)
                continue
            base = f"H_{mode}_{tag}Hz"
            write_atomic(cfg.out / f"{base}.csv", H.to_csv())
            write_atomic(cfg.out / f"{base}.json", H.to_json() + "\n")
            curve = channel.capacity_curve(H, cfg.snr)
            rows = ["snr,capacity_bits"] + [f"{float(s)!r},{float(c)!r}" for s, c in zip(cfg.snr, curve)]
            write_atomic(cfg.out / f"capacity_{mode}_{tag}Hz.csv", "\n".join(rows) + "\n")
            summary["files"] += [f"{base}.csv", f"{base}.json",
                                 f"capacity_{mode}_{tag}Hz.csv"]
    write_atomic(cfg.out / "transfer_report.json", _dump(summary))
    print(f"transfer: {len(summary['files'])} files, {len(summary['failures'])} failures")
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    scene = configured_scene(cfg)
    if scene.frequency is None or cfg.frequencies:
        scene = replace(scene, frequency=frequencies(cfg, scene)[0])
    results = checks.run_checks(scene, cfg.only or None)
    for res in results:
        print(res.line())
    report = {"passed": all(r.passed for r in results),
              "checks": [r.to_dict() for r in results]}
    write_atomic(cfg.out / "verify_report.json", _dump(report))
    return 0 if report["passed"] else 1


def _fit_report(x, y) -> dict:
    slope, r2 = checks._fit(x, y)
    return {"slope": slope, "r2": r2}


def cmd_sweep(cfg: RunConfig) -> int:
    scene = configured_scene(cfg)
    kind = cfg.sweep_kind
    if kind not in SWEEP_KINDS:
        raise ValueError(f"--kind must be one of {', '.join(SWEEP_KINDS)}")
    if kind == "frequency":
        pts = cfg.frequencies
    else:
        pts = cfg.sweep_points or {"antenna-scale": [0.125, 0.25, 0.5, 1.0],
                                   "dm-distance": [1.0, 2.0, 4.0]}[kind]
    if len(pts) < 3:
        print("sweep needs at least 3 points", file=sys.stderr)
        return 2
    f = frequencies(cfg, scene)[0]
    if kind == "antenna-scale":
        rows = [decouple.lemma2_error(checks.scaled_antennas(scene, s), f) for s in pts]
        report = {"kind": kind, "scales": pts, "points": rows,
                  "fit_vs_sqrt_volume": _fit_report(np.sqrt([r["volume"] for r in rows]),
                                                    [r["error"] for r in rows])}
        csv_rows = ["scale,volume,error,error_direct"] + [
            f"{s!r},{r['volume']!r},{r['error']!r},{r['error_direct']!r}" for s, r in zip(pts, rows)]
    elif kind == "dm-distance":
        sw = spread.dm_sweep(scene, f, pts)
        report = {"kind": kind, "multipliers": pts, **sw.report()}
        csv_rows = ["d_m,gap,magnitude"] + [
            f"{d!r},{g!r},{m!r}" for d, g, m in zip(sw.d_m.tolist(), sw.gap.tolist(),
                                                    sw.magnitude.tolist())]
    else:
        eta = scene.frequency.eta if scene.frequency else 0.0
        freqs = [Frequency.from_hz(fz, eta) for fz in pts]
        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            res = list(pool.map(lambda fr: _safe_full(scene, fr), freqs))
        kept = [(fr.f_hz, H) for fr, H in zip(freqs, res) if not isinstance(H, Exception)]
        skipped = [{"frequency_hz": fr.f_hz, "error": f"{type(H).__name__}: {H}"}
                   for fr, H in zip(freqs, res) if isinstance(H, Exception)]
        report = {"kind": kind, "points": [{"frequency_hz": fz, "max_abs_H": float(np.abs(H).max())}
                                           for fz, H in kept], "skipped": skipped}
        csv_rows = ["frequency_hz,max_abs_H"] + [f"{fz!r},{float(np.abs(H).max())!r}"
                                                  for fz, H in kept]
    write_atomic(cfg.out / f"sweep_{kind}.json", _dump(report))
    write_atomic(cfg.out / f"sweep_{kind}.csv", "\n".join(csv_rows) + "\n")
    print(f"sweep {kind}: {len(pts)} points written to {cfg.out}")
    return 0


def _safe_full(scene: SceneLayout, f: Frequency):
    try:
        return channel.transfer_matrix(scene, f, "full").entries
    except (ResonanceError, FloatingPointError) as exc:
        return exc


COMMANDS = {"validate": cmd_validate, "transfer": cmd_transfer, "verify": cmd_verify,
            "sweep": cmd_sweep}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------
def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _angular(text: str) -> tuple[int, int]:
    try:
        t, p = text.lower().split("x")
        return int(t), int(p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"angular grid must look like 16x32, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mimo-scatter", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scene", required=True, type=Path, help="scene JSON file")
    p.add_argument("--freq", type=_floats, default=[], help="comma-separated frequencies in Hz")
    p.add_argument("--born-order", type=int, default=None)
    p.add_argument("--quad-level", type=int, default=None,
                   help="annulus quadrature level L (radial L, polar 2L, azimuthal 4L)")
    p.add_argument("--angular", type=_angular, default=None, help="sphere grid TxP, e.g. 16x32")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--only", type=lambda s: [t for t in s.split(",") if t], default=[],
                   help=f"verify only these checks ({', '.join(checks.CHECKS)})")
    p.add_argument("--kind", choices=SWEEP_KINDS, default=None, help="sweep kind")
    p.add_argument("--points", type=_floats, default=[],
                   help="sweep points (antenna scales or D_M multipliers)")
    p.add_argument("--snr", type=_floats, default=list(DEFAULT_SNR),
                   help="linear SNR grid for capacity curves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.command, args.scene, args.freq, args.quad_level, args.born_order,
                        args.angular, args.kind, args.points, args.only, tuple(args.snr),
                        args.out)
    except SceneError as exc:
        print(f"invalid scene: {exc}", file=sys.stderr)
        return 2
    if cfg.command == "sweep" and cfg.sweep_kind is None:
        print("sweep requires --kind", file=sys.stderr)
        return 2
    with threadpool_limits(limits=_threads()):
        try:
            return COMMANDS[cfg.command](cfg)
        except SceneError as exc:
            print(f"invalid scene: {exc}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
