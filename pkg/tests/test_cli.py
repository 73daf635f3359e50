import json
import os
import subprocess
import sys

import pytest

from mimo_scatter import checks, cli
from mimo_scatter.scene import scene_to_doc


@pytest.fixture(scope="module")
def scene_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "desk.json"
    doc = scene_to_doc(checks.desk_scene(count=60))
    doc["solver"]["angular"] = [6, 12]
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def free_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("scene") / "free.json"
    doc = scene_to_doc(checks.desk_scene(scatterers=False, count=60))
    doc["solver"]["angular"] = [6, 12]
    path.write_text(json.dumps(doc))
    return path


def test_validate_ok(scene_file, tmp_path, capsys):
    assert cli.main(["validate", "--scene", str(scene_file), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["valid"] and len(rep["regions"]) == 4
    for reg in rep["regions"]:
        assert reg["quadrature_volume"] == pytest.approx(reg["analytic_volume"], rel=1e-12)


def test_validate_rejects_invalid_scene(tmp_path, scene_file):
    doc = json.loads(scene_file.read_text())
    doc["enclosure"]["r"] = 4.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert cli.main(["validate", "--scene", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["validate", "--scene", str(tmp_path / "missing.json")]) == 2


def test_transfer_writes_stamped_files(free_file, tmp_path):
    out = tmp_path / "o"
    assert cli.main(["transfer", "--scene", str(free_file), "--freq", "3e8,2.9e8",
                     "--out", str(out)]) == 0
    names = set(os.listdir(out))
    for mode in cli.MODES:
        for tag in ("300000000", "290000000"):
            assert f"H_{mode}_{tag}Hz.csv" in names
            assert f"capacity_{mode}_{tag}Hz.csv" in names
    assert not [n for n in names if n.endswith(".tmp")]
    spread_csv = (out / "H_spread-farfield_300000000Hz.csv").read_text().splitlines()
    full_csv = (out / "H_full_300000000Hz.csv").read_text().splitlines()
    dec_csv = (out / "H_decoupled_300000000Hz.csv").read_text().splitlines()
    assert spread_csv == dec_csv  # empty environment: spread part is zero
    full = complex(*map(float, full_csv[1].split(",")[2:]))
    dec = complex(*map(float, dec_csv[1].split(",")[2:]))
    assert abs(dec - full) <= 5e-3 * abs(full)
    caps = [float(l.split(",")[1]) for l in
            (out / "capacity_full_300000000Hz.csv").read_text().splitlines()[1:]]
    assert caps == sorted(caps)


def test_transfer_is_deterministic(free_file, tmp_path):
    for d in ("a", "b"):
        cli.main(["transfer", "--scene", str(free_file), "--out", str(tmp_path / d)])
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_verify_only_single_check(scene_file, tmp_path, capsys):
    assert cli.main(["verify", "--scene", str(scene_file), "--only", "reciprocity",
                     "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert [c["name"] for c in rep["checks"]] == ["reciprocity"]
    assert capsys.readouterr().out.startswith("PASS reciprocity")


def test_verify_coarse_quadrature_keeps_trend(scene_file, tmp_path):
    assert cli.main(["verify", "--scene", str(scene_file), "--only", "lemma1", "--quad-level",
                     "2", "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "verify_report.json").read_text())["checks"][0]["measured"]
    assert all(q >= 2 for q in m["reduction_factors"])


def test_verify_failure_exit_code(scene_file, tmp_path, monkeypatch):
    failing = lambda scene: checks.CheckResult("green", False, {}, "forced")
    monkeypatch.setitem(checks.CHECKS, "green", failing)
    assert cli.main(["verify", "--scene", str(scene_file), "--only", "green",
                     "--out", str(tmp_path)]) == 1


def test_sweep_needs_three_points(scene_file, tmp_path):
    assert cli.main(["sweep", "--scene", str(scene_file), "--kind", "antenna-scale",
                     "--points", "0.5,1", "--out", str(tmp_path)]) == 2
    assert cli.main(["sweep", "--scene", str(scene_file), "--out", str(tmp_path)]) == 2


def test_antenna_scale_sweep(scene_file, tmp_path):
    assert cli.main(["sweep", "--scene", str(scene_file), "--kind", "antenna-scale",
                     "--points", "0.25,0.5,1", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "sweep_antenna-scale.json").read_text())
    assert rep["fit_vs_sqrt_volume"]["slope"] > 0.45


def test_frequency_sweep_records_skips(scene_file, tmp_path, monkeypatch):
    from mimo_scatter.scatter import ResonanceError
    real = cli._safe_full

    def flaky(scene, f):
        if abs(f.f_hz - 3.1e8) < 1:
            return ResonanceError(f, 1e13)
        return real(scene, f)

    monkeypatch.setattr(cli, "_safe_full", flaky)
    assert cli.main(["sweep", "--scene", str(scene_file), "--kind", "frequency",
                     "--freq", "2.9e8,3e8,3.1e8", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "sweep_frequency.json").read_text())
    assert len(rep["points"]) == 2 and rep["skipped"][0]["frequency_hz"] == pytest.approx(3.1e8)


def test_atomic_write_keeps_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "r.json"
    cli.write_atomic(target, "old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(target, "new")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["r.json"]


def test_thread_env_var(monkeypatch):
    monkeypatch.setenv("MIMO_SCATTER_THREADS", "3")
    assert cli._threads() == 3
    monkeypatch.setenv("MIMO_SCATTER_THREADS", "lots")
    with pytest.raises(SystemExit):
        cli._threads()


def test_hz_label():
    assert cli.hz_label(3e8) == "300000000"
    assert cli.hz_label(2.5) == "2.5"
    assert cli.hz_label(2 * 3.141592653589793 * 3e8 / (2 * 3.141592653589793)) == "300000000"


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "mimo_scatter.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("validate", "transfer", "verify", "sweep"):
        assert cmd in res.stdout
