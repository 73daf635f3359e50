import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimo_scatter import checks
from mimo_scatter.scene import (Frequency, MaterialProfile, Region, SceneError, WireSection,
                                conductivity, delta_k2, disc_quadrature, load_scene,
                                normalized_current, permittivity, sample_region, scene_to_doc,
                                EPS0)


def test_scene_document_roundtrip(desk):
    doc = scene_to_doc(desk)
    again = load_scene(json.dumps(doc))
    assert again.regions == desk.regions
    assert again.e == desk.e and again.r == desk.r
    assert math.isclose(again.frequency.f_hz, 3e8)


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.update(schema=2), "schema"),
    (lambda d: d.pop("enclosure"), "enclosure"),
    (lambda d: d["regions"][2].update(center=[0.3, 0.0, 0.0]), "intersect|disjoint"),
    (lambda d: d["enclosure"].update(r=3.0), "enclosure radius"),
    (lambda d: d["regions"][2]["profile"].update(sigma=1.0), "conductivity"),
])
def test_invalid_documents_are_rejected(desk, mutate, message):
    doc = scene_to_doc(desk)
    mutate(doc)
    with pytest.raises(SceneError, match=message):
        load_scene(doc)


def test_unparseable_text():
    with pytest.raises(SceneError, match="parse error"):
        load_scene("{not json")


def test_separation_geometry(desk):
    assert desk.d_tr == pytest.approx(5.0 - 0.2)
    expected = min(np.linalg.norm(np.subtract(c, p)) - 0.25 - 0.1
                   for c in [(2, 3, 0), (3, -3, 0)] for p in [(0, 0, 0), (5, 0, 0)])
    assert desk.d_m == pytest.approx(expected)
    assert math.isinf(desk.without("scatterer").d_m)


@given(st.floats(1e6, 1e10), st.floats(0.0, 1e3))
def test_time_reversed_kernel_is_conjugate(f_hz, eta):
    f = Frequency.from_hz(f_hz, eta)
    d = 0.7
    g = np.exp(1j * f.kappa * d)
    assert np.exp(1j * f.reversed().kappa * d) == pytest.approx(np.conj(g), rel=1e-12)
    assert f.kappa.imag >= 0


def test_frequency_rejects_zero():
    with pytest.raises(SceneError):
        Frequency(0.0)


def test_material_fields(desk, freq):
    tx = desk.transmitters[0]
    c = np.asarray(tx.center)[None]
    assert permittivity(c, desk)[0] == pytest.approx(1.5 * EPS0)
    assert conductivity(c, desk)[0] == pytest.approx(1.0)
    far = np.array([[1.0, 1.0, 1.0]])
    assert permittivity(far, desk)[0] == pytest.approx(EPS0)
    assert delta_k2(far, freq, desk)[0] == 0


@given(st.floats(0.01, 0.05), st.floats(0.01, 0.05))
@settings(max_examples=25, deadline=None)
def test_normalized_current_has_unit_flux(radius, half_length):
    prof = MaterialProfile("transmitter", 0.5, 1.0, 0.1)
    wire = WireSection((0.0, 0.0, 0.0), (0.0, 1.0, 1.0), radius, half_length)
    reg = Region("tx", "transmitter", (0.0, 0.0, 0.0), prof, wire)
    rx = Region("rx", "receiver", (3.0, 0.0, 0.0), prof.scaled(1.0),
                WireSection((3.0, 0.0, 0.0), (0, 0, 1), 0.02, 0.02))
    from mimo_scatter.scene import SceneLayout
    scene = SceneLayout((reg, rx), (0, 0, 0), (3, 0, 0), 0.5)
    assert abs(normalized_current(0, scene).flux() - 1.0) <= 1e-10


def test_disc_quadrature_area():
    wire = WireSection((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 0.03, 0.05)
    _, w = disc_quadrature(wire, 8, 16)
    assert w.sum() == pytest.approx(math.pi * 0.03**2, rel=1e-12)


@pytest.mark.parametrize("count", [20, 100, 500])
def test_lattice_weights_sum_to_volume(count):
    reg = checks.desk_scene().transmitters[0]
    cs = sample_region(reg, count, pad=True)
    inner = cs.interior()
    assert inner.weights.sum() == pytest.approx(4 / 3 * math.pi * reg.radius**3, rel=1e-12)
    assert len(inner) == pytest.approx(count, rel=0.3)
    assert np.all(np.linalg.norm(inner.points - reg.center, axis=1) <= reg.radius * (1 + 1e-12))
    assert len(cs) > len(inner)


def test_lattice_sampling_is_deterministic():
    reg = checks.desk_scene().scatterers[0]
    a, b = sample_region(reg, 80), sample_region(reg, 80)
    assert np.array_equal(a.points, b.points)


def test_sample_region_rejects_tiny_count():
    with pytest.raises(SceneError):
        sample_region(checks.desk_scene().scatterers[0], 4)
