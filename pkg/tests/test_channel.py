import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mimo_scatter import channel
from mimo_scatter.checks import check_maxwell
from mimo_scatter.operators import ZeroField
from mimo_scatter.scatter import scene_system, solve_full
from mimo_scatter.scene import Frequency


def test_capacity_closed_form():
    assert channel.capacity(np.eye(2), 3.0) == pytest.approx(2 * math.log2(2.5), abs=1e-12)
    assert channel.capacity(np.zeros((3, 2)), 10.0) == 0.0
    with pytest.raises(ValueError):
        channel.capacity(np.eye(2), 0.0)


@given(arrays(np.float64, (3, 2), elements=st.floats(-1, 1)),
       arrays(np.float64, (3, 2), elements=st.floats(-1, 1)))
@settings(max_examples=50, deadline=None)
def test_capacity_monotone_in_snr(re, im):
    H = re + 1j * im
    curve = channel.capacity_curve(H, [0.1, 1.0, 10.0, 100.0])
    assert np.all(np.diff(curve) >= -1e-12)
    # equal-power capacity never exceeds the single-stream bound times rank
    assert curve[-1] <= 2 * math.log2(1 + 100.0 * np.linalg.norm(H, 2) ** 2) + 1e-9


def test_transfer_matrix_exports(freq):
    H = channel.TransferMatrix(np.array([[1 + 2j, -0.5j]]), freq, "full")
    rows = list(csv.reader(io.StringIO(H.to_csv())))
    assert rows[0] == ["row_m", "col_n", "re", "im"]
    assert [complex(float(r[2]), float(r[3])) for r in rows[1:]] == [1 + 2j, -0.5j]
    doc = json.loads(H.to_json())
    assert doc["mode"] == "full" and doc["frequency_hz"] == pytest.approx(3e8)


def test_field_sample_rejects_nan():
    with pytest.raises(FloatingPointError):
        channel.FieldSample(np.zeros((1, 3)), np.full((1, 3), np.nan), "E")


def test_e_field_step_guard(desk, freq):
    with pytest.raises(ValueError):
        channel.e_field(ZeroField(), desk, freq, np.zeros((1, 3)), step=1e-12)


def test_zero_field_has_zero_residuals(desk, freq):
    res = channel.maxwell_fields(ZeroField(), desk, freq, np.array([[1.0, 1.0, 1.0]]), 0.01)
    for eq in channel.EQUATIONS:
        assert np.all(res[eq] == 0)


def test_maxwell_residuals_second_order(desk):
    res = check_maxwell(desk)
    assert res.passed, res.measured["orders"]


def test_charge_elimination_residual_second_order(desk, freq):
    A = channel.vector_potential(desk, 0, freq, solve_full(scene_system(desk, freq, count=60)))
    x = np.array([[1.0, 1.0, 0.5], [2.0, -1.0, 0.3]])
    r = [np.abs(channel.charge_elimination_residual(A, desk, freq, x, h)).max()
         for h in (0.04, 0.02, 0.01)]
    assert math.log(r[0] / r[2], 4) == pytest.approx(2.0, abs=0.3)


def test_full_and_decoupled_agree_in_free_space(free_scene, freq):
    from mimo_scatter.operators import sphere_grid
    from mimo_scatter.decouple import decoupled_transfer
    full = channel.transfer_matrix(free_scene, freq).entries
    dec = decoupled_transfer(free_scene, freq, sphere_grid(8, 16)).entries
    assert np.abs(dec - full).max() <= 5e-3 * np.abs(full).max()


def test_output_currents_linear(desk, freq):
    H = channel.transfer_matrix(desk, freq)
    assert H.entries.shape == (1, 1)
    out = channel.output_currents(H, [2.0 - 1j])
    assert out[0] == pytest.approx((2.0 - 1j) * H.entries[0, 0])


def test_unknown_mode(desk, freq):
    with pytest.raises(ValueError):
        channel.transfer_matrix(desk, freq, "bogus")
