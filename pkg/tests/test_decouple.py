import json

import numpy as np
import pytest

from mimo_scatter import channel, decouple
from mimo_scatter.checks import scaled_antennas
from mimo_scatter.operators import sphere_grid
from mimo_scatter.scatter import antenna_source, scene_system, solve_full


@pytest.fixture(scope="module")
def solvers(desk, freq):
    return decouple.SideSolvers(desk, freq, 60)


def test_factorization_converges_with_annulus_quadrature(desk, freq, solvers):
    disc = [decouple.lemma1_factorized(desk, freq, 0, lv, solvers=solvers).discrepancy
            for lv in ((2, 4, 8), (3, 6, 12), (4, 8, 16), (5, 10, 20))]
    assert disc[0] > 0.1
    assert all(a > 10 * b for a, b in zip(disc, disc[1:]))
    assert disc[-1] < 1e-5


def test_environment_substitution_error_shrinks_with_antennas(desk, freq):
    big = decouple.lemma2_error(desk, freq, count=60)
    small = decouple.lemma2_error(scaled_antennas(desk, 0.5), freq, count=60)
    assert big["error"] < 5e-3
    assert small["error"] < big["error"] / 4
    assert small["volume"] == pytest.approx(big["volume"] / 8)


def test_gvectors_do_not_see_the_environment(desk, freq):
    grid = sphere_grid(4, 8)
    bare = desk.without("scatterer")
    for fn in (decouple.transmitter_gvector, decouple.receiver_gvector):
        a = fn(desk, 0, freq, grid, count=60).values
        b = fn(bare, 0, freq, grid, count=60).values
        assert np.array_equal(a, b)


def test_receiver_functional_matches_receiver_current(desk, freq, solvers):
    L = decouple.ReceiverFunctional(desk, 0, freq, solvers.get("R"))
    src = antenna_source(desk, 0, freq, 60)
    A = solvers.get("R").solve_source(src)
    direct = channel.receiver_current(A, desk, 0, freq)
    assert L.apply(src) == pytest.approx(direct, rel=1e-10)


def test_explicit_mid_table_matches_layer_product(desk, freq, solvers):
    grid = sphere_grid(4, 8)
    gT = decouple.transmitter_gvector(desk, 0, freq, grid, solvers=solvers)
    gR = decouple.receiver_gvector(desk, 0, freq, grid, solvers=solvers)
    mid = decouple.mid_spread(desk, freq, grid, grid, solvers=solvers)
    table = decouple.transfer_from_mid(desk, gR, gT, mid)
    layer = decouple.decoupled_transfer(desk, freq, grid, solvers=solvers).entries[0, 0]
    assert table == pytest.approx(layer, rel=1e-10)
    doc = json.loads(decouple.mid_spread_to_json(mid, grid, grid))
    assert np.array(doc["re"]).shape == (32, 32, 6, 6)


def test_decoupled_transfer_tracks_full_solve(desk, freq, solvers):
    full = channel.transfer_matrix(desk, freq, sol=solvers.get("total")).entries
    dec = decouple.decoupled_transfer(desk, freq, sphere_grid(8, 16), solvers=solvers).entries
    assert np.abs(dec - full).max() <= 5e-3 * np.abs(full).max()


def test_shell_trace_derivative_block_is_radial_derivative(desk, freq):
    from dataclasses import replace
    grid = sphere_grid(3, 6)
    y = np.array([0.02, -0.01, 0.03])
    h = 1e-5
    tr = decouple.shell_traces("T", desk, freq, grid, y, count=60)
    up = decouple.shell_traces("T", replace(desk, r=desk.r + h), freq, grid, y, count=60)
    dn = decouple.shell_traces("T", replace(desk, r=desk.r - h), freq, grid, y, count=60)
    fd = (up.blocks[:, 1] - dn.blocks[:, 1]) / (2 * h)
    assert np.allclose(tr.blocks[:, 0], fd, rtol=1e-6, atol=1e-9 * np.abs(fd).max())
    assert json.loads(tr.to_json())["side"] == "T"


def test_reciprocity_report(desk, freq):
    rep = decouple.reciprocity_check(desk, freq, 30)
    assert rep["max"] < 1e-10
    assert set(rep) >= {"total", "T", "M", "R", "W_adjoint"}


def test_unknown_side(desk, freq):
    with pytest.raises(ValueError):
        decouple.shell_traces("X", desk, freq, sphere_grid(2, 4), np.zeros(3), count=60)
