"""Acceptance criteria at desk scale, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line with the measured values and
then asserts the criterion at its stated tolerance and runtime budget.
"""

import time

import pytest

from mimo_scatter import checks


@pytest.fixture(scope="module")
def desk():
    return checks.desk_scene(count=100)


def _run(capsys, label, fn, budget):
    t = time.perf_counter()
    res = fn()
    elapsed = time.perf_counter() - t
    ok = res.passed and elapsed < budget
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} {label}: {res.tolerance}; runtime {elapsed:.1f}s "
              f"< {budget:.0f}s; measured {_summary(res)}")
    assert res.passed, res.measured
    assert elapsed < budget
    return res


def _summary(res):
    keep = {k: v for k, v in res.measured.items() if not isinstance(v, (dict, list))}
    return ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in keep.items()) \
        or str({k: v for k, v in res.measured.items() if k != "report"})


def test_criterion_1_helmholtz_residual(desk, capsys):
    res = _run(capsys, "1 helmholtz residual", lambda: checks.check_green(desk), 5)
    assert len(res.measured["steps"]) >= 3


def test_criterion_2_born_vs_direct(desk, capsys):
    assert desk.solver.points_per_region <= 200
    res = _run(capsys, "2 born vs direct solve", lambda: checks.check_oracle(desk, order=8), 60)
    assert res.measured["order"] == 8


def test_criterion_3_factorized_resolvent(desk, capsys):
    res = _run(capsys, "3 factorized resolvent", lambda: checks.check_lemma1(desk), 300)
    assert len(res.measured["discrepancy"]) == 3


def test_criterion_4_small_antenna_scaling(desk, capsys):
    res = _run(capsys, "4 small-antenna scaling", lambda: checks.check_lemma2(desk), 600)
    assert res.measured["scales"] == [1.0, 0.5, 0.25, 0.125]


def test_criterion_5_farfield_spread(desk, capsys):
    _run(capsys, "5 far-field spread decay", lambda: checks.check_farfield(desk), 600)


def test_criterion_6_reciprocity(desk, capsys):
    _run(capsys, "6 reciprocity", lambda: checks.check_reciprocity(desk), 30)


def test_criterion_7_gvector_independence(desk, capsys):
    _run(capsys, "7 g-vector independence", lambda: checks.check_gvector(desk), 30)


def test_criterion_8_closed_forms(desk, capsys):
    _run(capsys, "8 closed forms", lambda: checks.check_closed_forms(desk), 60)


def test_criterion_9_maxwell_residuals(desk, capsys):
    res = _run(capsys, "9 maxwell residuals", lambda: checks.check_maxwell(desk), 120)
    assert len(res.measured["orders"]) == 5
