import numpy as np
import pytest

from ocpfem.nested import (FULL_TOLERANCE, NestedConfig, nested_pcg_tolerance, run_nested, total_work)
from ocpfem.targets import get_target

PEAK2D = get_target("peak2d")


def test_tolerance_rule_arithmetic():
    assert nested_pcg_tolerance(1) == FULL_TOLERANCE
    assert nested_pcg_tolerance(2, expected_eoc=2.0) == pytest.approx(0.025)
    assert nested_pcg_tolerance(3, expected_eoc=0.5) == pytest.approx(0.0707, abs=1e-4)
    assert nested_pcg_tolerance(3, fixed=1e-6) == 1e-6
    # measured eoc from the last two errors, clipped to [0.25, 4]
    assert nested_pcg_tolerance(3, [1.0, 0.25]) == pytest.approx(0.1 / 4)
    assert nested_pcg_tolerance(3, [1.0, 1e-9]) == pytest.approx(0.1 / 16)
    assert nested_pcg_tolerance(3, [1.0, 1.0]) == pytest.approx(0.1 * 2**-0.25)


def test_config_validation():
    for bad in (dict(eps=0.0), dict(eps=1.0), dict(c_cost=0.0), dict(max_levels=0), dict(n0=0),
                dict(cost_measure="h2"), dict(mode="h3")):
        with pytest.raises(ValueError):
            NestedConfig(PEAK2D, **bad)


def test_accuracy_stop_at_level_one():
    reps = run_nested(NestedConfig(PEAK2D, n0=8, eps=0.999, max_levels=3))
    r = reps[0]
    stopped = r.error_M <= 0.999 * r.target_norm_M
    assert (len(reps) == 1 and r.stop_reason == "accuracy") == stopped


def test_cost_stop_at_level_one():
    reps = run_nested(NestedConfig(PEAK2D, n0=8, c_cost=1e-300, max_levels=3))
    assert len(reps) == 1 and reps[0].stop_reason == "cost"
    reps = run_nested(NestedConfig(PEAK2D, n0=8, c_cost=1e-300, max_levels=3, cost_measure="hminus1"))
    assert reps[0].stop_reason == "cost"


def test_max_level_stop_and_report_fields():
    reps = run_nested(NestedConfig(PEAK2D, n0=4, eps=1e-9, max_levels=3))
    assert [r.level for r in reps] == [1, 2, 3]
    assert reps[-1].stop_reason == "max_level"
    assert [r.dofs for r in reps] == [25, 81, 289]
    assert [r.interior_dofs for r in reps] == [9, 49, 225]
    for r in reps:
        assert r.rho == pytest.approx(r.h**2)
        assert r.cost >= 0 and r.extra["converged"]


def test_nested_matches_non_nested_2d():
    common = dict(n0=8, eps=1e-9, max_levels=5)
    nested = run_nested(NestedConfig(PEAK2D, **common))
    plain = run_nested(NestedConfig(PEAK2D, nested=False, **common))
    for a, b in zip(nested, plain):
        assert abs(a.error - b.error) <= 0.15 * b.error
        assert abs(a.error_M - b.error_M) <= 0.15 * b.error_M
    assert total_work(nested) < total_work(plain)


def test_l2_mode_levels():
    reps = run_nested(NestedConfig(PEAK2D, mode="l2", n0=4, eps=1e-9, max_levels=3))
    assert [r.rho for r in reps] == pytest.approx([r.h**4 for r in reps])
    assert reps[-1].error < reps[0].error


def test_lazy_recovery_only_on_last_level():
    reps = run_nested(NestedConfig(PEAK2D, n0=4, eps=1e-9, max_levels=3, lazy_recovery=True, cost_measure="hminus1"))
    assert [r.recovery_its > 0 for r in reps] == [False, False, True]
    assert np.isfinite(reps[-1].extra["control_cost"])


def test_deterministic():
    cfg = NestedConfig(PEAK2D, n0=4, eps=1e-9, max_levels=3)
    a = [(r.its, r.error, r.error_M, r.cost) for r in run_nested(cfg)]
    b = [(r.its, r.error, r.error_M, r.cost) for r in run_nested(cfg)]
    assert a == b


def test_progress_callback():
    seen = []
    run_nested(NestedConfig(PEAK2D, n0=4, eps=1e-9, max_levels=2), progress=seen.append)
    assert [r.level for r in seen] == [1, 2]


def test_total_work():
    reps = run_nested(NestedConfig(PEAK2D, n0=4, eps=1e-9, max_levels=3))
    assert total_work(reps) == reps[1].its + reps[2].its
    assert total_work(reps, from_level=1) == sum(r.its for r in reps)
