import numpy as np
import pytest

from atlas.config import DispatchPolicy, FallbackMode
from atlas.errors import DimensionMismatch
from atlas.library import SolutionLibrary
from atlas.runtime import (
    Dispatch,
    SimStep,
    classify,
    dispatch_control,
    drift_monitor,
    simulate,
    write_trace_csv,
)


@pytest.fixture
def two_intervals(make_interval_record, unit_box):
    a = make_interval_record("A", 0.0, 1.0, [[0.0]], unit_box)
    b = make_interval_record("B", 1.0, 1.0, [[-1.0]], unit_box)
    return SolutionLibrary(plant_id="affine", records=(a, b))


def _step(x, depth: float) -> SimStep:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return SimStep(x, Dispatch("A", np.zeros(1), depth), x, True)


def test_classify_picks_deepest(two_intervals):
    record, depth = classify(two_intervals, [0.9])
    assert record.id == "B"
    assert depth == pytest.approx(0.9)
    assert two_intervals.get("A").depth([0.9]) == pytest.approx(0.1)


def test_classify_single_match(two_intervals):
    record, _ = classify(two_intervals, [-0.5])
    assert record.id == "A"


def test_classify_no_match(two_intervals):
    record, depth = classify(two_intervals, [5.0])
    assert record is None
    assert depth < 0


def test_classify_tie_goes_to_lowest_id(make_interval_record, unit_box):
    lib = SolutionLibrary(
        plant_id="affine",
        records=(
            make_interval_record("b", 0.0, 1.0, [[0.0]], unit_box),
            make_interval_record("a", 1.0, 1.0, [[0.0]], unit_box),
        ),
    )
    record, _ = classify(lib, [0.5])
    assert record.id == "a"


def test_classify_dimension_checked(two_intervals):
    with pytest.raises(DimensionMismatch):
        classify(two_intervals, [0.1, 0.2])


def test_dispatch_single_vertex(make_interval_record, unit_box):
    record = make_interval_record("A", 0.0, 1.0, [[0.3]], unit_box)
    for policy in DispatchPolicy:
        assert dispatch_control(record, policy, previous=[0.9]).tolist() == [0.3]


def test_dispatch_policies(make_interval_record, unit_box):
    record = make_interval_record("A", 2.0, 1.0, [[-2.0], [-2.5]], unit_box)
    assert dispatch_control(record, DispatchPolicy.CENTROID)[0] == pytest.approx(-2.25)
    assert dispatch_control(record, DispatchPolicy.FIRST_VERTEX).tolist() == [-2.0]
    assert dispatch_control(record, DispatchPolicy.NEAREST_VERTEX, previous=[-2.4]).tolist() == [-2.5]
    assert dispatch_control(record, DispatchPolicy.NEAREST_VERTEX).tolist() == [-2.0]


def test_simulate_inside_one_region(integrator, two_intervals):
    trace = simulate(integrator, two_intervals, [[-0.8], [-0.5], [0.2]], DispatchPolicy.FIRST_VERTEX)
    assert len(trace) == 3
    assert trace.halted_at is None
    assert all(step.in_box for step in trace.steps)
    assert [step.dispatch.record_id for step in trace.steps] == ["A", "A", "A"]


def test_simulate_halts_at_gap(integrator, two_intervals, caplog):
    trace = simulate(integrator, two_intervals, [[0.5], [5.0], [1.5]], fallback=FallbackMode.HALT)
    assert len(trace) == 1
    assert trace.halted_at == 1
    assert "halting" in caplog.text


def test_simulate_nearest_region_fallback(integrator, two_intervals):
    trace = simulate(integrator, two_intervals, [[0.5], [2.5], [1.5]], fallback=FallbackMode.NEAREST_REGION)
    assert len(trace) == 3
    assert trace.halted_at is None
    flagged = [step.dispatch.fallback_used for step in trace.steps]
    assert flagged == [False, True, False]
    assert trace.steps[1].dispatch.record_id == "B"
    assert trace.steps[1].dispatch.depth < 0


def test_simulate_needs_inputs(integrator, two_intervals):
    with pytest.raises(ValueError):
        simulate(integrator, two_intervals, [])


def test_drift_monitor_quiet_when_deep():
    assert drift_monitor([_step(k, 0.9) for k in range(5)], 0.2) is None


def test_drift_monitor_requests_median_origin():
    window = [_step(x, d) for x, d in zip([1, 2, 3, 4, 5], [0.5, 0.15, 0.12, 0.1, 0.1], strict=True)]
    request = drift_monitor(window, 0.2)
    assert request is not None
    assert request.median_depth == pytest.approx(0.12)
    assert request.origin.tolist() == [3.0]


def test_drift_monitor_identical_inputs():
    request = drift_monitor([_step([0.4, -1.0], 0.05) for _ in range(4)], 0.2)
    assert request.origin.tolist() == [0.4, -1.0]


def test_drift_monitor_empty_window():
    with pytest.raises(ValueError):
        drift_monitor([], 0.2)


def test_trace_csv(tmp_path, integrator, two_intervals):
    trace = simulate(integrator, two_intervals, [[0.5], [1.5]])
    write_trace_csv(trace, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "step,x0,record_id,c0,y0,in_box,depth,fallback_used"
    assert len(lines) == 3
    assert lines[2].split(",")[2] == "B"
