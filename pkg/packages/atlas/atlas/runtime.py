import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import DispatchPolicy, FallbackMode, LearnConfig
from .errors import AtlasError, DimensionMismatch
from .library import SolutionLibrary, SolutionRecord, TrajectoryPlan, learn_trio
from .plant import Plant
from .spaces import in_output_box

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dispatch:
    record_id: str
    chosen_control: np.ndarray
    depth: float
    fallback_used: bool = False


@dataclass(frozen=True, eq=False)
class SimStep:
    input: np.ndarray
    dispatch: Dispatch
    output: np.ndarray
    in_box: bool


@dataclass
class SimTrace:
    steps: list[SimStep] = field(default_factory=list)
    halted_at: int | None = None

    def __len__(self) -> int:
        return len(self.steps)

    def append(self, step: SimStep) -> None:
        self.steps.append(step)


@dataclass(frozen=True, eq=False)
class AdaptationRequest:
    origin: np.ndarray
    median_depth: float


def classify(lib: SolutionLibrary, x) -> tuple[SolutionRecord | None, float]:
    """Deepest record containing `x` (ties by lowest id), or (None, best depth seen)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not lib.records:
        return None, -np.inf
    for record in lib.records:
        if record.n_in != x.shape[0]:
            raise DimensionMismatch(f"input has {x.shape[0]} components, record {record.id} has {record.n_in}")
    ranked = sorted(((record.depth(x), record) for record in lib.records), key=lambda dr: (-dr[0], dr[1].id))
    depth, record = ranked[0]
    if depth >= 0.0:
        return record, depth
    return None, depth


def nearest_region(lib: SolutionLibrary, x) -> tuple[SolutionRecord, float]:
    x = np.asarray(x, dtype=float).reshape(-1)
    return min(((r, r.depth(x)) for r in lib.records), key=lambda rd: (-rd[1], rd[0].id))


def dispatch_control(record: SolutionRecord, policy: DispatchPolicy = DispatchPolicy.CENTROID, previous=None) -> np.ndarray:
    vertices = record.control_region.vertices
    match policy:
        case DispatchPolicy.CENTROID:
            return record.control_region.centroid
        case DispatchPolicy.FIRST_VERTEX:
            return vertices[0]
        case DispatchPolicy.NEAREST_VERTEX:
            if previous is None:
                return vertices[0]
            previous = np.asarray(previous, dtype=float)
            distances = [float(np.linalg.norm(v - previous)) for v in vertices]
            return vertices[int(np.argmin(distances))]
    raise ValueError(f"unknown dispatch policy {policy!r}")


def simulate(
    plant: Plant,
    lib: SolutionLibrary,
    inputs: Sequence,
    policy: DispatchPolicy = DispatchPolicy.CENTROID,
    fallback: FallbackMode = FallbackMode.HALT,
) -> SimTrace:
    """Classify, dispatch and evaluate each input in order."""
    if len(inputs) == 0:
        raise ValueError("simulate needs at least one input")
    trace = SimTrace()
    previous = None
    for k, x in enumerate(inputs):
        x = np.asarray(x, dtype=float)
        record, depth = classify(lib, x)
        used_fallback = False
        if record is None:
            if fallback == FallbackMode.HALT or not lib.records:
                logger.warning(f"Step {k}: input {x.tolist()} is in no learned region, halting")
                trace.halted_at = k
                break
            record, depth = nearest_region(lib, x)
            used_fallback = True
            logger.warning(f"Step {k}: no region contains the input, falling back to {record.id} (depth {depth:.3f})")
        control = dispatch_control(record, policy, previous)
        y = plant.evaluate(x, control)
        dispatch = Dispatch(record.id, control, depth, used_fallback)
        trace.append(SimStep(x, dispatch, y, in_output_box(record.box, y)))
        previous = control
    return trace


def simulate_trajectory(
    plant: Plant,
    plan: TrajectoryPlan,
    start_state,
    policy: DispatchPolicy = DispatchPolicy.CENTROID,
    cfg: LearnConfig | None = None,
) -> SimTrace:
    """Run a state-feedback plan: each step's output becomes the next input.

    When the actual state is outside the step's region, the trio is relearned
    from the actual state if `cfg` is given; otherwise the stored control is
    applied as a flagged fallback.
    """
    state = np.asarray(start_state, dtype=float)
    trace = SimTrace()
    previous = None
    for k, (box, record) in enumerate(plan.waypoints):
        depth = record.depth(state)
        used_fallback = False
        if depth < 0.0:
            if cfg is not None:
                logger.info(f"Waypoint {k}: state left region {record.id}, replanning from the actual state")
                try:
                    record = learn_trio(plant, state, box, cfg, record_id=f"{record.id}/replan")
                    depth = record.depth(state)
                except AtlasError as e:
                    logger.warning(f"Waypoint {k}: replanning failed ({e.line()}), using the stored control")
                    used_fallback = True
            else:
                used_fallback = True
        control = dispatch_control(record, policy, previous)
        y = plant.evaluate(state, control)
        trace.append(SimStep(state, Dispatch(record.id, control, depth, used_fallback), y, in_output_box(box, y)))
        previous = control
        if plan.state_feedback:
            state = y
    return trace


def drift_monitor(window: Sequence[SimStep], threshold_depth: float) -> AdaptationRequest | None:
    """Ask for adaptation when the median membership depth in `window` sinks below the threshold."""
    if not window:
        raise ValueError("drift window is empty")
    median_depth = float(np.median([step.dispatch.depth for step in window]))
    if median_depth >= threshold_depth:
        return None
    origin = np.median(np.stack([step.input for step in window]), axis=0)
    logger.info(f"Median depth {median_depth:.3f} below {threshold_depth}, suggesting origin {origin.tolist()}")
    return AdaptationRequest(origin=origin, median_depth=median_depth)


def write_trace_csv(trace: SimTrace, path: Path) -> None:
    if not trace.steps:
        header = ["step", "record_id", "in_box", "depth", "fallback_used"]
        rows = []
    else:
        first = trace.steps[0]
        n_in, n_ctrl, n_out = first.input.shape[0], first.dispatch.chosen_control.shape[0], first.output.shape[0]
        header = (
            ["step"]
            + [f"x{i}" for i in range(n_in)]
            + ["record_id"]
            + [f"c{i}" for i in range(n_ctrl)]
            + [f"y{i}" for i in range(n_out)]
            + ["in_box", "depth", "fallback_used"]
        )
        rows = [
            [k]
            + [f"{v:.17g}" for v in s.input]
            + [s.dispatch.record_id]
            + [f"{v:.17g}" for v in s.dispatch.chosen_control]
            + [f"{v:.17g}" for v in s.output]
            + [int(s.in_box), f"{s.dispatch.depth:.17g}", int(s.dispatch.fallback_used)]
            for k, s in enumerate(trace.steps)
        ]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
