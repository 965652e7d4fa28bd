import hashlib
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from common.models import OutputBox
from pydantic import BaseModel

from .boundary import RadialSurface, convexity_violation, learn_surface
from .config import LearnConfig, TrajectoryMode
from .errors import (
    AllOriginsFailed,
    AtlasError,
    EmptyIntersection,
    NoAcceptableControl,
    OriginNotAcceptable,
    OriginOutsideDomain,
    StateFeedbackDimMismatch,
    WaypointInfeasible,
)
from .plant import Plant
from .search import best_control
from .spaces import NormalizedFrame, in_output_box, sample_unit_direction, sample_unit_directions, to_normalized
from .workers import child_rng, child_seed, parallel_map

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

STREAM_BEST_CONTROL = 201
STREAM_SURFACE = 202
STREAM_EXPAND = 203
STREAM_CANDIDATE = 204
STREAM_VALIDATE = 205
STREAM_WITNESS = 206


@dataclass(frozen=True, eq=False)
class ControlRegion:
    """Validated control vectors; the region is their convex hull."""

    vertices: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not self.vertices:
            raise ValueError("a control region needs at least one vertex")
        object.__setattr__(self, "vertices", tuple(np.asarray(v, dtype=float).reshape(-1) for v in self.vertices))

    @property
    def centroid(self) -> np.ndarray:
        return np.mean(np.stack(self.vertices), axis=0)

    def with_vertex(self, control) -> "ControlRegion":
        return ControlRegion(self.vertices + (np.asarray(control, dtype=float),))


@dataclass(frozen=True, eq=False)
class SolutionRecord:
    """Bounded input region (AND of surfaces), bounded control region and output box."""

    id: str
    surfaces: tuple[RadialSurface, ...]
    control_region: ControlRegion
    box: OutputBox
    provenance: dict = field(default_factory=dict)

    @property
    def origin(self) -> np.ndarray:
        return self.surfaces[0].origin

    @property
    def n_in(self) -> int:
        return self.surfaces[0].dim

    def depth_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.min(np.stack([s.depth_many(X) for s in self.surfaces]), axis=0)

    def depth(self, x) -> float:
        return float(self.depth_many(x)[0])

    def contains(self, x) -> bool:
        return self.depth(x) >= 0.0


@dataclass(frozen=True, eq=False)
class SolutionLibrary:
    plant_id: str
    records: tuple[SolutionRecord, ...] = ()
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError(f"record ids are not unique: {ids}")

    def __len__(self) -> int:
        return len(self.records)

    def get(self, record_id: str) -> SolutionRecord:
        for record in self.records:
            if record.id == record_id:
                return record
        raise KeyError(record_id)

    def with_record(self, record: SolutionRecord) -> "SolutionLibrary":
        """Append, or replace the record with the same id in place."""
        records = list(self.records)
        for k, existing in enumerate(records):
            if existing.id == record.id:
                records[k] = record
                break
        else:
            records.append(record)
        return replace(self, records=tuple(records))


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    waypoints: tuple[tuple[OutputBox, SolutionRecord], ...]
    mode: TrajectoryMode = TrajectoryMode.STATE_FEEDBACK

    @property
    def state_feedback(self) -> bool:
        return self.mode == TrajectoryMode.STATE_FEEDBACK

    @property
    def records(self) -> tuple[SolutionRecord, ...]:
        return tuple(record for _, record in self.waypoints)


class ValidationReport(BaseModel):
    vertex_pass_rate: float
    combo_pass_rate: float
    samples_used: int
    vertex_checks: int
    combo_checks: int


def default_record_id(origin: np.ndarray, box: OutputBox, seed: int) -> str:
    payload = json.dumps({"origin": origin.tolist(), "box": box.model_dump(), "seed": seed}, sort_keys=True)
    return "rec-" + hashlib.sha1(payload.encode()).hexdigest()[:12]


def make_frame(plant: Plant, origin: np.ndarray, cfg: LearnConfig) -> NormalizedFrame:
    if cfg.boundary.unit_scales is not None:
        return NormalizedFrame(origin, np.asarray(cfg.boundary.unit_scales, dtype=float))
    return NormalizedFrame.from_domain(origin, plant.signature.input_domain, cfg.boundary.scale_fraction)


def _check_interior(plant: Plant, origin: np.ndarray) -> None:
    lo = np.asarray(plant.signature.input_domain.lo)
    hi = np.asarray(plant.signature.input_domain.hi)
    if origin.shape[0] != plant.n_in or np.any(origin <= lo) or np.any(origin >= hi):
        raise OriginOutsideDomain(f"origin {origin.tolist()} is not strictly inside the input domain")


def learn_trio(
    plant: Plant,
    origin,
    box: OutputBox,
    cfg: LearnConfig,
    record_id: str | None = None,
    workers: int = 1,
) -> SolutionRecord:
    """Best control at `origin`, then the bounded input region that control serves."""
    origin = np.asarray(origin, dtype=float).reshape(-1)
    _check_interior(plant, origin)

    found = best_control(
        plant,
        origin,
        box,
        weights=cfg.search.weights,
        budget=cfg.search.budget,
        seed=child_seed(cfg.seed, STREAM_BEST_CONTROL),
        restarts=cfg.search.restarts,
        initial_step=cfg.search.initial_step,
        shrink=cfg.search.shrink,
        min_step=cfg.search.min_step,
    )
    frame = make_frame(plant, origin, cfg)
    surface, trace, _ = learn_surface(
        plant,
        found.control,
        frame,
        box,
        cfg.boundary,
        tol=cfg.search.tol,
        probe_k=cfg.search.probe_k,
        seed=child_seed(cfg.seed, STREAM_SURFACE),
        workers=workers,
    )
    convexity = convexity_violation(surface, cfg.seed, cfg.boundary.convexity_chords) if cfg.boundary.convexity_chords else 0.0
    if convexity > 0:
        logger.warning(f"Fitted surface is not convex: {convexity:.1%} of chord midpoints fall outside")

    provenance = {
        "plant_id": plant.plant_id,
        "master_seed": cfg.seed,
        "config": cfg.model_dump(mode="json"),
        "origin": origin.tolist(),
        "best_control": {"loss": found.loss, "evals": found.evals_used, "budget_exhausted": found.budget_exhausted},
        "evals": found.evals_used + trace.evals,
        "fit_traces": [_trace_doc(trace)],
        "hole_count": surface.hole_count,
        "hole_violation": surface.hole_count > 0,
        "convexity_violation": convexity,
    }
    record = SolutionRecord(
        id=record_id or default_record_id(origin, box, cfg.seed),
        surfaces=(surface,),
        control_region=ControlRegion((found.control,)),
        box=box,
        provenance=provenance,
    )
    logger.info(f"Learned trio {record.id}: control loss {found.loss:.3e}, rms {surface.rms_residual:.3e}")
    return record


def _trace_doc(trace) -> dict:
    return {
        "history": [[count, rms] for count, rms in trace.history],
        "stabilized": trace.stabilized,
        "budget_exhausted": trace.budget_exhausted,
        "evals": trace.evals,
    }


def sample_region(
    record: SolutionRecord,
    plant: Plant,
    n: int,
    rng: np.random.Generator,
    max_attempts: int,
    surfaces: Sequence[RadialSurface] | None = None,
) -> np.ndarray:
    """Points uniform over the intersection of `surfaces` (default: the record's) and the input domain.

    Rejection sampling from the origin-centred normalized ball that bounds the
    first surface.
    """
    surfaces = tuple(surfaces) if surfaces is not None else record.surfaces
    first = surfaces[0]
    dim = first.dim
    ball = first.margin * first.bounding_radius()
    kept: list[np.ndarray] = []
    attempts = 0
    budget = max_attempts * max(n, 1)
    while len(kept) < n:
        batch = min(max(2 * (n - len(kept)), 16), budget - attempts)
        if batch <= 0:
            raise EmptyIntersection(f"only {len(kept)} of {n} region points after {attempts} draws")
        attempts += batch
        U = sample_unit_directions(rng, batch, dim)
        t = ball * rng.random(batch) ** (1.0 / dim)
        X = first.frame.origin + (U * t[:, None]) * first.frame.unit_scales
        ok = np.all(np.stack([s.depth_many(X) >= 0.0 for s in surfaces]), axis=0)
        for x, good in zip(X, ok, strict=True):
            if good and plant.in_input_domain(x, rel_tol=0.0) and len(kept) < n:
                kept.append(x)
    return np.stack(kept) if kept else np.empty((0, dim))


def validate_record(
    plant: Plant,
    record: SolutionRecord,
    n_samples: int = 1000,
    n_combos: int = 4,
    seed: int = 0,
    max_attempts: int = 200,
) -> ValidationReport:
    """Check every vertex and random convex combinations of vertices on points of the region."""
    rng = child_rng(seed, STREAM_VALIDATE)
    points = sample_region(record, plant, n_samples, rng, max_attempts)
    vertices = np.stack(record.control_region.vertices)
    vertex_pass = combo_pass = combo_checks = 0
    for x in points:
        for c in vertices:
            vertex_pass += in_output_box(record.box, plant.evaluate(x, c))
        for _ in range(n_combos):
            weights = rng.dirichlet(np.ones(len(vertices)))
            combo_pass += in_output_box(record.box, plant.evaluate(x, weights @ vertices))
            combo_checks += 1
    vertex_checks = len(points) * len(vertices)
    report = ValidationReport(
        vertex_pass_rate=vertex_pass / vertex_checks if vertex_checks else 1.0,
        combo_pass_rate=combo_pass / combo_checks if combo_checks else 1.0,
        samples_used=len(points),
        vertex_checks=vertex_checks,
        combo_checks=combo_checks,
    )
    if report.combo_pass_rate < 1.0:
        logger.warning(f"Record {record.id}: {1 - report.combo_pass_rate:.1%} of convex control combinations fail")
    return report


def _proximal_origins(
    record: SolutionRecord, plant: Plant, n: int, band: float, rng: np.random.Generator, max_attempts: int
) -> list[np.ndarray]:
    first = record.surfaces[0]
    found: list[np.ndarray] = []
    for _ in range(max_attempts * max(n, 1)):
        if len(found) >= n:
            break
        u = sample_unit_direction(rng, first.dim)
        r = first.margin * float(first.radius(u[None])[0])
        x = first.frame.origin + u * r * (1.0 + band * rng.random()) * first.frame.unit_scales
        if record.contains(x) or not plant.in_input_domain(x, rel_tol=0.0):
            continue
        lo = np.asarray(plant.signature.input_domain.lo)
        hi = np.asarray(plant.signature.input_domain.hi)
        if np.any(x <= lo) or np.any(x >= hi):
            continue
        found.append(x)
    return found


def expand_control_region(
    plant: Plant,
    record: SolutionRecord,
    cfg: LearnConfig,
    interior_origins: Sequence | None = None,
    proximal_origins: Sequence | None = None,
    workers: int = 1,
) -> SolutionRecord:
    """Grow the control region with trios learned from interior and near-boundary origins.

    Candidates are learned concurrently and accepted one by one in candidate
    order: a candidate is accepted when at least `min_witnesses` points of the
    running intersection also lie in its region. Explicit origin lists
    replace the sampled ones.
    """
    exp = cfg.expansion
    rng = child_rng(cfg.seed, STREAM_EXPAND)
    try:
        if interior_origins is None:
            interior_origins = (
                list(sample_region(record, plant, exp.n_interior, rng, exp.max_attempts)) if exp.n_interior else []
            )
        if proximal_origins is None:
            proximal_origins = (
                _proximal_origins(record, plant, exp.n_proximal, exp.proximity_band, rng, exp.max_attempts)
                if exp.n_proximal
                else []
            )
    except EmptyIntersection as e:
        logger.warning(f"Record {record.id}: region yields no sample points, left unchanged")
        return replace(record, provenance=dict(record.provenance) | {"expansion": {"error": e.line()}})

    candidates = [("interior", np.asarray(x, dtype=float)) for x in interior_origins]
    candidates += [("proximal", np.asarray(x, dtype=float)) for x in proximal_origins]
    if not candidates:
        return record

    def learn(k: int):
        kind, origin = candidates[k]
        sub = cfg.model_copy(update={"seed": child_seed(cfg.seed, STREAM_CANDIDATE, k)})
        try:
            return learn_trio(plant, origin, record.box, sub, record_id=f"{record.id}/c{k}")
        except AtlasError as e:
            return e

    outcomes = parallel_map(learn, range(len(candidates)), workers)

    surfaces = list(record.surfaces)
    region = record.control_region
    accepted: list[dict] = []
    rejected: list[dict] = []
    need = max(exp.min_witnesses, exp.validation_samples // 10)
    witness_rng = child_rng(cfg.seed, STREAM_WITNESS)
    for k, ((kind, origin), outcome) in enumerate(zip(candidates, outcomes, strict=True)):
        entry = {"index": k, "kind": kind, "origin": origin.tolist()}
        if isinstance(outcome, AtlasError):
            rejected.append(entry | {"reason": outcome.line()})
            logger.warning(f"Expansion candidate {k} ({kind}) failed: {outcome.line()}")
            continue
        try:
            witnesses = sample_region(record, plant, exp.validation_samples, witness_rng, exp.max_attempts, surfaces)
        except EmptyIntersection as e:
            logger.warning(f"Running intersection of {record.id} has no witnesses left, record left unchanged: {e}")
            for j, (later_kind, later_origin) in enumerate(candidates[k:], start=k):
                rejected.append({"index": j, "kind": later_kind, "origin": later_origin.tolist(), "reason": e.line()})
                logger.warning(f"Expansion candidate {j} ({later_kind}) dropped with the lost intersection")
            diagnostic = {"error": e.line(), "discarded": accepted, "rejected": rejected}
            return replace(record, provenance=dict(record.provenance) | {"expansion": diagnostic})
        common = int(np.sum(outcome.surfaces[0].depth_many(witnesses) >= 0.0))
        if common < need:
            rejected.append(entry | {"reason": f"{common} common witnesses, need {need}"})
            logger.warning(f"Expansion candidate {k} ({kind}) rejected: {common} common witnesses of {need}")
            continue
        surfaces.append(outcome.surfaces[0])
        region = region.with_vertex(outcome.control_region.vertices[0])
        accepted.append(entry | {"witnesses": common, "control": outcome.control_region.vertices[0].tolist()})
        logger.info(f"Record {record.id}: accepted {kind} candidate {k} with {common} common witnesses")

    grown = replace(record, surfaces=tuple(surfaces), control_region=region)
    try:
        report = validate_record(plant, grown, exp.validation_samples, exp.n_combos, cfg.seed, exp.max_attempts)
        validation = report.model_dump()
    except EmptyIntersection as e:
        logger.warning(f"Record {record.id}: validation found too few region points: {e}")
        validation = {"error": e.line()}
    provenance = dict(record.provenance)
    provenance["expansion"] = {"accepted": accepted, "rejected": rejected, "validation": validation}
    provenance["fit_traces"] = list(record.provenance.get("fit_traces", [])) + [
        t for outcome in outcomes if isinstance(outcome, SolutionRecord) for t in outcome.provenance["fit_traces"]
    ]
    return replace(grown, provenance=provenance)


def decompose(
    plant: Plant,
    origins: Sequence,
    boxes: Sequence[OutputBox],
    cfg: LearnConfig,
    expand: bool = False,
    workers: int = 1,
) -> SolutionLibrary:
    """One record per origin, in origin order; failing origins are logged and skipped."""
    if not origins:
        raise ValueError("decompose needs at least one origin")
    if len(boxes) not in (1, len(origins)):
        raise ValueError(f"{len(boxes)} boxes for {len(origins)} origins")

    def build(k: int) -> SolutionRecord | AtlasError:
        box = boxes[0] if len(boxes) == 1 else boxes[k]
        sub = cfg.model_copy(update={"seed": child_seed(cfg.seed, k)})
        try:
            record = learn_trio(plant, origins[k], box, sub, record_id=f"r{k:03d}")
            if expand:
                record = expand_control_region(plant, record, sub)
            return record
        except AtlasError as e:
            return e

    records: list[SolutionRecord] = []
    for k, outcome in enumerate(parallel_map(build, range(len(origins)), workers)):
        if isinstance(outcome, AtlasError):
            logger.warning(f"Skipping origin {k} {np.asarray(origins[k]).tolist()}: {outcome.line()}")
        else:
            records.append(outcome)
    if not records:
        raise AllOriginsFailed(f"none of {len(origins)} origins produced a record")
    return SolutionLibrary(plant_id=plant.plant_id, records=tuple(records))


def plan_trajectory(
    plant: Plant,
    start_state,
    waypoints: Sequence[OutputBox],
    cfg: LearnConfig,
    mode: TrajectoryMode = TrajectoryMode.STATE_FEEDBACK,
    workers: int = 1,
) -> TrajectoryPlan:
    """Chain trios through `waypoints`.

    In state-feedback mode the output is the next state, so each waypoint's
    target becomes the next origin. In fixed-origin mode every waypoint is
    learned at `start_state`.
    """
    if not waypoints:
        raise ValueError("a trajectory needs at least one waypoint")
    if mode == TrajectoryMode.STATE_FEEDBACK and plant.n_out != plant.n_in:
        raise StateFeedbackDimMismatch(f"state feedback needs n_out == n_in, plant has {plant.n_out} and {plant.n_in}")

    origin = np.asarray(start_state, dtype=float)
    steps: list[tuple[OutputBox, SolutionRecord]] = []
    for k, box in enumerate(waypoints):
        sub = cfg.model_copy(update={"seed": child_seed(cfg.seed, k)})
        try:
            record = learn_trio(plant, origin, box, sub, record_id=f"w{k:03d}", workers=workers)
        except (NoAcceptableControl, OriginNotAcceptable, OriginOutsideDomain) as e:
            partial = TrajectoryPlan(tuple(steps), mode)
            raise WaypointInfeasible(k, e.line(), plan=partial) from e
        steps.append((box, record))
        if mode == TrajectoryMode.STATE_FEEDBACK:
            origin = np.asarray(box.target, dtype=float)
    return TrajectoryPlan(tuple(steps), mode)


def adapt(
    plant: Plant,
    record: SolutionRecord,
    new_origin,
    cfg: LearnConfig,
    record_id: str | None = None,
    workers: int = 1,
) -> SolutionRecord:
    """Relearn the trio at `new_origin` for the same output box; `record` is left as is."""
    new_origin = np.asarray(new_origin, dtype=float)
    fresh = learn_trio(plant, new_origin, record.box, cfg, record_id=record_id, workers=workers)
    provenance = dict(fresh.provenance)
    provenance["adapted_from"] = record.id
    shift = to_normalized(record.surfaces[0].frame, new_origin)
    provenance["origin_shift_normalized"] = float(np.linalg.norm(shift))
    return replace(fresh, provenance=provenance)


def adapt_path(
    plant: Plant, record: SolutionRecord, origins: Sequence, cfg: LearnConfig, workers: int = 1
) -> list[SolutionRecord]:
    """Adapt step by step along `origins`; each record links to its predecessor."""
    chain: list[SolutionRecord] = []
    current = record
    for k, origin in enumerate(origins):
        sub = cfg.model_copy(update={"seed": child_seed(cfg.seed, k)})
        current = adapt(plant, current, origin, sub, record_id=f"{record.id}~{k}", workers=workers)
        chain.append(current)
    return chain
