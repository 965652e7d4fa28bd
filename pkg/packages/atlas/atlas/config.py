import json
import os
from enum import StrEnum
from pathlib import Path
from typing import Annotated, Literal

from common.models import Box, OutputBox
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigInvalid, FileUnreadable


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="BOUNDED_ATLAS_", extra="ignore")

    # App
    app_name: str = "bounded-atlas"
    log_level: str = "INFO"

    # Worker pool (BOUNDED_ATLAS_WORKERS); the CLI --workers flag wins over it
    workers: PositiveInt = Field(default_factory=lambda: os.cpu_count() or 1)

    # Default plant evaluation cap when a run config does not set one
    eval_budget: PositiveInt = 10**8


settings = Settings()


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SearchConfig(StrictModel):
    # Best-control compass search
    budget: PositiveInt = 2000
    restarts: int = Field(default=4, ge=0)
    initial_step: float = Field(default=0.25, gt=0.0, le=1.0)
    shrink: float = Field(default=0.5, gt=0.0, lt=1.0)
    min_step: float = Field(default=1e-9, gt=0.0)
    weights: list[float] | None = None

    # Ray cutoff search
    tol: float = Field(default=1e-6, gt=0.0)
    probe_k: int = Field(default=8, ge=0)

    # Random control draws per origin for the acceptable-control diagnostic; 0 skips it
    scan: int = Field(default=0, ge=0)


class BoundaryConfig(StrictModel):
    degree: int = Field(default=2, ge=0)
    batch_size: PositiveInt | None = None  # 4x the coefficient count when unset
    refine_batch_size: PositiveInt | None = None  # 1 adds near-surface points one at a time
    margin: float = Field(default=0.95, gt=0.0, le=1.0)
    stabilization_eps: float = Field(default=0.02, ge=0.0)
    stabilization_window: int = Field(default=3, ge=1)
    max_batches: PositiveInt = 25
    refine_low: float = Field(default=0.5, gt=0.0, lt=1.0)
    refine_high: float = Field(default=1.5, gt=1.0)

    # Normalization: unit = scale_fraction * domain width unless unit_scales is given
    scale_fraction: float = Field(default=0.01, gt=0.0)
    unit_scales: list[float] | None = None

    convexity_chords: int = Field(default=200, ge=0)


class ExpansionConfig(StrictModel):
    n_interior: int = Field(default=0, ge=0)
    n_proximal: int = Field(default=0, ge=0)
    proximity_band: float = Field(default=0.1, gt=0.0)
    validation_samples: PositiveInt = 1000
    n_combos: int = Field(default=4, ge=0)
    min_witnesses: PositiveInt = 50
    max_attempts: PositiveInt = 200  # sampler draws per requested point


class LearnConfig(StrictModel):
    seed: int = Field(ge=0)
    search: SearchConfig = SearchConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    expansion: ExpansionConfig = ExpansionConfig()


class AffinePlantSpec(StrictModel):
    kind: Literal["affine"]
    A: list[list[float]]
    B: list[list[float]]
    b: list[float]
    input_domain: Box
    control_domain: Box


class EllipsoidalPlantSpec(StrictModel):
    kind: Literal["ellipsoidal"]
    center: list[float]
    weights: list[float]
    input_domain: Box
    control_domain: Box
    g_offset: float = 0.0
    g_linear: list[float] = []
    g_quadratic: list[float] = []


class NetworkAnalogSpec(StrictModel):
    kind: Literal["network_analog"]
    seed: int = Field(ge=0)


class AnnulusSpec(StrictModel):
    kind: Literal["annulus"]
    n_in: PositiveInt = 2


PlantSpec = Annotated[
    AffinePlantSpec | EllipsoidalPlantSpec | NetworkAnalogSpec | AnnulusSpec,
    Field(discriminator="kind"),
]


class DispatchPolicy(StrEnum):
    CENTROID = "centroid"
    FIRST_VERTEX = "first_vertex"
    NEAREST_VERTEX = "nearest_vertex"


class FallbackMode(StrEnum):
    HALT = "halt"
    NEAREST_REGION = "nearest_region"


class TrajectoryMode(StrEnum):
    STATE_FEEDBACK = "state_feedback"
    FIXED_ORIGIN = "fixed_origin"


class TrajectorySpec(StrictModel):
    start_state: list[float]
    waypoints: list[OutputBox] = Field(min_length=1)
    mode: TrajectoryMode = TrajectoryMode.STATE_FEEDBACK


class SimulationSpec(StrictModel):
    inputs: list[list[float]] = Field(min_length=1)
    policy: DispatchPolicy = DispatchPolicy.CENTROID
    fallback: FallbackMode = FallbackMode.HALT
    drift_window: PositiveInt = 10
    drift_threshold: float = 0.2


class AuditSpec(StrictModel):
    n_samples: PositiveInt = 10_000
    points_per_dim: int | None = Field(default=None, ge=2)
    seed: int = Field(default=0, ge=0)


class RunConfig(StrictModel):
    plant: PlantSpec
    seed: int = Field(ge=0)
    origins: list[list[float]] = []
    boxes: list[OutputBox] = []  # one per origin, or a single box shared by all
    search: SearchConfig = SearchConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    expansion: ExpansionConfig = ExpansionConfig()
    trajectory: TrajectorySpec | None = None
    simulation: SimulationSpec | None = None
    audit: AuditSpec = AuditSpec()
    eval_budget: PositiveInt | None = None
    library_file: str = "library.json"

    def learn_config(self) -> LearnConfig:
        return LearnConfig(seed=self.seed, search=self.search, boundary=self.boundary, expansion=self.expansion)

    def box_for(self, index: int) -> OutputBox:
        return self.boxes[0] if len(self.boxes) == 1 else self.boxes[index]


def _format_error(err: dict) -> str:
    loc = ".".join(str(p) for p in err["loc"])
    return f"{loc}: {err['msg']}" if loc else err["msg"]


def _semantic_diagnostics(cfg: RunConfig) -> list[str]:
    # Imported here: plant construction depends on config models.
    from .plant import build_plant_signature

    problems: list[str] = []
    try:
        sig = build_plant_signature(cfg.plant)
    except Exception as e:
        return [f"plant: {e}"]

    if cfg.boxes and len(cfg.boxes) not in (1, len(cfg.origins)):
        problems.append(f"boxes: {len(cfg.boxes)} boxes for {len(cfg.origins)} origins (need 1 or one per origin)")
    if cfg.origins and not cfg.boxes:
        problems.append("boxes: origins given without an output box")
    for k, box in enumerate(cfg.boxes):
        if box.dim != sig.n_out:
            problems.append(f"boxes.{k}: {box.dim} components, plant has {sig.n_out} outputs")
    for k, origin in enumerate(cfg.origins):
        problems.extend(_point_diagnostics(f"origins.{k}", origin, sig.input_domain))
    if cfg.search.weights is not None and len(cfg.search.weights) != sig.n_out:
        problems.append(f"search.weights: {len(cfg.search.weights)} weights, plant has {sig.n_out} outputs")
    if cfg.boundary.unit_scales is not None and len(cfg.boundary.unit_scales) != sig.n_in:
        problems.append(f"boundary.unit_scales: {len(cfg.boundary.unit_scales)} scales, plant has {sig.n_in} inputs")
    if cfg.trajectory is not None:
        problems.extend(_point_diagnostics("trajectory.start_state", cfg.trajectory.start_state, sig.input_domain))
        for k, box in enumerate(cfg.trajectory.waypoints):
            if box.dim != sig.n_out:
                problems.append(f"trajectory.waypoints.{k}: {box.dim} components, plant has {sig.n_out} outputs")
        if cfg.trajectory.mode == TrajectoryMode.STATE_FEEDBACK and sig.n_out != sig.n_in:
            problems.append(f"trajectory.mode: state feedback needs n_out == n_in, plant has {sig.n_out} and {sig.n_in}")
    if cfg.simulation is not None:
        for k, x in enumerate(cfg.simulation.inputs):
            if len(x) != sig.n_in:
                problems.append(f"simulation.inputs.{k}: {len(x)} components, plant has {sig.n_in} inputs")
    return problems


def _point_diagnostics(field_name: str, point: list[float], domain: Box) -> list[str]:
    if len(point) != domain.dim:
        return [f"{field_name}: {len(point)} components, plant has {domain.dim} inputs"]
    return [
        f"{field_name}.{i}: {v} outside input domain [{domain.lo[i]}, {domain.hi[i]}]"
        for i, v in enumerate(point)
        if not (domain.lo[i] < v < domain.hi[i])
    ]


def _read_document(config_path: Path) -> str:
    try:
        return Path(config_path).read_text(encoding="utf-8")
    except OSError as e:
        raise FileUnreadable(f"{config_path}: {e}") from e


def validate_config(config_path: Path) -> list[str]:
    """Every problem in the config file; an empty list means it is runnable."""
    text = _read_document(config_path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        return [f"document: not valid JSON ({e})"]
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        return [_format_error(err) for err in e.errors()]
    return _semantic_diagnostics(cfg)


def load_run_config(config_path: Path, seed_override: int | None = None) -> RunConfig:
    problems = validate_config(config_path)
    if problems:
        raise ConfigInvalid(problems)
    cfg = RunConfig.model_validate_json(_read_document(config_path))
    if seed_override is not None:
        cfg = cfg.model_copy(update={"seed": seed_override})
    return cfg
