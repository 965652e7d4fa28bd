import math

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator


class Box(BaseModel):
    """Closed axis-aligned box, one lo/hi pair per dimension."""

    model_config = ConfigDict(frozen=True)

    lo: list[float]
    hi: list[float]

    @model_validator(mode="after")
    def check_bounds(self) -> "Box":
        if len(self.lo) != len(self.hi):
            raise ValueError(f"lo has {len(self.lo)} components, hi has {len(self.hi)}")
        if not self.lo:
            raise ValueError("box must have at least one dimension")
        for i, (lo, hi) in enumerate(zip(self.lo, self.hi, strict=True)):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"component {i} is unbounded ({lo}, {hi})")
            if lo > hi:
                raise ValueError(f"component {i} has lo {lo} > hi {hi}")
        return self

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x, rel_tol: float = 0.0) -> bool:
        for i, v in enumerate(x):
            slack = rel_tol * (self.hi[i] - self.lo[i])
            if v < self.lo[i] - slack or v > self.hi[i] + slack:
                return False
        return True


class OutputBox(Box):
    """Bounded output space plus the "best" desired output inside it."""

    target: list[float]

    @model_validator(mode="after")
    def check_target(self) -> "OutputBox":
        if len(self.target) != len(self.lo):
            raise ValueError(f"target has {len(self.target)} components, box has {len(self.lo)}")
        for i, t in enumerate(self.target):
            if not (self.lo[i] <= t <= self.hi[i]):
                raise ValueError(f"target component {i} = {t} outside [{self.lo[i]}, {self.hi[i]}]")
        return self


class PlantSignature(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_in: PositiveInt
    n_ctrl: PositiveInt
    n_out: PositiveInt
    input_domain: Box
    control_domain: Box

    @model_validator(mode="after")
    def check_dims(self) -> "PlantSignature":
        if self.input_domain.dim != self.n_in:
            raise ValueError(f"input domain has {self.input_domain.dim} dims, n_in is {self.n_in}")
        if self.control_domain.dim != self.n_ctrl:
            raise ValueError(f"control domain has {self.control_domain.dim} dims, n_ctrl is {self.n_ctrl}")
        return self


# Library file documents. Field names are the on-disk names.


class MonomialCoefficient(BaseModel):
    monomial: list[int]
    value: float


class SampleDocument(BaseModel):
    direction: list[float]
    radius: float = Field(ge=0.0)
    clipped: bool
    hole_detected: bool


class SurfaceDocument(BaseModel):
    origin: list[float]
    scales: list[float]
    degree: int = Field(ge=0)
    coefficients: list[MonomialCoefficient]
    rms_residual: float = Field(ge=0.0)
    margin: float = Field(gt=0.0, le=1.0)
    floor: float = Field(gt=0.0)
    sample_count: int = Field(ge=0)
    hole_count: int = Field(default=0, ge=0)
    samples: list[SampleDocument] = []


class ControlDocument(BaseModel):
    vertices: list[list[float]] = Field(min_length=1)
    centroid: list[float]


class RecordDocument(BaseModel):
    id: str
    box: OutputBox
    surfaces: list[SurfaceDocument] = Field(min_length=1)
    control: ControlDocument
    provenance: dict = {}


class LibraryDocument(BaseModel):
    format_version: int
    plant_id: str
    records: list[RecordDocument] = []
    checksum: int

    @model_validator(mode="after")
    def check_unique_ids(self) -> "LibraryDocument":
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise ValueError(f"duplicate record id {record.id!r}")
            seen.add(record.id)
        return self
