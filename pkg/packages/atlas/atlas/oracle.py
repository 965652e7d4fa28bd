import csv
import itertools
import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial import ConvexHull, Delaunay

from .errors import DimensionTooHigh
from .library import SolutionRecord
from .plant import Plant
from .spaces import from_normalized, in_output_box, sample_unit_directions
from .workers import child_rng, parallel_map

logger = logging.getLogger(__name__)

SPHERE_FACTOR = 1.5
MAX_GRID_DIM = 3
STREAM_AUDIT = 301
STREAM_HULL = 302


class AuditReport(BaseModel):
    n_samples: int
    accepts: int
    rejects: int
    false_accepts: int
    false_rejects: int
    false_accept_rate: float = Field(ge=0.0, le=1.0)
    false_reject_rate: float = Field(ge=0.0, le=1.0)
    volume_ratio_estimate: float

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in self.model_dump().items())

    def csv_row(self) -> list:
        return list(self.model_dump().values())

    @classmethod
    def csv_header(cls) -> list[str]:
        return list(cls.model_fields)


class HullReport(BaseModel):
    n_samples: int
    disagreement_rate: float
    hull_volume: float


def _judge(plant: Plant, record: SolutionRecord, X: np.ndarray, workers: int) -> AuditReport:
    control = record.control_region.vertices[0]
    fitted = record.depth_many(X) >= 0.0
    verdicts = parallel_map(lambda x: in_output_box(record.box, plant.evaluate(x, control)), list(X), workers)
    actual = np.array(verdicts, dtype=bool)
    n = X.shape[0]
    accepts = int(fitted.sum())
    false_accepts = int(np.sum(fitted & ~actual))
    false_rejects = int(np.sum(~fitted & actual))
    acceptable = int(actual.sum())
    return AuditReport(
        n_samples=n,
        accepts=accepts,
        rejects=n - accepts,
        false_accepts=false_accepts,
        false_rejects=false_rejects,
        false_accept_rate=false_accepts / n if n else 0.0,
        false_reject_rate=false_rejects / n if n else 0.0,
        volume_ratio_estimate=accepts / acceptable if acceptable else 0.0,
    )


def audit_sphere_radius(record: SolutionRecord) -> float:
    first = record.surfaces[0]
    radii = [s.radius for s in first.samples]
    if not radii:
        radii = first.radius(np.eye(first.dim)).tolist() + first.radius(-np.eye(first.dim)).tolist()
    return SPHERE_FACTOR * max(radii)


def _ball_points(record: SolutionRecord, plant: Plant, n: int, rng: np.random.Generator) -> np.ndarray:
    first = record.surfaces[0]
    dim = first.dim
    R = audit_sphere_radius(record)
    kept: list[np.ndarray] = []
    for _ in range(1000):
        need = n - len(kept)
        if need <= 0:
            break
        U = sample_unit_directions(rng, 2 * need, dim)
        V = U * (R * rng.random(2 * need) ** (1.0 / dim))[:, None]
        for x in from_normalized(first.frame, V):
            if plant.in_input_domain(x, rel_tol=0.0):
                kept.append(x)
    if len(kept) < n:
        logger.warning(f"Audit sphere mostly outside the input domain, using {len(kept)} of {n} points")
    return np.stack(kept[:n]) if kept else np.empty((0, dim))


def mc_audit(plant: Plant, record: SolutionRecord, n: int, seed: int = 0, workers: int = 1) -> AuditReport:
    """Fitted membership vs. direct plant acceptability on points uniform in the audit sphere.

    The sphere is centred on the first surface's origin with 1.5x the largest
    training radius, clipped to the input domain. The record's first vertex
    control is judged.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = child_rng(seed, STREAM_AUDIT)
    report = _judge(plant, record, _ball_points(record, plant, n, rng), workers)
    logger.info(f"MC audit of {record.id}: FAR={report.false_accept_rate:.4f} FRR={report.false_reject_rate:.4f}")
    return report


def grid_audit(plant: Plant, record: SolutionRecord, points_per_dim: int, workers: int = 1) -> AuditReport:
    """Full-factorial grid over the input domain (at most 3 inputs)."""
    if plant.n_in > MAX_GRID_DIM:
        raise DimensionTooHigh(f"grid audit supports up to {MAX_GRID_DIM} inputs, plant has {plant.n_in}")
    if points_per_dim < 2:
        raise ValueError(f"points_per_dim must be at least 2, got {points_per_dim}")
    domain = plant.signature.input_domain
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(domain.lo, domain.hi, strict=True)]
    X = np.array(list(itertools.product(*axes)))
    report = _judge(plant, record, X, workers)
    logger.info(f"Grid audit of {record.id}: FAR={report.false_accept_rate:.4f} FRR={report.false_reject_rate:.4f}")
    return report


def hull_agreement(record: SolutionRecord, n: int = 10_000, seed: int = 0) -> HullReport:
    """Compare the first surface (margin 1) to the exact convex hull of its cutoff points (2-D/3-D)."""
    first = record.surfaces[0]
    if first.dim not in (2, 3):
        raise DimensionTooHigh(f"hull cross-check needs 2 or 3 inputs, record has {first.dim}")
    points = np.stack([s.direction * s.radius for s in first.samples])
    hull = ConvexHull(points)
    triangulation = Delaunay(points[hull.vertices])
    rng = child_rng(seed, STREAM_HULL)
    R = audit_sphere_radius(record)
    U = sample_unit_directions(rng, n, first.dim)
    V = U * (R * rng.random(n) ** (1.0 / first.dim))[:, None]
    in_hull = triangulation.find_simplex(V) >= 0
    in_fit = first.with_margin(1.0).depth_normalized(V) >= 0.0
    return HullReport(n_samples=n, disagreement_rate=float(np.mean(in_hull != in_fit)), hull_volume=float(hull.volume))


def write_audit_csv(rows: list[tuple[str, str, AuditReport]], path: Path) -> None:
    """rows are (record id, audit kind, report)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["record_id", "kind"] + AuditReport.csv_header())
        for record_id, kind, report in rows:
            writer.writerow([record_id, kind] + report.csv_row())
