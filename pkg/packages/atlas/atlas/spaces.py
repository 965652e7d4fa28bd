import math
from dataclasses import dataclass

import numpy as np
from common.models import Box, OutputBox

from .errors import DimensionMismatch, OriginOutsideDomain, ZeroVectorDraw

DEFAULT_SCALE_FRACTION = 0.01
UNIT_TOL = 1e-12
MAX_REDRAWS = 16


@dataclass(frozen=True, eq=False)
class NormalizedFrame:
    """Origin plus per-dimension physical size of one normalized unit."""

    origin: np.ndarray
    unit_scales: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(-1)
        scales = np.asarray(self.unit_scales, dtype=float).reshape(-1)
        if origin.shape != scales.shape:
            raise DimensionMismatch(f"origin has {origin.shape[0]} components, scales {scales.shape[0]}")
        if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
            raise ValueError(f"unit scales must be positive and finite, got {scales.tolist()}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "unit_scales", scales)

    @property
    def dim(self) -> int:
        return self.origin.shape[0]

    @classmethod
    def from_domain(cls, origin, domain: Box, fraction: float = DEFAULT_SCALE_FRACTION) -> "NormalizedFrame":
        widths = np.asarray(domain.hi) - np.asarray(domain.lo)
        # Degenerate (zero-width) dimensions still need a positive unit.
        widths = np.where(widths > 0, widths, 1.0)
        return cls(np.asarray(origin, dtype=float), fraction * widths)


@dataclass(frozen=True, eq=False)
class Ray:
    frame: NormalizedFrame
    direction: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.direction, dtype=float).reshape(-1)
        if u.shape[0] != self.frame.dim:
            raise DimensionMismatch(f"direction has {u.shape[0]} components, frame {self.frame.dim}")
        if abs(float(np.linalg.norm(u)) - 1.0) > UNIT_TOL:
            raise ValueError(f"ray direction must be a unit vector, norm is {np.linalg.norm(u)}")
        object.__setattr__(self, "direction", u)


def _check_dim(frame: NormalizedFrame, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != frame.dim:
        raise DimensionMismatch(f"vector has {v.shape[-1]} components, frame has {frame.dim}")
    return v


def to_normalized(frame: NormalizedFrame, x) -> np.ndarray:
    """Accepts a single point or a stack of points (last axis is the dimension)."""
    x = _check_dim(frame, x)
    return (x - frame.origin) / frame.unit_scales


def from_normalized(frame: NormalizedFrame, v) -> np.ndarray:
    v = _check_dim(frame, v)
    return frame.origin + v * frame.unit_scales


def sample_unit_direction(rng: np.random.Generator, n: int) -> np.ndarray:
    """Isotropic unit vector from normalized standard-normal components."""
    if n < 1:
        raise ValueError(f"dimension must be at least 1, got {n}")
    for _ in range(MAX_REDRAWS):
        z = rng.standard_normal(n)
        norm = float(np.linalg.norm(z))
        if norm > 0 and math.isfinite(norm):
            return z / norm
    raise ZeroVectorDraw(f"{MAX_REDRAWS} consecutive zero draws in dimension {n}")


def sample_unit_directions(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    return np.stack([sample_unit_direction(rng, n) for _ in range(count)]) if count else np.empty((0, n))


def point_on_ray(ray: Ray, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"ray parameter must be nonnegative, got {t}")
    if t == 0:
        return ray.frame.origin.copy()
    return from_normalized(ray.frame, t * ray.direction)


def in_output_box(box: OutputBox, y) -> bool:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != box.dim:
        raise DimensionMismatch(f"output has {y.shape[0]} components, box has {box.dim}")
    return bool(np.all(y >= np.asarray(box.lo)) and np.all(y <= np.asarray(box.hi)))


def max_domain_radius(ray: Ray, domain: Box) -> float:
    """Largest normalized t with point_on_ray(ray, t) inside `domain`."""
    lo = np.asarray(domain.lo)
    hi = np.asarray(domain.hi)
    origin = ray.frame.origin
    if origin.shape[0] != lo.shape[0]:
        raise DimensionMismatch(f"ray has {origin.shape[0]} dims, domain {lo.shape[0]}")
    if np.any(origin <= lo) or np.any(origin >= hi):
        raise OriginOutsideDomain(f"origin {origin.tolist()} is not strictly inside the domain")
    step = ray.direction * ray.frame.unit_scales
    limits = []
    for i in np.flatnonzero(step != 0):
        face = hi[i] if step[i] > 0 else lo[i]
        limits.append((face - origin[i]) / step[i])
    return float(min(limits))
