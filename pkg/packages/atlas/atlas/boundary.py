import csv
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from common.models import OutputBox

from .config import BoundaryConfig
from .errors import BudgetExhausted, DegenerateDirections, InsufficientSamples, OriginNotAcceptable
from .plant import Plant
from .search import DEFAULT_PROBE_K, DEFAULT_TOL, CutoffResult, cutoff_radius
from .spaces import NormalizedFrame, Ray, in_output_box, sample_unit_directions, to_normalized
from .workers import child_rng, parallel_map

logger = logging.getLogger(__name__)

# Singular values with s**2 below RIDGE * mean(s**2) are dropped (minimum-norm solution).
RIDGE = 1e-8
FLOOR_FRACTION = 0.1
MIN_FLOOR = 1e-12
STREAM_DIRECTIONS = 101
STREAM_CHORDS = 102

Monomial = tuple[int, ...]


@dataclass(frozen=True, eq=False)
class CutoffSample:
    direction: np.ndarray
    radius: float
    clipped: bool = False
    hole_detected: bool = False

    @classmethod
    def from_result(cls, direction: np.ndarray, result: CutoffResult) -> "CutoffSample":
        return cls(direction=direction, radius=result.radius, clipped=result.clipped, hole_detected=result.hole_detected)


def monomials(n: int, degree: int) -> tuple[Monomial, ...]:
    """Direction monomials up to total `degree` as sorted index tuples; () is the constant."""
    out: list[Monomial] = []
    for d in range(degree + 1):
        out.extend(itertools.combinations_with_replacement(range(n), d))
    return tuple(out)


def monomial_exponents(monomial: Monomial, n: int) -> list[int]:
    exps = [0] * n
    for i in monomial:
        exps[i] += 1
    return exps


def monomial_from_exponents(exponents: list[int]) -> Monomial:
    return tuple(i for i, e in enumerate(exponents) for _ in range(e))


def sphere_polynomial_dim(n: int, degree: int) -> int:
    # On the unit sphere sum(u_i**2) = 1, so only the harmonics of degree d and d-1 stay independent.
    top = math.comb(n + degree - 1, n - 1)
    below = math.comb(n + degree - 2, n - 1) if degree >= 1 else 0
    return top + below


def design_matrix(U: np.ndarray, monos: tuple[Monomial, ...]) -> np.ndarray:
    U = np.atleast_2d(U)
    m = U.shape[0]
    cols = [np.prod(U[:, list(idx)], axis=1) if idx else np.ones(m) for idx in monos]
    return np.column_stack(cols)


@dataclass(frozen=True, eq=False)
class RadialSurface:
    """Star-shaped region {origin + t*u : t <= margin * r(u)} in a normalized frame.

    r(u) is a polynomial in the direction components, clamped from below by
    `min_radius_floor`.
    """

    frame: NormalizedFrame
    degree: int
    monomials: tuple[Monomial, ...]
    coefficients: np.ndarray
    rms_residual: float
    margin: float
    min_radius_floor: float
    sample_count: int
    samples: tuple[CutoffSample, ...] = ()
    hole_count: int = 0

    @property
    def dim(self) -> int:
        return self.frame.dim

    @property
    def origin(self) -> np.ndarray:
        return self.frame.origin

    def raw_radius(self, U) -> np.ndarray:
        return design_matrix(np.asarray(U, dtype=float), self.monomials) @ self.coefficients

    def radius(self, U) -> np.ndarray:
        return np.maximum(self.raw_radius(U), self.min_radius_floor)

    def bounding_radius(self) -> float:
        """Largest fitted radius over the sample directions and the coordinate axes."""
        axes = np.vstack([np.eye(self.dim), -np.eye(self.dim)])
        U = np.vstack([axes] + [s.direction[None] for s in self.samples])
        return float(np.max(self.radius(U)))

    def depth_normalized(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=float))
        rho = np.linalg.norm(V, axis=1)
        depth = np.ones(V.shape[0])
        nz = rho > 0
        if np.any(nz):
            R = self.margin * self.radius(V[nz] / rho[nz, None])
            depth[nz] = 1.0 - rho[nz] / R
        return depth

    def depth_many(self, X) -> np.ndarray:
        return self.depth_normalized(to_normalized(self.frame, np.atleast_2d(np.asarray(X, dtype=float))))

    def contains(self, x) -> tuple[bool, float]:
        depth = float(self.depth_many(x)[0])
        return depth >= 0.0, depth

    def with_margin(self, margin: float) -> "RadialSurface":
        return replace(self, margin=margin)

    def recompute_rms(self) -> float:
        reg = [s for s in self.samples if not s.clipped]
        if not reg:
            return 0.0
        U = np.stack([s.direction for s in reg])
        r = np.array([s.radius for s in reg])
        return float(np.sqrt(np.mean((self.raw_radius(U) - r) ** 2)))


def contains(surface: RadialSurface, x) -> tuple[bool, float]:
    return surface.contains(x)


def fit_radial_surface(
    samples: list[CutoffSample],
    frame: NormalizedFrame,
    degree: int = 2,
    margin: float = 0.95,
) -> RadialSurface:
    """Least-squares radius polynomial over the non-clipped samples."""
    if degree < 0:
        raise ValueError(f"degree must be nonnegative, got {degree}")
    if not 0 < margin <= 1:
        raise ValueError(f"margin must be in (0, 1], got {margin}")
    n = frame.dim
    monos = monomials(n, degree)
    reg = [s for s in samples if not s.clipped]
    if len(reg) < len(monos):
        raise InsufficientSamples(f"{len(reg)} boundary samples for {len(monos)} coefficients (degree {degree}, {n} dims)")

    U = np.stack([s.direction for s in reg])
    r = np.array([s.radius for s in reg])
    A = design_matrix(U, monos)
    left, sv, vt = np.linalg.svd(A, full_matrices=False)
    keep = sv**2 > RIDGE * float(np.sum(sv**2)) / len(monos)
    rank = int(keep.sum())
    needed = min(sphere_polynomial_dim(n, degree), len(monos))
    if rank < needed:
        raise DegenerateDirections(f"design matrix rank {rank} below {needed} for degree {degree} in {n} dims")
    coef = vt[keep].T @ ((left[:, keep].T @ r) / sv[keep])
    rms = float(np.sqrt(np.mean((A @ coef - r) ** 2)))

    floor = max(FLOOR_FRACTION * min(s.radius for s in samples), MIN_FLOOR)
    return RadialSurface(
        frame=frame,
        degree=degree,
        monomials=monos,
        coefficients=coef,
        rms_residual=rms,
        margin=margin,
        min_radius_floor=floor,
        sample_count=len(samples),
        samples=tuple(samples),
        hole_count=sum(1 for s in samples if s.hole_detected),
    )


@dataclass
class FitTrace:
    history: list[tuple[int, float]] = field(default_factory=list)
    stabilized: bool = False
    budget_exhausted: bool = False
    evals: int = 0  # plant evaluations made by this fit only

    def append(self, sample_count: int, rms_residual: float) -> None:
        if self.history and sample_count <= self.history[-1][0]:
            raise ValueError(f"sample count {sample_count} does not extend {self.history[-1][0]}")
        self.history.append((sample_count, rms_residual))

    def is_stable(self, eps: float, window: int, abs_floor: float = 0.0) -> bool:
        if len(self.history) < window:
            return False
        recent = [rms for _, rms in self.history[-window:]]
        spread = max(recent) - min(recent)
        return spread <= eps * max(recent) or spread <= abs_floor


def learn_surface(
    plant: Plant,
    control,
    frame: NormalizedFrame,
    box: OutputBox,
    cfg: BoundaryConfig,
    tol: float = DEFAULT_TOL,
    probe_k: int = DEFAULT_PROBE_K,
    seed: int = 0,
    workers: int = 1,
) -> tuple[RadialSurface, FitTrace, list[CutoffSample]]:
    """Ray-cast cutoff samples around `frame.origin` and fit until the residual stabilizes."""
    control = np.asarray(control, dtype=float)
    if not in_output_box(box, plant.evaluate(frame.origin, control)):
        raise OriginNotAcceptable(f"control does not map origin {frame.origin.tolist()} into the output box")

    n = frame.dim
    n_coef = len(monomials(n, cfg.degree))
    batch_size = cfg.batch_size or 4 * n_coef
    refine_size = cfg.refine_batch_size or batch_size
    rng = child_rng(seed, STREAM_DIRECTIONS)

    samples: list[CutoffSample] = []
    trace = FitTrace(evals=1)  # the origin check
    surface: RadialSurface | None = None

    for batch in range(cfg.max_batches):
        size = batch_size if surface is None else refine_size
        dirs = sample_unit_directions(rng, size, n)
        if surface is None:
            brackets = [None] * size
        else:
            seeds = surface.radius(dirs)
            brackets = [(cfg.refine_low * r, cfg.refine_high * r) for r in seeds]

        def search(k: int, dirs=dirs, brackets=brackets) -> CutoffResult:
            ray = Ray(frame, dirs[k])
            return cutoff_radius(plant, control, ray, box, tol, probe_k, brackets[k], check_origin=False)

        try:
            results = parallel_map(search, range(size), workers)
        except BudgetExhausted:
            if surface is None:
                raise
            trace.budget_exhausted = True
            logger.warning(f"Evaluation budget exhausted in batch {batch + 1}, keeping the previous fit")
            break

        trace.evals += sum(res.evals_used for res in results)
        new = [CutoffSample.from_result(d, res) for d, res in zip(dirs, results, strict=True)]
        for s in new:
            if s.hole_detected:
                logger.warning(f"Interior unacceptable gap along direction {np.round(s.direction, 4).tolist()}")
        samples.extend(new)

        try:
            surface = fit_radial_surface(samples, frame, cfg.degree, cfg.margin)
        except (InsufficientSamples, DegenerateDirections) as e:
            if batch + 1 >= cfg.max_batches:
                raise InsufficientSamples(f"after {batch + 1} batches: {e}") from e
            logger.debug(f"Batch {batch + 1} not fittable yet: {e}")
            continue

        trace.append(len(samples), surface.rms_residual)
        logger.debug(f"Batch {batch + 1}: {len(samples)} samples, rms residual {surface.rms_residual:.3e}")
        if trace.is_stable(cfg.stabilization_eps, cfg.stabilization_window, abs_floor=tol):
            trace.stabilized = True
            break

    if surface is None:
        raise InsufficientSamples(f"no fittable sample set after {cfg.max_batches} batches")
    if surface.hole_count:
        logger.warning(f"{surface.hole_count} samples violate the no-interior-gap hypothesis")
    logger.info(
        f"Surface fitted: {len(samples)} samples, rms {surface.rms_residual:.3e}, "
        f"stabilized={trace.stabilized}, batches={len(trace.history)}"
    )
    return surface, trace, samples


def convexity_violation(surface: RadialSurface, seed: int = 0, n_chords: int = 200) -> float:
    """Fraction of chord midpoints between fitted boundary points that fall outside the fitted region."""
    rng = child_rng(seed, STREAM_CHORDS)
    n = surface.dim
    U1 = sample_unit_directions(rng, n_chords, n)
    U2 = sample_unit_directions(rng, n_chords, n)
    P1 = U1 * surface.radius(U1)[:, None]
    P2 = U2 * surface.radius(U2)[:, None]
    depth = surface.with_margin(1.0).depth_normalized(0.5 * (P1 + P2))
    return float(np.mean(depth < -1e-9))


def export_boundary_csv(surface: RadialSurface, samples_path: Path, curve_path: Path | None = None, grid: int = 360) -> None:
    """Write cutoff samples and, for 2-D/3-D frames, the fitted radius over an angle grid."""
    n = surface.dim
    with open(samples_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"u{i}" for i in range(n)] + ["radius", "clipped", "hole_detected"])
        for s in surface.samples:
            writer.writerow([f"{v:.17g}" for v in s.direction] + [f"{s.radius:.17g}", int(s.clipped), int(s.hole_detected)])

    if curve_path is None:
        return
    if n == 2:
        theta = np.linspace(0.0, 2 * math.pi, grid, endpoint=False)
        U = np.column_stack([np.cos(theta), np.sin(theta)])
        rows = [[f"{a:.17g}", f"{r:.17g}"] for a, r in zip(theta, surface.radius(U), strict=True)]
        header = ["theta", "radius"]
    elif n == 3:
        side = max(int(math.sqrt(grid)), 2)
        theta, phi = np.meshgrid(np.linspace(0.0, math.pi, side), np.linspace(0.0, 2 * math.pi, 2 * side, endpoint=False))
        theta, phi = theta.ravel(), phi.ravel()
        U = np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        rows = [[f"{a:.17g}", f"{b:.17g}", f"{r:.17g}"] for a, b, r in zip(theta, phi, surface.radius(U), strict=True)]
        header = ["theta", "phi", "radius"]
    else:
        logger.info(f"No fitted-radius curve for a {n}-D frame")
        return
    with open(curve_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
