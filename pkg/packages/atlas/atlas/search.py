import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from common.models import OutputBox

from .errors import BudgetExhausted, DimensionMismatch, DomainViolation, NoAcceptableControl, OriginNotAcceptable
from .plant import Plant
from .spaces import Ray, in_output_box, max_domain_radius, point_on_ray

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_PROBE_K = 8


@dataclass(frozen=True, eq=False)
class BestControlResult:
    control: np.ndarray
    loss: float
    evals_used: int
    output: np.ndarray
    budget_exhausted: bool = False


@dataclass(frozen=True)
class CutoffResult:
    radius: float
    clipped: bool
    hole_detected: bool
    bracket_width: float
    evals_used: int = 0


class _LocalBudgetReached(Exception):
    pass


def weighted_loss(y: np.ndarray, target: np.ndarray, weights: np.ndarray) -> float:
    d = y - target
    return float(np.sum(weights * d * d))


def best_control(
    plant: Plant,
    origin,
    box: OutputBox,
    weights=None,
    budget: int = 2000,
    seed: int = 0,
    restarts: int = 4,
    initial_step: float = 0.25,
    shrink: float = 0.5,
    min_step: float = 1e-9,
    require_acceptable: bool = True,
) -> BestControlResult:
    """Compass search for the control whose output at `origin` is closest to the box target.

    The first start is the control-domain midpoint, followed by `restarts`
    seeded uniform starts. Each start polls +/- step along every control axis,
    keeps improvements, and shrinks the step after a sweep without one. The
    sequence of evaluations does not depend on `budget`, so a larger budget
    never returns a worse control.
    """
    if budget < 1:
        raise ValueError(f"budget must be at least 1, got {budget}")
    origin = np.asarray(origin, dtype=float).reshape(-1)
    if origin.shape[0] != plant.n_in:
        raise DimensionMismatch(f"origin has {origin.shape[0]} components, plant expects {plant.n_in}")
    if not plant.in_input_domain(origin, rel_tol=0.0):
        raise DomainViolation(f"origin {origin.tolist()} outside the input domain")
    if box.dim != plant.n_out:
        raise DimensionMismatch(f"output box has {box.dim} dims, plant has {plant.n_out} outputs")
    target = np.asarray(box.target, dtype=float)
    w = np.ones(plant.n_out) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != plant.n_out or np.any(w <= 0):
        raise ValueError(f"weights must be {plant.n_out} positive reals, got {w.tolist()}")

    lo = np.asarray(plant.signature.control_domain.lo)
    hi = np.asarray(plant.signature.control_domain.hi)
    span = hi - lo
    free = np.flatnonzero(span > 0)
    rng = np.random.default_rng(seed)
    starts = [(lo + hi) / 2] + [rng.uniform(lo, hi) for _ in range(restarts)]

    evals = 0
    best: tuple[float, np.ndarray, np.ndarray] | None = None
    exhausted = False

    def loss(c: np.ndarray) -> tuple[float, np.ndarray]:
        nonlocal evals, best
        if evals >= budget:
            raise _LocalBudgetReached
        y = plant.evaluate(origin, c)
        evals += 1
        f = weighted_loss(y, target, w)
        if best is None or f < best[0]:
            best = (f, c.copy(), y)
        return f, y

    try:
        for start in starts:
            x = start.copy()
            f, _ = loss(x)
            step = initial_step * span
            while f > 0 and free.size and np.max(step[free] / span[free]) > min_step:
                improved = False
                for i in free:
                    for sign in (1.0, -1.0):
                        cand = x.copy()
                        cand[i] = min(max(x[i] + sign * step[i], lo[i]), hi[i])
                        if cand[i] == x[i]:
                            continue
                        fc, _ = loss(cand)
                        if fc < f:
                            x, f = cand, fc
                            improved = True
                            break
                if not improved:
                    step = step * shrink
    except _LocalBudgetReached:
        exhausted = True
    except BudgetExhausted:
        if best is None:
            raise
        exhausted = True

    assert best is not None
    f_best, c_best, y_best = best
    result = BestControlResult(control=c_best, loss=f_best, evals_used=evals, output=y_best, budget_exhausted=exhausted)
    if exhausted:
        logger.info(f"best_control stopped at budget after {evals} evaluations, loss={f_best:.3e}")
    if require_acceptable and not in_output_box(box, y_best):
        raise NoAcceptableControl(
            f"best control at origin {origin.tolist()} reaches {y_best.tolist()}, outside [{box.lo}, {box.hi}]",
            result=result,
        )
    return result


def _bisect(accepts: Callable[[float], bool], lo: float, hi: float, tol: float) -> tuple[float, float]:
    # Invariant: accepts(lo) is True and accepts(hi) is False.
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if accepts(mid):
            lo = mid
        else:
            hi = mid
    return lo, hi


def cutoff_radius(
    plant: Plant,
    control,
    ray: Ray,
    box: OutputBox,
    tol: float = DEFAULT_TOL,
    probe_k: int = DEFAULT_PROBE_K,
    initial_bracket: tuple[float, float] | None = None,
    check_origin: bool = True,
) -> CutoffResult:
    """Normalized distance along `ray` at which `control` first maps the input outside `box`.

    Brackets by doubling from one normalized unit (or from `initial_bracket`
    when it straddles the boundary), bisects to `tol`, then probes `probe_k`
    interior radii. An unacceptable interior probe marks a hole and the
    radius is re-bisected just below it.
    """
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    control = np.asarray(control, dtype=float)
    fence = max_domain_radius(ray, plant.signature.input_domain)
    evals = 0

    def accepts(t: float) -> bool:
        nonlocal evals
        evals += 1
        x = plant.clip_input(point_on_ray(ray, t))
        return in_output_box(box, plant.evaluate(x, control))

    if check_origin and not accepts(0.0):
        raise OriginNotAcceptable(f"control does not map origin {ray.frame.origin.tolist()} into the output box")

    lo: float | None = None
    hi = math.inf
    clipped = False
    if initial_bracket is not None:
        a, b = min(initial_bracket[0], fence), min(initial_bracket[1], fence)
        if 0 < a < b and accepts(a):
            if not accepts(b):
                lo, hi = a, b
            elif b >= fence:
                lo, hi, clipped = fence, fence, True
        if lo is None:
            logger.debug(f"seeded bracket {initial_bracket} does not straddle the boundary, full search")

    if lo is None:
        lo, hi = 0.0, min(1.0, fence)
        while accepts(hi):
            lo = hi
            if hi >= fence:
                clipped = True
                break
            hi = min(2.0 * hi, fence)

    if not clipped:
        lo, hi = _bisect(accepts, lo, hi, tol)
    radius = lo
    width = 0.0 if clipped else hi - lo

    hole = False
    last_ok = 0.0
    for k in range(1, probe_k + 1):
        t = radius * k / (probe_k + 1)
        if t <= last_ok:
            continue
        if not accepts(t):
            hole = True
            clipped = False
            lo, hi = _bisect(accepts, last_ok, t, tol)
            radius, width = lo, hi - lo
            break
        last_ok = t

    return CutoffResult(radius=radius, clipped=clipped, hole_detected=hole, bracket_width=width, evals_used=evals)


def acceptable_controls(plant: Plant, x, box: OutputBox, n: int, seed: int = 0) -> np.ndarray:
    """Uniformly sampled controls that map the single input `x` into `box`."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(plant.signature.control_domain.lo)
    hi = np.asarray(plant.signature.control_domain.hi)
    kept = [c for c in (rng.uniform(lo, hi) for _ in range(n)) if in_output_box(box, plant.evaluate(x, c))]
    return np.stack(kept) if kept else np.empty((0, plant.n_ctrl))
