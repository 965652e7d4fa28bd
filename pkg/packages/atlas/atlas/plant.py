import logging
import math
import threading
from dataclasses import dataclass

import numpy as np
from common.models import Box, PlantSignature
from pydantic import ValidationError

from .config import AffinePlantSpec, AnnulusSpec, EllipsoidalPlantSpec, NetworkAnalogSpec, PlantSpec
from .errors import BudgetExhausted, DimensionMismatch, DomainViolation, UnboundedDomain

logger = logging.getLogger(__name__)

# Points produced by ray arithmetic can overshoot a domain face by a few ulps.
DOMAIN_REL_TOL = 1e-9
DEFAULT_BUDGET = 10**8


class EvalCounter:
    def __init__(self, budget: int = DEFAULT_BUDGET):
        if budget < 1:
            raise ValueError(f"budget must be positive, got {budget}")
        self.budget = budget
        self.count = 0
        self._lock = threading.Lock()

    def consume(self) -> None:
        with self._lock:
            if self.count >= self.budget:
                raise BudgetExhausted(f"evaluation budget of {self.budget} exhausted")
            self.count += 1

    @property
    def remaining(self) -> int:
        return self.budget - self.count

    def reset(self, budget: int | None = None) -> None:
        with self._lock:
            self.count = 0
            if budget is not None:
                self.budget = budget


def make_signature(input_domain: Box, control_domain: Box, n_out: int) -> PlantSignature:
    try:
        return PlantSignature(
            n_in=input_domain.dim,
            n_ctrl=control_domain.dim,
            n_out=n_out,
            input_domain=input_domain,
            control_domain=control_domain,
        )
    except ValidationError as e:
        raise DimensionMismatch(str(e)) from e


def make_box(lo, hi) -> Box:
    try:
        return Box(lo=[float(v) for v in lo], hi=[float(v) for v in hi])
    except ValidationError as e:
        raise UnboundedDomain(str(e)) from e


class Plant:
    """Deterministic black-box mapping (input, control) -> output.

    Subclasses implement `_respond`; `evaluate` owns dimension and domain
    checks and the evaluation counter. Plants hold no state besides the
    counter, so concurrent evaluation is safe.
    """

    kind = "plant"

    def __init__(self, plant_id: str, signature: PlantSignature, budget: int = DEFAULT_BUDGET):
        self.plant_id = plant_id
        self.signature = signature
        self.counter = EvalCounter(budget)
        self._in_lo = np.asarray(signature.input_domain.lo)
        self._in_hi = np.asarray(signature.input_domain.hi)
        self._ctrl_lo = np.asarray(signature.control_domain.lo)
        self._ctrl_hi = np.asarray(signature.control_domain.hi)

    @property
    def n_in(self) -> int:
        return self.signature.n_in

    @property
    def n_ctrl(self) -> int:
        return self.signature.n_ctrl

    @property
    def n_out(self) -> int:
        return self.signature.n_out

    def in_input_domain(self, x: np.ndarray, rel_tol: float = DOMAIN_REL_TOL) -> bool:
        slack = rel_tol * (self._in_hi - self._in_lo)
        return bool(np.all(x >= self._in_lo - slack) and np.all(x <= self._in_hi + slack))

    def in_control_domain(self, c: np.ndarray, rel_tol: float = DOMAIN_REL_TOL) -> bool:
        slack = rel_tol * (self._ctrl_hi - self._ctrl_lo)
        return bool(np.all(c >= self._ctrl_lo - slack) and np.all(c <= self._ctrl_hi + slack))

    def clip_input(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self._in_lo, self._in_hi)

    def clip_control(self, c: np.ndarray) -> np.ndarray:
        return np.clip(c, self._ctrl_lo, self._ctrl_hi)

    def evaluate(self, x, c) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        c = np.asarray(c, dtype=float).reshape(-1)
        if x.shape[0] != self.n_in:
            raise DimensionMismatch(f"{self.plant_id}: input has {x.shape[0]} components, expected {self.n_in}")
        if c.shape[0] != self.n_ctrl:
            raise DimensionMismatch(f"{self.plant_id}: control has {c.shape[0]} components, expected {self.n_ctrl}")
        if not self.in_input_domain(x):
            raise DomainViolation(f"{self.plant_id}: input {x.tolist()} outside input domain")
        if not self.in_control_domain(c):
            raise DomainViolation(f"{self.plant_id}: control {c.tolist()} outside control domain")
        self.counter.consume()
        y = np.atleast_1d(np.asarray(self._respond(self.clip_input(x), self.clip_control(c)), dtype=float))
        return y

    def _respond(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class AffinePlant(Plant):
    kind = "affine"

    def __init__(self, A, B, b, input_domain: Box, control_domain: Box, budget: int = DEFAULT_BUDGET):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        n_out = self.b.shape[0]
        if self.A.shape != (n_out, input_domain.dim):
            raise DimensionMismatch(f"A has shape {self.A.shape}, expected {(n_out, input_domain.dim)}")
        if self.B.shape != (n_out, control_domain.dim):
            raise DimensionMismatch(f"B has shape {self.B.shape}, expected {(n_out, control_domain.dim)}")
        super().__init__("affine", make_signature(input_domain, control_domain, n_out), budget)

    def _respond(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ c + self.b


def make_affine_plant(A, B, b, input_domain: Box, control_domain: Box, budget: int = DEFAULT_BUDGET) -> AffinePlant:
    return AffinePlant(A, B, b, input_domain, control_domain, budget)


@dataclass(frozen=True)
class ControlOffset:
    """g(c) = offset + sum(linear * c) + sum(quadratic * c**2)."""

    offset: float = 0.0
    linear: tuple[float, ...] = ()
    quadratic: tuple[float, ...] = ()

    def __call__(self, c: np.ndarray) -> float:
        value = self.offset
        if self.linear:
            value += float(np.dot(self.linear, c))
        if self.quadratic:
            value += float(np.dot(self.quadratic, c * c))
        return value


class EllipsoidalPlant(Plant):
    """Scalar y = sum(W * (x - center)**2) + g(c); sublevel sets are ellipsoids."""

    kind = "ellipsoidal"

    def __init__(
        self,
        center,
        weights,
        g: ControlOffset,
        input_domain: Box,
        control_domain: Box,
        budget: int = DEFAULT_BUDGET,
    ):
        self.center = np.asarray(center, dtype=float).reshape(-1)
        self.weights = np.asarray(weights, dtype=float).reshape(-1)
        if self.center.shape != self.weights.shape or self.center.shape[0] != input_domain.dim:
            raise DimensionMismatch(
                f"center has {self.center.shape[0]} components, weights {self.weights.shape[0]}, domain {input_domain.dim}"
            )
        if np.any(self.weights <= 0):
            raise DomainViolation(f"ellipsoid weights must be positive, got {self.weights.tolist()}")
        self.g = g
        super().__init__("ellipsoidal", make_signature(input_domain, control_domain, 1), budget)

    def _respond(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        d = x - self.center
        return np.array([float(np.dot(self.weights, d * d)) + self.g(c)])

    def exact_radius(self, direction, h: float, c, unit_scales=None) -> float:
        """Distance from the center along `direction` (normalized units) to the level set y = h."""
        u = np.asarray(direction, dtype=float)
        if unit_scales is not None:
            u = u * np.asarray(unit_scales, dtype=float)
        slack = h - self.g(np.asarray(c, dtype=float))
        if slack < 0:
            return 0.0
        return math.sqrt(slack / float(np.dot(self.weights, u * u)))

    def exact_accepts(self, x, h: float, c) -> bool:
        d = np.asarray(x, dtype=float) - self.center
        return float(np.dot(self.weights, d * d)) <= h - self.g(np.asarray(c, dtype=float))


def make_ellipsoidal_plant(
    center,
    weights,
    input_domain: Box,
    control_domain: Box,
    g: ControlOffset | None = None,
    budget: int = DEFAULT_BUDGET,
) -> EllipsoidalPlant:
    return EllipsoidalPlant(center, weights, g or ControlOffset(), input_domain, control_domain, budget)


class NetworkAnalogPlant(Plant):
    """Synthetic 31-input / 43-control / 1-output load-delay network.

    Inputs are offered traffic per flow, controls are capacity allocations.
    Each link carries a weighted sum of flows and gets a base capacity plus a
    weighted share of the controls; the output is the mean M/M/1-style
    occupancy rho / (1 - rho) over links plus a small control cost. Link
    utilization is saturated smoothly below RHO_MAX so the plant stays finite.
    """

    kind = "network_analog"

    N_IN = 31
    N_CTRL = 43
    N_LINKS = 12
    RHO_MAX = 0.98
    CONTROL_COST = 0.05
    FLOW_MAX = 10.0

    def __init__(self, seed: int, budget: int = DEFAULT_BUDGET):
        self.seed = seed
        rng = np.random.default_rng(seed)
        routing = rng.uniform(0.05, 1.0, (self.N_LINKS, self.N_IN)) * (rng.random((self.N_LINKS, self.N_IN)) < 0.35)
        # Every flow crosses at least one link and every link carries at least one flow.
        for j in np.flatnonzero(routing.sum(axis=0) == 0):
            routing[rng.integers(self.N_LINKS), j] = rng.uniform(0.05, 1.0)
        for k in np.flatnonzero(routing.sum(axis=1) == 0):
            routing[k, rng.integers(self.N_IN)] = rng.uniform(0.05, 1.0)

        allocation = rng.uniform(0.0, 1.0, (self.N_LINKS, self.N_CTRL)) * (rng.random((self.N_LINKS, self.N_CTRL)) < 0.3)
        for k in np.flatnonzero(allocation.sum(axis=1) == 0):
            allocation[k, rng.integers(self.N_CTRL)] = rng.uniform(0.5, 1.0)

        # Mid-domain traffic at mid allocation runs each link at a utilization between 0.4 and 0.625.
        mid_load = routing @ np.full(self.N_IN, self.FLOW_MAX / 2)
        headroom = rng.uniform(1.0, 1.5, self.N_LINKS)
        share = rng.uniform(0.6, 1.0, self.N_LINKS)
        self.routing = routing
        self.base_capacity = headroom * mid_load
        self.allocation = allocation * (share * mid_load / (0.5 * allocation.sum(axis=1)))[:, None]

        input_domain = Box(lo=[0.0] * self.N_IN, hi=[self.FLOW_MAX] * self.N_IN)
        control_domain = Box(lo=[0.0] * self.N_CTRL, hi=[1.0] * self.N_CTRL)
        super().__init__(f"network-analog-{seed}", make_signature(input_domain, control_domain, 1), budget)
        logger.debug(f"Built {self.plant_id}: {int((routing > 0).sum())} routing entries over {self.N_LINKS} links")

    def _respond(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        load = self.routing @ x
        capacity = self.base_capacity + self.allocation @ c
        rho = self.RHO_MAX * np.tanh((load / capacity) / self.RHO_MAX)
        occupancy = rho / (1.0 - rho)
        return np.array([float(occupancy.mean()) + self.baseline(c)])

    def baseline(self, c) -> float:
        """Output at zero offered load, the minimum over inputs for a fixed control."""
        c = np.asarray(c, dtype=float)
        return self.CONTROL_COST * float(np.mean(c * c))


def make_network_analog(seed: int, budget: int = DEFAULT_BUDGET) -> NetworkAnalogPlant:
    return NetworkAnalogPlant(seed, budget)


class AnnulusPlant(Plant):
    """y = | |x| - 1 |, independent of the control; the unit ring is the best output."""

    kind = "annulus"

    def __init__(self, n_in: int = 2, extent: float = 2.0, budget: int = DEFAULT_BUDGET):
        input_domain = Box(lo=[-extent] * n_in, hi=[extent] * n_in)
        control_domain = Box(lo=[-1.0], hi=[1.0])
        super().__init__("annulus", make_signature(input_domain, control_domain, 1), budget)

    def _respond(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        return np.array([abs(float(np.linalg.norm(x)) - 1.0)])


def make_annulus_plant(n_in: int = 2, budget: int = DEFAULT_BUDGET) -> AnnulusPlant:
    return AnnulusPlant(n_in=n_in, budget=budget)


def build_plant(spec: PlantSpec, budget: int = DEFAULT_BUDGET) -> Plant:
    match spec:
        case AffinePlantSpec():
            return make_affine_plant(spec.A, spec.B, spec.b, spec.input_domain, spec.control_domain, budget)
        case EllipsoidalPlantSpec():
            g = ControlOffset(spec.g_offset, tuple(spec.g_linear), tuple(spec.g_quadratic))
            return make_ellipsoidal_plant(spec.center, spec.weights, spec.input_domain, spec.control_domain, g, budget)
        case NetworkAnalogSpec():
            return make_network_analog(spec.seed, budget)
        case AnnulusSpec():
            return make_annulus_plant(spec.n_in, budget)
    raise ValueError(f"unknown plant kind {spec!r}")


def build_plant_signature(spec: PlantSpec) -> PlantSignature:
    return build_plant(spec).signature
