import numpy as np
import pytest
from common.models import Box, OutputBox

from atlas.boundary import RadialSurface
from atlas.config import BoundaryConfig, LearnConfig, SearchConfig
from atlas.library import ControlRegion, SolutionRecord
from atlas.plant import AffinePlant, AnnulusPlant, ControlOffset, EllipsoidalPlant, NetworkAnalogPlant
from atlas.spaces import NormalizedFrame

SQUARE = Box(lo=[-3.0, -3.0], hi=[3.0, 3.0])
CONTROL_INTERVAL = Box(lo=[-1.0], hi=[1.0])


@pytest.fixture
def integrator():
    """y = x + c on [-10, 10] with c in [-10, 10]."""
    return AffinePlant([[1.0]], [[1.0]], [0.0], Box(lo=[-10.0], hi=[10.0]), Box(lo=[-10.0], hi=[10.0]))


@pytest.fixture
def tight_integrator():
    """y = x + c with c clamped to [-1, 1]."""
    return AffinePlant([[1.0]], [[1.0]], [0.0], Box(lo=[-10.0], hi=[10.0]), Box(lo=[-1.0], hi=[1.0]))


@pytest.fixture
def unit_box():
    return OutputBox(lo=[-1.0], hi=[1.0], target=[0.0])


@pytest.fixture
def interval_cfg():
    return LearnConfig(seed=7, boundary=BoundaryConfig(degree=1, batch_size=8))


@pytest.fixture
def ellipse():
    return EllipsoidalPlant([0.0, 0.0], [4.0, 1.0], ControlOffset(), SQUARE, CONTROL_INTERVAL)


@pytest.fixture
def bowl_ellipse():
    """Ellipse whose level set shrinks with c**2; c = 0 is the unique best control for target 0."""
    return EllipsoidalPlant(
        [0.0, 0.0],
        [4.0, 1.0],
        ControlOffset(quadratic=(1.0,)),
        SQUARE,
        CONTROL_INTERVAL,
    )


@pytest.fixture
def sphere():
    return EllipsoidalPlant([0.0, 0.0], [1.0, 1.0], ControlOffset(), SQUARE, CONTROL_INTERVAL)


@pytest.fixture
def level_box():
    """Sublevel set y <= 1 with the ideal output 0."""
    return OutputBox(lo=[0.0], hi=[1.0], target=[0.0])


@pytest.fixture
def ellipse_cfg():
    return LearnConfig(seed=11, boundary=BoundaryConfig(degree=4, max_batches=20))


@pytest.fixture
def sphere_cfg():
    return LearnConfig(
        seed=3,
        boundary=BoundaryConfig(
            degree=2, batch_size=32, stabilization_window=2, stabilization_eps=0.01, unit_scales=[1.0, 1.0]
        ),
    )


@pytest.fixture
def annulus():
    return AnnulusPlant(n_in=2)


@pytest.fixture
def ring_box():
    return OutputBox(lo=[0.0], hi=[0.25], target=[0.0])


@pytest.fixture
def network():
    return NetworkAnalogPlant(seed=7)


@pytest.fixture
def scale_cfg():
    return LearnConfig(seed=7, search=SearchConfig(tol=1e-3), boundary=BoundaryConfig(degree=1))


def _constant_surface(origin, scales, margin: float = 1.0) -> RadialSurface:
    """r(u) = 1 in a frame where one unit is `scales`."""
    frame = NormalizedFrame(np.asarray(origin, dtype=float), np.asarray(scales, dtype=float))
    return RadialSurface(
        frame=frame,
        degree=0,
        monomials=((),),
        coefficients=np.array([1.0]),
        rms_residual=0.0,
        margin=margin,
        min_radius_floor=0.1,
        sample_count=0,
    )


def _interval_record(record_id: str, center: float, half_width: float, controls, box: OutputBox, margin: float = 1.0):
    """1-D record whose region is [center - half_width, center + half_width] before margin."""
    return SolutionRecord(
        id=record_id,
        surfaces=(_constant_surface([center], [half_width], margin),),
        control_region=ControlRegion(tuple(np.atleast_1d(np.asarray(c, dtype=float)) for c in controls)),
        box=box,
    )


@pytest.fixture
def make_constant_surface():
    return _constant_surface


@pytest.fixture
def make_interval_record():
    return _interval_record
