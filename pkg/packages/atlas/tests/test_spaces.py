import math

import numpy as np
import pytest
from common.models import Box, OutputBox

from atlas.errors import DimensionMismatch, OriginOutsideDomain
from atlas.spaces import (
    NormalizedFrame,
    Ray,
    from_normalized,
    in_output_box,
    max_domain_radius,
    point_on_ray,
    sample_unit_direction,
    to_normalized,
)


def test_to_normalized_definition():
    frame = NormalizedFrame(np.zeros(2), np.array([2.0, 4.0]))
    assert to_normalized(frame, [2.0, 4.0]).tolist() == [1.0, 1.0]
    assert to_normalized(frame, [0.0, 0.0]).tolist() == [0.0, 0.0]


def test_normalization_round_trip():
    rng = np.random.default_rng(5)
    frame = NormalizedFrame(rng.normal(size=3), rng.uniform(0.1, 5.0, 3))
    X = rng.normal(scale=10.0, size=(100, 3))
    assert np.max(np.abs(from_normalized(frame, to_normalized(frame, X)) - X)) <= 1e-12


def test_frame_from_domain_uses_hundredth_of_width():
    frame = NormalizedFrame.from_domain([1.0, 0.0], Box(lo=[0.0, -5.0], hi=[10.0, 5.0]))
    assert frame.unit_scales.tolist() == pytest.approx([0.1, 0.1])


def test_frame_rejects_nonpositive_scales():
    with pytest.raises(ValueError):
        NormalizedFrame(np.zeros(2), np.array([1.0, 0.0]))


def test_to_normalized_dimension_checked():
    frame = NormalizedFrame(np.zeros(2), np.ones(2))
    with pytest.raises(DimensionMismatch):
        to_normalized(frame, [1.0, 2.0, 3.0])


def test_one_dimensional_direction_is_sign():
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert sample_unit_direction(rng, 1)[0] in (1.0, -1.0)


def test_direction_is_unit_length():
    rng = np.random.default_rng(1)
    for _ in range(100):
        assert abs(np.linalg.norm(sample_unit_direction(rng, 2)) - 1.0) <= 1e-12


def test_direction_deterministic_per_seed():
    a = sample_unit_direction(np.random.default_rng(42), 5)
    b = sample_unit_direction(np.random.default_rng(42), 5)
    assert a.tolist() == b.tolist()


def test_ray_requires_unit_direction():
    frame = NormalizedFrame(np.zeros(2), np.ones(2))
    with pytest.raises(ValueError):
        Ray(frame, np.array([1.0, 1.0]))


def test_point_on_ray():
    ray = Ray(NormalizedFrame(np.zeros(2), np.ones(2)), np.array([0.6, 0.8]))
    assert point_on_ray(ray, 0.0).tolist() == [0.0, 0.0]
    assert point_on_ray(ray, 5.0) == pytest.approx([3.0, 4.0])

    scaled = Ray(NormalizedFrame(np.array([1.0, 1.0]), np.array([2.0, 1.0])), np.array([1.0, 0.0]))
    assert point_on_ray(scaled, 2.0).tolist() == [5.0, 1.0]


def test_output_box_is_closed():
    box = OutputBox(lo=[0.0], hi=[1.0], target=[0.5])
    assert in_output_box(box, [0.5])
    assert in_output_box(box, [1.0])
    assert not in_output_box(box, [1.0 + 1e-9])


def test_max_domain_radius_examples():
    one = NormalizedFrame(np.array([0.0]), np.array([1.0]))
    assert max_domain_radius(Ray(one, np.array([1.0])), Box(lo=[-1.0], hi=[1.0])) == pytest.approx(1.0)

    shifted = NormalizedFrame(np.array([0.5]), np.array([1.0]))
    assert max_domain_radius(Ray(shifted, np.array([1.0])), Box(lo=[0.0], hi=[2.5])) == pytest.approx(2.0)

    square = NormalizedFrame(np.zeros(2), np.ones(2))
    diagonal = Ray(square, np.array([1.0, 1.0]) / math.sqrt(2.0))
    assert max_domain_radius(diagonal, Box(lo=[-1.0, -1.0], hi=[1.0, 1.0])) == pytest.approx(math.sqrt(2.0))


def test_fence_point_lies_on_domain_boundary():
    rng = np.random.default_rng(9)
    domain = Box(lo=[-1.0, -2.0, 0.0], hi=[3.0, 2.0, 1.0])
    frame = NormalizedFrame(np.array([0.5, 0.1, 0.4]), np.array([0.04, 0.04, 0.01]))
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    for _ in range(50):
        ray = Ray(frame, sample_unit_direction(rng, 3))
        x = point_on_ray(ray, max_domain_radius(ray, domain))
        assert np.min(np.minimum(np.abs(x - lo), np.abs(x - hi))) <= 1e-9


def test_max_domain_radius_needs_interior_origin():
    frame = NormalizedFrame(np.array([1.0]), np.array([1.0]))
    with pytest.raises(OriginOutsideDomain):
        max_domain_radius(Ray(frame, np.array([1.0])), Box(lo=[-1.0], hi=[1.0]))
