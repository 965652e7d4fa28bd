import logging

import numpy as np
import pytest

from atlas.boundary import (
    CutoffSample,
    FitTrace,
    convexity_violation,
    design_matrix,
    export_boundary_csv,
    fit_radial_surface,
    learn_surface,
    monomial_exponents,
    monomial_from_exponents,
    monomials,
    sphere_polynomial_dim,
)
from atlas.config import BoundaryConfig
from atlas.errors import DegenerateDirections, InsufficientSamples, OriginNotAcceptable
from atlas.spaces import NormalizedFrame, sample_unit_directions


UNIT_FRAME = NormalizedFrame(np.zeros(2), np.ones(2))


def _samples(U, radii, clipped=None):
    clipped = clipped or [False] * len(radii)
    return [CutoffSample(u, float(r), c) for u, r, c in zip(U, radii, clipped, strict=True)]


def test_monomial_counts():
    assert len(monomials(2, 2)) == 6
    assert len(monomials(3, 1)) == 4
    assert monomials(2, 1) == ((), (0,), (1,))
    assert sphere_polynomial_dim(2, 2) == 5
    assert sphere_polynomial_dim(3, 2) == 9


def test_monomial_exponent_conversion():
    assert monomial_exponents((0, 0, 2), 3) == [2, 0, 1]
    assert monomial_from_exponents([2, 0, 1]) == (0, 0, 2)


def test_design_matrix_columns():
    U = np.array([[0.6, 0.8]])
    assert design_matrix(U, monomials(2, 2))[0] == pytest.approx([1.0, 0.6, 0.8, 0.36, 0.48, 0.64])


def test_constant_target_fits_exactly():
    U = sample_unit_directions(np.random.default_rng(0), 12, 2)
    surface = fit_radial_surface(_samples(U, np.ones(12)), UNIT_FRAME, degree=2)
    assert surface.rms_residual <= 1e-9
    probe = sample_unit_directions(np.random.default_rng(1), 100, 2)
    assert np.max(np.abs(surface.radius(probe) - 1.0)) <= 1e-9


def test_too_few_samples():
    U = sample_unit_directions(np.random.default_rng(0), 3, 2)
    with pytest.raises(InsufficientSamples):
        fit_radial_surface(_samples(U, np.ones(3)), UNIT_FRAME, degree=2)


def test_clipped_samples_stay_out_of_regression():
    U = sample_unit_directions(np.random.default_rng(2), 10, 2)
    radii = np.ones(10)
    radii[:6] = 50.0
    with pytest.raises(InsufficientSamples):
        fit_radial_surface(_samples(U, radii, [True] * 6 + [False] * 4), UNIT_FRAME, degree=2)


def test_repeated_direction_is_degenerate():
    U = np.tile([[1.0, 0.0]], (10, 1))
    with pytest.raises(DegenerateDirections):
        fit_radial_surface(_samples(U, np.ones(10)), UNIT_FRAME, degree=1)


def test_floor_is_tenth_of_smallest_radius():
    U = sample_unit_directions(np.random.default_rng(3), 20, 2)
    radii = np.linspace(2.0, 4.0, 20)
    surface = fit_radial_surface(_samples(U, radii), UNIT_FRAME, degree=1)
    assert surface.min_radius_floor == pytest.approx(0.2)


def test_rms_recomputes_from_stored_samples(ellipse):
    U = sample_unit_directions(np.random.default_rng(4), 64, 2)
    radii = [ellipse.exact_radius(u, 1.0, [0.0]) for u in U]
    surface = fit_radial_surface(_samples(U, radii), UNIT_FRAME, degree=2)
    assert abs(surface.recompute_rms() - surface.rms_residual) <= 1e-9


def test_degree_two_ellipse_fit(ellipse):
    theta = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    U = np.column_stack([np.cos(theta), np.sin(theta)])
    radii = [ellipse.exact_radius(u, 1.0, [0.0]) for u in U]
    surface = fit_radial_surface(_samples(U, radii), UNIT_FRAME, degree=2, margin=0.95)
    assert surface.rms_residual <= 0.05

    rng = np.random.default_rng(5)
    X = rng.uniform(-1.2, 1.2, (5000, 2))
    fitted = surface.depth_normalized(X) >= 0
    exact = np.array([ellipse.exact_accepts(x, 1.0, [0.0]) for x in X])
    assert np.mean(fitted & ~exact) <= 0.02


def test_contains_examples(make_constant_surface):
    surface = make_constant_surface([0.0, 0.0], [1.0, 1.0])
    assert surface.contains([0.0, 0.0]) == (True, 1.0)
    inside, depth = surface.contains([2.0, 0.0])
    assert not inside
    assert depth == pytest.approx(-1.0)
    assert not make_constant_surface([0.0, 0.0], [1.0, 1.0], margin=0.9).contains([1.0, 0.0])[0]


def test_membership_is_star_shaped(ellipse):
    U = sample_unit_directions(np.random.default_rng(6), 40, 2)
    radii = [ellipse.exact_radius(u, 1.0, [0.0]) for u in U]
    surface = fit_radial_surface(_samples(U, radii), UNIT_FRAME, degree=2)
    rng = np.random.default_rng(7)
    X = rng.uniform(-1.5, 1.5, (2000, 2))
    inside = X[surface.depth_normalized(X) >= 0]
    assert len(inside) > 0
    shrunk = inside * rng.uniform(0.0, 1.0, (len(inside), 1))
    assert np.all(surface.depth_normalized(shrunk) >= 0)


def test_fit_trace_counts_must_grow():
    trace = FitTrace()
    trace.append(10, 0.5)
    with pytest.raises(ValueError):
        trace.append(10, 0.4)


def test_fit_trace_stability():
    trace = FitTrace()
    for count, rms in [(10, 0.5), (20, 0.30), (30, 0.301)]:
        trace.append(count, rms)
    assert not trace.is_stable(0.02, 3)
    assert trace.is_stable(0.02, 2)
    assert trace.is_stable(0.0, 2, abs_floor=0.01)


def test_sphere_stabilizes_within_two_batches(sphere, level_box):
    cfg = BoundaryConfig(degree=2, batch_size=32, stabilization_window=2, stabilization_eps=0.01)
    surface, trace, samples = learn_surface(sphere, [0.0], UNIT_FRAME, level_box, cfg, seed=1)
    assert trace.stabilized
    assert len(trace.history) <= 2
    probe = sample_unit_directions(np.random.default_rng(8), 1024, 2)
    assert np.max(np.abs(surface.radius(probe) - 1.0)) <= 0.01
    assert len(samples) == surface.sample_count


def test_ellipse_stabilizes(ellipse, level_box):
    cfg = BoundaryConfig(degree=4, max_batches=20)
    surface, trace, _ = learn_surface(ellipse, [0.0], NormalizedFrame(np.zeros(2), np.full(2, 0.06)), level_box, cfg, seed=2)
    assert trace.stabilized
    assert len(trace.history) <= 20
    assert trace.history[-1][1] <= trace.history[0][1]
    assert surface.rms_residual < 1.0


def test_learn_surface_deterministic_across_workers(ellipse, level_box):
    cfg = BoundaryConfig(degree=2, batch_size=24, max_batches=3)
    a, _, _ = learn_surface(ellipse, [0.0], UNIT_FRAME, level_box, cfg, seed=9, workers=1)
    b, _, _ = learn_surface(ellipse, [0.0], UNIT_FRAME, level_box, cfg, seed=9, workers=4)
    assert a.coefficients.tolist() == b.coefficients.tolist()


def test_learn_surface_flags_interior_gaps(annulus, ring_box, caplog):
    caplog.set_level(logging.WARNING)
    frame = NormalizedFrame(np.array([1.0, 0.0]), np.array([2.0, 2.0]))
    cfg = BoundaryConfig(degree=2, batch_size=64, max_batches=4)
    surface, _, samples = learn_surface(annulus, [0.0], frame, ring_box, cfg, seed=4)
    assert any(s.hole_detected for s in samples)
    assert surface.hole_count > 0
    assert "no-interior-gap" in caplog.text


def test_learn_surface_rejects_unacceptable_origin(integrator, unit_box):
    frame = NormalizedFrame(np.array([5.0]), np.array([0.2]))
    with pytest.raises(OriginNotAcceptable):
        learn_surface(integrator, [0.0], frame, unit_box, BoundaryConfig(degree=1))


def test_circle_is_convex(make_constant_surface):
    assert convexity_violation(make_constant_surface([0.0, 0.0], [1.0, 1.0]), seed=0) == 0.0


def test_export_boundary_csv(tmp_path, sphere, level_box):
    cfg = BoundaryConfig(degree=2, batch_size=32, stabilization_window=2)
    surface, _, _ = learn_surface(sphere, [0.0], UNIT_FRAME, level_box, cfg, seed=1)
    export_boundary_csv(surface, tmp_path / "samples.csv", tmp_path / "curve.csv")

    sample_lines = (tmp_path / "samples.csv").read_text().splitlines()
    assert sample_lines[0] == "u0,u1,radius,clipped,hole_detected"
    assert len(sample_lines) == surface.sample_count + 1

    curve_lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert curve_lines[0] == "theta,radius"
    assert len(curve_lines) == 361
    assert float(curve_lines[1].split(",")[1]) == pytest.approx(1.0, abs=0.01)
