import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modcbf.errors import GradientSingular, NonFiniteInput, ReferenceCoincident
from modcbf.geometry import (
    Circle,
    Funnel,
    Obstacle,
    OpenRing,
    boundary_value,
    eval_boundary,
    local_frame,
    surface_point_velocity,
)
from oracles import central_gradient, ring_contains, ring_signed_distance_bruteforce

RING = OpenRing(2.0, 2.3, 0.9, math.pi / 4)

SHAPES = {
    "circle": Obstacle(Circle(2.0), position=(0.5, -1.0)),
    "funnel": Obstacle(Funnel((2.5, 0.0), 2.0), position=(0.5, 3.0), orientation=0.4),
    "ring": Obstacle(RING, position=(3.0, 3.0), orientation=-0.3),
}

coord = st.floats(-8.0, 8.0, allow_nan=False)


# eval_boundary examples


def test_circle_value_and_gradient():
    ev = eval_boundary(Obstacle(Circle(2.0)), np.array([3.0, 0.0]))
    assert ev.h == 1.0
    np.testing.assert_array_equal(ev.grad, [1.0, 0.0])
    assert ev.motion_term == 0.0


def test_funnel_value_at_its_center():
    obs = Obstacle(Funnel((2.5, 0.0), 0.1))
    assert boundary_value(obs, np.array([2.5, 0.0])) == pytest.approx(-0.1, abs=0)


def test_open_ring_mid_band_matches_bruteforce():
    obs = Obstacle(OpenRing(2.0, 2.3, 0.9, 0.0))
    q = 2.15 * np.array([math.cos(math.pi), math.sin(math.pi)])
    oracle = ring_signed_distance_bruteforce(q, 2.0, 2.3, 0.9, 0.0)
    assert oracle == pytest.approx(-0.15, abs=1e-3)
    assert boundary_value(obs, q) == pytest.approx(oracle, abs=1e-3)
    assert boundary_value(obs, q) == pytest.approx(-0.15, abs=1e-12)


@settings(max_examples=200)
@given(coord, coord)
def test_open_ring_signed_distance_matches_bruteforce(x, y):
    q = np.array([x, y])
    exact = boundary_value(Obstacle(RING), q)
    oracle = ring_signed_distance_bruteforce(q, RING.r_in, RING.r_out, RING.gap_half_angle, RING.gap_heading, 30_000)
    # sample spacing bounds the oracle's error
    assert exact == pytest.approx(oracle, abs=2e-3)


def test_non_finite_input_rejected():
    with pytest.raises(NonFiniteInput):
        eval_boundary(SHAPES["circle"], np.array([np.nan, 0.0]))


def test_gradient_singular_at_circle_center():
    with pytest.raises(GradientSingular):
        eval_boundary(Obstacle(Circle(1.0)), np.zeros(2))


def test_reference_point_must_be_interior():
    with pytest.raises(ValueError):
        Obstacle(Circle(1.0), reference_point=(3.0, 0.0))


@pytest.mark.parametrize(
    "shape",
    [lambda: Circle(0.0), lambda: Funnel((0, 0), -1.0), lambda: OpenRing(2.0, 1.0, 0.5), lambda: OpenRing(1.0, 2.0, 4.0)],
)
def test_shape_parameters_validated(shape):
    with pytest.raises(ValueError):
        shape()


# gradients against finite differences


@pytest.mark.parametrize("name", sorted(SHAPES))
def test_gradient_matches_central_differences(name):
    obs = SHAPES[name]
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 1000:
        p = rng.uniform(-6, 10, 2)
        if boundary_value(obs, p) <= 0.05:
            continue
        ev = eval_boundary(obs, p)
        fd = central_gradient(lambda q: boundary_value(obs, q), p, 1e-5 * max(1.0, np.linalg.norm(p)))
        if name == "ring" and abs(np.linalg.norm(fd) - 1.0) > 1e-3:
            continue  # medial-axis kink of the distance field
        n_exact = ev.grad / np.linalg.norm(ev.grad)
        n_fd = fd / np.linalg.norm(fd)
        assert np.linalg.norm(n_exact - n_fd) <= 1e-5
        checked += 1


def test_funnel_gradient_matches_finite_difference_at_axis_point():
    obs = Obstacle(Funnel((2.5, 0.0), 0.1))
    p = np.array([4.0, 0.0])
    fd = central_gradient(lambda q: boundary_value(obs, q), p, 1e-6)
    np.testing.assert_allclose(eval_boundary(obs, p).grad, fd, atol=1e-6)
    np.testing.assert_allclose(local_frame(obs, p).r, [1.0, 0.0], atol=1e-15)


def test_ring_gradient_on_medial_axis_is_a_branch_gradient():
    obs = Obstacle(OpenRing(2.0, 2.3, 0.9, 0.0))
    # equidistant from both caps of the gap: the gradient is one of the two cap normals
    ev = eval_boundary(obs, np.array([3.0, 0.0]))
    assert np.linalg.norm(ev.grad) == pytest.approx(1.0)
    assert ev.h > 0


# safe-set classification


@settings(max_examples=300)
@given(coord, coord)
def test_sign_matches_geometric_containment(x, y):
    q = np.array([x, y])
    circle = Obstacle(Circle(2.0))
    inside_circle = math.hypot(x, y) < 2.0
    h = boundary_value(circle, q)
    if abs(h) > 1e-9:
        assert (h < 0) == inside_circle
    h = boundary_value(Obstacle(RING), q)
    if abs(h) > 1e-9:
        assert (h < 0) == ring_contains(q, RING.r_in, RING.r_out, RING.gap_half_angle, RING.gap_heading)


# local frames


@pytest.mark.parametrize("name", sorted(SHAPES))
def test_frame_identities(name):
    obs = SHAPES[name]
    rng = np.random.default_rng(3)
    for _ in range(300):
        p = rng.uniform(-6, 10, 2)
        if boundary_value(obs, p) <= 0.05:
            continue
        fr = local_frame(obs, p)
        assert np.linalg.norm(fr.n) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(fr.E.T @ fr.E, np.eye(2), atol=1e-10)
        np.testing.assert_allclose(fr.H.T @ fr.H, np.eye(1), atol=1e-10)
        assert np.max(np.abs(fr.H.T @ fr.n)) <= 1e-10
        if fr.n @ fr.r > 1e-6:
            np.testing.assert_allclose(fr.E_r @ fr.E_r_inv, np.eye(2), atol=1e-10)


def test_circle_frame_example():
    fr = local_frame(Obstacle(Circle(2.0)), np.array([3.0, 0.0]))
    np.testing.assert_allclose(fr.n, [1, 0])
    np.testing.assert_allclose(fr.H[:, 0], [0, 1])
    np.testing.assert_allclose(fr.r, [1, 0])
    np.testing.assert_allclose(fr.E_r @ fr.E_r_inv, np.eye(2), atol=1e-15)


@settings(max_examples=300)
@given(coord, coord)
def test_circle_reference_equals_normal(x, y):
    obs = Obstacle(Circle(1.5), position=(0.3, -0.2))
    p = np.array([x, y])
    if boundary_value(obs, p) <= 0:
        return
    fr = local_frame(obs, p)
    np.testing.assert_allclose(fr.r, fr.n, atol=1e-12)


def test_reference_coincident():
    obs = Obstacle(Funnel((2.5, 0.0), 0.1))
    with pytest.raises((ReferenceCoincident, GradientSingular)):
        local_frame(obs, np.array([2.5, 0.0]))


def test_frame_in_three_dimensions():
    from modcbf.geometry import frame_from_gradient

    rng = np.random.default_rng(0)
    for _ in range(200):
        g = rng.normal(size=3)
        r = g / np.linalg.norm(g) + 0.5 * rng.normal(size=3)
        r /= np.linalg.norm(r)
        fr = frame_from_gradient(g, r)
        np.testing.assert_allclose(fr.E.T @ fr.E, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(fr.H.T @ fr.n, np.zeros(2), atol=1e-10)
        if fr.n @ r > 1e-6:
            np.testing.assert_allclose(fr.E_r @ fr.E_r_inv, np.eye(3), atol=1e-10)


# surface velocity and moving obstacles


def test_surface_velocity_examples():
    p = np.array([0.0, 2.0])
    np.testing.assert_array_equal(surface_point_velocity(Obstacle(Circle(1.0)), p), [0.0, 0.0])
    moving = Obstacle(Circle(1.0), velocity=(1.0, 0.0))
    np.testing.assert_array_equal(surface_point_velocity(moving, np.array([5.0, -3.0])), [1.0, 0.0])
    spinning = Obstacle(Circle(1.0), velocity=(0.2, 0.1), angular_rate=1.0)
    np.testing.assert_allclose(surface_point_velocity(spinning, p), [-2.0 + 0.2, 0.1])


@settings(max_examples=100)
@given(
    st.floats(-1.0, 1.0),
    st.floats(-1.0, 1.0),
    st.floats(-1.0, 1.0),
    st.sampled_from(sorted(SHAPES)),
)
def test_motion_term_is_time_derivative_of_h(vx, vy, w, name):
    base = SHAPES[name]
    obs = Obstacle(base.shape, base.position, base.orientation, (vx, vy), w, rotation_center=(1.0, 1.0))
    p = np.array([7.5, -2.0])
    dt = 1e-6
    fd = (boundary_value(obs.at_time(dt), p) - boundary_value(obs.at_time(-dt), p)) / (2 * dt)
    assert eval_boundary(obs, p).motion_term == pytest.approx(fd, abs=1e-5)


def test_rigid_motion_preserves_shape():
    obs = Obstacle(RING, position=(1.0, 2.0), velocity=(0.3, -0.1), angular_rate=0.4, rotation_center=(0.0, 0.0))
    later = obs.at_time(2.5)
    rng = np.random.default_rng(1)
    for q in rng.uniform(-3, 3, (50, 2)):
        # a body-fixed point keeps its boundary value
        world0 = obs.position + np.array([[math.cos(obs.orientation), -math.sin(obs.orientation)], [math.sin(obs.orientation), math.cos(obs.orientation)]]) @ q
        c, s = math.cos(later.orientation), math.sin(later.orientation)
        world1 = later.position + np.array([[c, -s], [s, c]]) @ q
        assert boundary_value(later, world1) == pytest.approx(boundary_value(obs, world0), abs=1e-12)
    assert boundary_value(later, later.reference_point) < 0
