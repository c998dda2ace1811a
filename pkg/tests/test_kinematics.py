import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from deconflict.kinematics import (Point2, RelativeState, Velocity2, conflict_interval, conflict_onset_array,
                                   g_value, is_separated, is_separated_array, relative_state, t_min_sep,
                                   tangent_halfplanes, tangent_slopes)

D = 5.0
HEAD_ON = relative_state((0, 0), (500, 0), (100, 0), (-500, 0))

coord = st.floats(-200, 200, allow_nan=False)
speed = st.floats(-1200, 1200, allow_nan=False)


@st.composite
def states(draw, min_dist=0.0):
    p = Point2(draw(coord), draw(coord))
    assume(p.norm() > min_dist)
    return RelativeState(p, Velocity2(draw(speed), draw(speed)))


def min_dist_sampled(rs, t_max=10.0, step=1 / 3600):
    t = np.arange(0.0, t_max, step)
    return float(np.min(np.hypot(rs.p.x + rs.v.vx * t, rs.p.y + rs.v.vy * t)))


def test_relative_state_examples():
    assert HEAD_ON == ((-100, 0), (1000, 0))
    assert relative_state((3, 4), (1, 2), (3, 4), (1, 2)) == ((0, 0), (0, 0))
    a, b = ((1, 2), (3, 4)), ((-5, 7), (11, -13))
    fwd = relative_state(a[0], a[1], b[0], b[1])
    rev = relative_state(b[0], b[1], a[0], a[1])
    assert rev.p == (-fwd.p.x, -fwd.p.y) and rev.v == (-fwd.v.vx, -fwd.v.vy)


def test_g_and_tbar_hand_values():
    assert g_value(HEAD_ON, D) == pytest.approx(-2.5e7)
    assert g_value(RelativeState(Point2(30, -7), Velocity2(0, 0)), D) == 0.0
    assert t_min_sep(HEAD_ON) == pytest.approx(0.1)
    assert t_min_sep(RelativeState(Point2(100, 0), Velocity2(1000, 0))) == pytest.approx(-0.1)
    assert t_min_sep(RelativeState(Point2(1, 1), Velocity2(0, 0))) is None


def test_is_separated_examples():
    assert not is_separated(HEAD_ON, D)
    assert is_separated(RelativeState(Point2(100, 0), Velocity2(1000, 0)), D)
    assert is_separated(RelativeState(Point2(0, 6), Velocity2(0, 0)), D)
    assert not is_separated(RelativeState(Point2(0, 4), Velocity2(0, 0)), D)


def test_conflict_interval_examples():
    t_in, t_out = conflict_interval(HEAD_ON, D)
    assert t_in == pytest.approx(0.095) and t_out == pytest.approx(0.105)
    assert conflict_interval(RelativeState(Point2(0, 10), Velocity2(0, 0)), D) is None
    assert conflict_interval(RelativeState(Point2(0, 10), Velocity2(300, 0)), D) is None
    assert conflict_interval(RelativeState(Point2(0, 3), Velocity2(0, 0)), D) == (-math.inf, math.inf)


def test_tangent_slopes_examples():
    lo, hi = sorted(tangent_slopes((10, 0), D))
    assert lo == pytest.approx(-math.tan(math.radians(30)))
    assert hi == pytest.approx(math.tan(math.radians(30)))
    # axis swap: slopes become reciprocals
    swapped = sorted(tangent_slopes((0, 10), D))
    assert sorted(1 / s for s in swapped) == pytest.approx([lo, hi])
    vert, other = tangent_slopes((5, 8), D)
    assert vert == math.inf
    # the non-vertical tangent satisfies g = 0 along (1, other)
    assert g_value(RelativeState(Point2(5, 8), Velocity2(1, other)), D) == pytest.approx(0, abs=1e-9)


def test_tangent_halfplanes_boundary_rays_are_tangent():
    p = Point2(30, -12)
    hp = tangent_halfplanes(p, D)
    for normal in (hp.lower, hp.upper):
        ray = Velocity2(-normal[1], normal[0])
        assert abs(g_value(RelativeState(p, ray), D)) < 1e-9 * 900 * 25
    with pytest.raises(ValueError):
        tangent_halfplanes((3, 0), D)


@settings(max_examples=300, deadline=None)
@given(states())
def test_g_sign_matches_line_distance(rs):
    vv = rs.v.vx ** 2 + rs.v.vy ** 2
    assume(vv > 1.0)
    t = -(rs.p.x * rs.v.vx + rs.p.y * rs.v.vy) / vv
    closest = math.hypot(rs.p.x + rs.v.vx * t, rs.p.y + rs.v.vy * t)
    assume(abs(closest - D) > 1e-6)
    assert (g_value(rs, D) >= 0) == (closest >= D)


@settings(max_examples=300, deadline=None)
@given(states(), st.floats(0.01, 100))
def test_symmetry_and_scaling(rs, lam):
    neg = RelativeState(Point2(-rs.p.x, -rs.p.y), Velocity2(-rs.v.vx, -rs.v.vy))
    assert g_value(neg, D) == pytest.approx(g_value(rs, D), rel=1e-12, abs=1e-6)
    scaled = RelativeState(rs.p, rs.v.scaled(lam))
    assert g_value(scaled, D) == pytest.approx(lam ** 2 * g_value(rs, D), rel=1e-9, abs=1e-6)
    tb = t_min_sep(rs)
    if tb is not None and lam * lam * (rs.v.vx ** 2 + rs.v.vy ** 2) > 1e-6:
        assert t_min_sep(scaled) == pytest.approx(tb / lam, rel=1e-9, abs=1e-12)
        assert is_separated(scaled, D) == is_separated(rs, D) or abs(g_value(rs, D)) < 1e-3


@settings(max_examples=200, deadline=None)
@given(states(min_dist=D + 1e-3))
def test_conflict_interval_roots_on_circle(rs):
    iv = conflict_interval(rs, D)
    if iv is None:
        assert is_separated(rs, D)
        return
    t_in, t_out = iv
    assert t_in <= t_out
    if t_in > 0:
        x = rs.position_at(t_in)
        assert math.hypot(*x) == pytest.approx(D, rel=1e-6)
        assert not is_separated(rs, D) or abs(g_value(rs, D)) < 1e-6 * (rs.v.vx ** 2 + rs.v.vy ** 2) * D * D
    else:
        # already inside or the whole encounter lies in the past
        assert t_out <= 0 or math.hypot(*rs.p) < D


def test_is_separated_matches_sampling_oracle():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(400):
        rs = RelativeState(Point2(*rng.uniform(-60, 60, 2)), Velocity2(*rng.uniform(-900, 900, 2)))
        if rs.p.norm() <= D:
            continue
        sampled = min_dist_sampled(rs)
        if abs(sampled - D) < 0.3:  # sampling resolution band at 1 s and up to ~1300 NM/h
            continue
        assert is_separated(rs, D) == (sampled > D - 1e-4)
        checked += 1
    assert checked > 300


def test_halfplane_union_matches_is_separated_small_sample():
    rng = np.random.default_rng(3)
    for _ in range(5000):
        p = Point2(*rng.uniform(-50, 50, 2))
        if p.norm() <= D * 1.001:
            continue
        v = Velocity2(*rng.uniform(-1000, 1000, 2))
        hp = tangent_halfplanes(p, D)
        rs = RelativeState(p, v)
        vv = v.vx ** 2 + v.vy ** 2
        if abs(g_value(rs, D)) < 1e-6 * vv * D * D:
            continue
        assert hp.contains(v) == is_separated(rs, D)


@settings(max_examples=200, deadline=None)
@given(states(), st.floats(0.1, 50))
def test_array_separation_matches_scalar(rs, d):
    got = is_separated_array([rs.p.x], [rs.p.y], [rs.v.vx], [rs.v.vy], d)
    assert bool(got[0]) == is_separated(rs, d)


@settings(max_examples=200, deadline=None)
@given(states(), st.floats(0.1, 50))
def test_array_onset_matches_scalar(rs, d):
    got = float(conflict_onset_array([rs.p.x], [rs.p.y], [rs.v.vx], [rs.v.vy], d)[0])
    iv = conflict_interval(rs, d)
    assert got == (math.inf if iv is None else iv[0])
