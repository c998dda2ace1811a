"""Pairwise separation geometry for aircraft in uniform linear motion.

Units are nautical miles and hours throughout. A pair is *separated* when the
distance between the two straight-line motions never drops below ``d`` for
``t >= 0`` (measured from the reference time of the relative state).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np

EPS_V = 1e-9  # (NM/h)^2, below this relative motion is treated as zero
EPS_G = 1e-9


class Point2(NamedTuple):
    x: float
    y: float

    def __add__(self, other):  # type: ignore[override]
        return Point2(self.x + other[0], self.y + other[1])

    def __sub__(self, other):
        return Point2(self.x - other[0], self.y - other[1])

    def norm(self) -> float:
        return math.hypot(self.x, self.y)


class Velocity2(NamedTuple):
    vx: float
    vy: float

    def scaled(self, k: float) -> "Velocity2":
        return Velocity2(self.vx * k, self.vy * k)

    def norm(self) -> float:
        return math.hypot(self.vx, self.vy)


class RelativeState(NamedTuple):
    p: Point2
    v: Velocity2

    def position_at(self, t: float) -> Point2:
        return Point2(self.p.x + self.v.vx * t, self.p.y + self.v.vy * t)


@dataclass(frozen=True)
class HalfPlaneDisjunction:
    """Velocity-space disjunction equivalent to pairwise separation.

    Branch ``lower`` is ``a_l*vx + b_l*vy <= 0`` together with the side row
    ``s_x*vx + s_y*vy <= 0``; branch ``upper`` is ``a_u*vx + b_u*vy >= 0``
    together with ``s_x*vx + s_y*vy >= 0``. The side row splits velocity
    space along the line through ``p`` so each branch is a convex wedge; the
    union of the two wedges is exactly the set of separating relative
    velocities.
    """

    lower: Tuple[float, float]
    upper: Tuple[float, float]
    side: Tuple[float, float]

    def branch_rows(self, branch: str) -> Tuple[Tuple[float, float], ...]:
        """Rows ``(a, b)`` meaning ``a*vx + b*vy >= 0`` for one branch."""
        sx, sy = self.side
        if branch == "lower":
            a, b = self.lower
            return ((-a, -b), (-sx, -sy))
        if branch == "upper":
            return (self.upper, (sx, sy))
        raise ValueError(f"unknown branch {branch!r}")

    def contains(self, v: Velocity2, branch: Optional[str] = None, tol: float = 0.0) -> bool:
        branches = ("lower", "upper") if branch is None else (branch,)
        for br in branches:
            if all(a * v[0] + b * v[1] >= -tol for a, b in self.branch_rows(br)):
                return True
        return False


def relative_state(p_i, v_i, p_j, v_j) -> RelativeState:
    return RelativeState(
        Point2(p_i[0] - p_j[0], p_i[1] - p_j[1]),
        Velocity2(v_i[0] - v_j[0], v_i[1] - v_j[1]),
    )


def g_value(rs: RelativeState, d: float) -> float:
    """Time-invariant separation margin of the two motion lines.

    Equals ``|v|^2 * (min_t |p + v t|^2 - d^2)`` over all real ``t``.
    """
    (x, y), (vx, vy) = rs
    return vx * vx * (y * y - d * d) + vy * vy * (x * x - d * d) - 2.0 * vx * vy * x * y


def t_min_sep(rs: RelativeState) -> Optional[float]:
    """Time of closest approach, or ``None`` for negligible relative motion."""
    (x, y), (vx, vy) = rs
    vv = vx * vx + vy * vy
    if vv <= EPS_V:
        return None
    return -(x * vx + y * vy) / vv


def is_separated(rs: RelativeState, d: float) -> bool:
    t_bar = t_min_sep(rs)
    if t_bar is None:
        return rs.p.norm() >= d
    if t_bar <= 0.0:
        return True
    vv = rs.v.vx ** 2 + rs.v.vy ** 2
    return g_value(rs, d) >= -EPS_G * vv * d * d


def is_separated_array(x, y, vx, vy, d: float) -> np.ndarray:
    """Elementwise ``is_separated`` over arrays of relative states."""
    x, y, vx, vy = (np.asarray(a, dtype=float) for a in (x, y, vx, vy))
    vv = vx * vx + vy * vy
    moving = vv > EPS_V
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bar = -(x * vx + y * vy) / vv
    g = vx * vx * (y * y - d * d) + vy * vy * (x * x - d * d) - 2.0 * vx * vy * x * y
    still = np.hypot(x, y) >= d
    return np.where(moving, (t_bar <= 0.0) | (g >= -EPS_G * vv * d * d), still)


def conflict_interval(rs: RelativeState, d: float) -> Optional[Tuple[float, float]]:
    """Real roots ``t_in <= t_out`` of ``|p + v t|^2 = d^2``.

    With no relative motion the interval is ``(-inf, inf)`` when the pair is
    already closer than ``d`` and absent otherwise.
    """
    (x, y), (vx, vy) = rs
    a = vx * vx + vy * vy
    c = x * x + y * y - d * d
    if a <= EPS_V:
        return (-math.inf, math.inf) if c < 0.0 else None
    half_b = x * vx + y * vy
    disc = half_b * half_b - a * c
    if disc < 0.0:
        return None
    root = math.sqrt(disc)
    # numerically stable pair of roots
    q = -(half_b + math.copysign(root, half_b))
    if q == 0.0:
        return (0.0, 0.0)
    r1, r2 = q / a, c / q
    return (min(r1, r2), max(r1, r2))


def conflict_onset_array(x, y, vx, vy, d: float) -> np.ndarray:
    """Elementwise first root of ``conflict_interval`` (inf where there is none)."""
    x, y, vx, vy = (np.asarray(v, dtype=float) for v in (x, y, vx, vy))
    a = vx * vx + vy * vy
    c = x * x + y * y - d * d
    half_b = x * vx + y * vy
    disc = half_b * half_b - a * c
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        q = -(half_b + np.copysign(np.sqrt(np.maximum(disc, 0.0)), half_b))
        t_in = np.where(q == 0.0, 0.0, np.minimum(q / a, c / q))
    moving = a > EPS_V
    out = np.where(disc < 0.0, np.inf, t_in)
    return np.where(moving, out, np.where(c < 0.0, -np.inf, np.inf))


def tangent_slopes(p, d: float) -> Tuple[float, float]:
    """Slopes ``vy/vx`` of the two tangent directions from ``p`` to the disk.

    Returns ``math.inf`` for a vertical tangent (the ``x^2 == d^2`` case).
    """
    x, y = p
    r2 = x * x + y * y
    if r2 <= d * d:
        raise ValueError("initial separation lost: |p| <= d")
    root = d * math.sqrt(r2 - d * d)
    den = x * x - d * d
    if abs(den) < 1e-12 * r2:
        # one tangent is vertical, the other solves the degenerate linear equation
        other = (y * y - d * d) / (2.0 * x * y) if x * y != 0.0 else 0.0
        return (math.inf, other)
    return ((x * y - root) / den, (x * y + root) / den)


def tangent_halfplanes(p, d: float) -> HalfPlaneDisjunction:
    """Split the separating relative velocities into two convex wedges.

    The conflicting velocities form the open cone of directions within
    ``asin(d/|p|)`` of ``-p``; each branch is one side of that cone.
    """
    x, y = p
    r = math.hypot(x, y)
    if r <= d:
        raise ValueError(f"initial separation lost: |p|={r:.6g} <= d={d:g}")
    alpha = math.asin(d / r)
    phi = math.atan2(-y, -x)
    # boundary ray at phi + alpha; normal pointing away from the cone
    ang_u = phi + alpha + 0.5 * math.pi
    ang_l = phi - alpha - 0.5 * math.pi
    upper = (math.cos(ang_u), math.sin(ang_u))
    lower = (-math.cos(ang_l), -math.sin(ang_l))
    # side row: cross(-p, v) >= 0 is the half containing the upper boundary
    side = (y / r, -x / r)
    return HalfPlaneDisjunction(lower=lower, upper=upper, side=side)
