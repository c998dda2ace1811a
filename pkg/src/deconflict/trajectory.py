"""Piecewise-linear trajectories from both stages and an independent separation check."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .avoidance import AvoidanceSolution, heading_velocity
from .instances import Instance
from .kinematics import Point2, Velocity2
from .recovery import RecoveryGrid, RecoverySolution, recovery_velocity

VIOLATION_TOL = 1e-4  # NM
SECONDS_PER_HOUR = 3600.0


@dataclass(frozen=True)
class Segment:
    t_start: float
    start: Point2
    velocity: Velocity2
    t_end: float

    def position(self, t):
        dt = np.asarray(t, dtype=float) - self.t_start
        return np.stack([self.start.x + self.velocity.vx * dt, self.start.y + self.velocity.vy * dt], axis=-1)

    @property
    def end(self) -> Point2:
        dt = self.t_end - self.t_start
        return Point2(self.start.x + self.velocity.vx * dt, self.start.y + self.velocity.vy * dt)


@dataclass(frozen=True)
class Trajectory:
    aircraft_id: int
    segments: Tuple[Segment, ...]

    @property
    def arrival_time(self) -> float:
        return self.segments[-1].t_end

    def position(self, t) -> np.ndarray:
        """Positions at times ``t`` (clamped to the flown interval)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((len(t), 2))
        for k, seg in enumerate(self.segments):
            last = k == len(self.segments) - 1
            mask = (t >= seg.t_start) & ((t <= seg.t_end) if last else (t < seg.t_end))
            if k == 0:
                mask |= t < seg.t_start
            if last:
                mask |= t > seg.t_end
            out[mask] = seg.position(np.clip(t[mask], seg.t_start, seg.t_end))
        return out


@dataclass
class VerificationReport:
    min_separation: float
    violating_pair: Optional[Tuple[int, int, float]]
    samples: int
    closest_pair: Optional[Tuple[int, int, float]] = None
    threshold: float = 0.0

    @property
    def ok(self) -> bool:
        return self.violating_pair is None

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "min_separation": self.min_separation if math.isfinite(self.min_separation) else None,
            "closest_pair": list(self.closest_pair) if self.closest_pair else None,
            "violating_pair": list(self.violating_pair) if self.violating_pair else None,
            "samples": self.samples,
            "threshold": self.threshold,
        }


def _arrival_along(start: Point2, vel: Velocity2, target: Point2) -> float:
    """Time along a ray at which it is closest to ``target`` (>= 0)."""
    vv = vel.vx ** 2 + vel.vy ** 2
    return max(0.0, ((target.x - start.x) * vel.vx + (target.y - start.y) * vel.vy) / vv)


def assemble(instance: Instance, avoidance: AvoidanceSolution, recovery: RecoverySolution,
             grid: Optional[RecoveryGrid] = None) -> List[Trajectory]:
    grid = grid or recovery.grid(instance)
    out = []
    for i, (ac, man) in enumerate(zip(instance.aircraft, avoidance.maneuvers)):
        m = int(recovery.period[i])
        if m >= grid.n_periods:
            # hold: speed-only maneuver flown to the target
            va = heading_velocity(ac, man)
            t_end = _arrival_along(ac.origin, va, ac.target)
            out.append(Trajectory(ac.id, (Segment(0.0, ac.origin, va, t_end),)))
            continue
        t_rec = grid.time(m)
        if t_rec == 0.0:
            vel = recovery_velocity(ac, man, 0.0)
            seg = Segment(0.0, ac.origin, vel, (ac.target - ac.origin).norm() / ac.nominal_speed)
            out.append(Trajectory(ac.id, (seg,)))
            continue
        va = heading_velocity(ac, man)
        vr = recovery_velocity(ac, man, t_rec)
        if vr is None:
            warnings.warn(f"aircraft {ac.id} passes its target before recovery period {m}; clamping")
            t_end = _arrival_along(ac.origin, va, ac.target)
            out.append(Trajectory(ac.id, (Segment(0.0, ac.origin, va, t_end),)))
            continue
        first = Segment(0.0, ac.origin, va, t_rec)
        junction = first.end
        t_arr = t_rec + (ac.target - junction).norm() / ac.nominal_speed
        out.append(Trajectory(ac.id, (first, Segment(t_rec, junction, vr, t_arr))))
    return out


def _segment_min(si: Segment, sj: Segment, hi: float):
    """Exact min distance of two segments over their common time window (capped at ``hi``)."""
    lo = max(si.t_start, sj.t_start)
    hi = min(si.t_end, sj.t_end, hi)
    if hi < lo:
        return None
    p = si.position(lo) - sj.position(lo)
    v = np.array([si.velocity.vx - sj.velocity.vx, si.velocity.vy - sj.velocity.vy])
    vv = float(v @ v)
    s = 0.0 if vv == 0.0 else min(max(-float(p @ v) / vv, 0.0), hi - lo)
    dist = float(np.hypot(*(p + v * s)))
    return dist, lo + s, lo, p, v, vv


def _first_below(p: np.ndarray, v: np.ndarray, vv: float, r: float, span: float) -> Optional[float]:
    """Earliest relative time in ``[0, span]`` with ``|p + v s| < r``."""
    c = float(p @ p) - r * r
    if c < 0.0:
        return 0.0
    if vv == 0.0:
        return None
    hb = float(p @ v)
    disc = hb * hb - vv * c
    if disc <= 0.0:
        return None
    s = (-hb - math.sqrt(disc)) / vv
    return s if 0.0 <= s <= span else None


def verify(trajectories: Sequence[Trajectory], d: float, step: float = 1.0) -> VerificationReport:
    """Check pairwise separation while both aircraft are en route.

    ``step`` is the sampling interval in seconds; every pair of overlapping
    segments is also minimized analytically.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    thr = d - VIOLATION_TOL
    n = len(trajectories)
    if n < 2:
        return VerificationReport(math.inf, None, 0, None, thr)
    horizon = max(t.arrival_time for t in trajectories)
    dt = step / SECONDS_PER_HOUR
    times = np.arange(0.0, horizon + 0.5 * dt, dt)
    pos = np.stack([t.position(times) for t in trajectories])  # (n, S, 2)
    arr = np.array([t.arrival_time for t in trajectories])
    best = (math.inf, None)
    first_viol: Optional[Tuple[int, int, float]] = None
    samples = 0
    for i in range(n):
        for j in range(i + 1, n):
            hi = min(arr[i], arr[j])
            mask = times <= hi
            samples += int(mask.sum())
            if mask.any():
                dist = np.hypot(*(pos[i, mask] - pos[j, mask]).T)
                k = int(np.argmin(dist))
                if dist[k] < best[0]:
                    best = (float(dist[k]), (trajectories[i].aircraft_id, trajectories[j].aircraft_id, float(times[k])))
            for si in trajectories[i].segments:
                for sj in trajectories[j].segments:
                    res = _segment_min(si, sj, hi)
                    if res is None:
                        continue
                    dist_a, t_a, lo, p, v, vv = res
                    if dist_a < best[0]:
                        best = (dist_a, (trajectories[i].aircraft_id, trajectories[j].aircraft_id, t_a))
                    if dist_a < thr:
                        s = _first_below(p, v, vv, thr, min(si.t_end, sj.t_end, hi) - lo)
                        t_v = lo + (s if s is not None else t_a - lo)
                        if first_viol is None or t_v < first_viol[2]:
                            first_viol = (trajectories[i].aircraft_id, trajectories[j].aircraft_id, t_v)
    return VerificationReport(best[0], first_viol, samples, best[1], thr)


def nominal_arrival(instance: Instance) -> np.ndarray:
    return np.array([(a.target - a.origin).norm() / a.nominal_speed for a in instance.aircraft])


def metrics(trajectories: Sequence[Trajectory], avoidance: AvoidanceSolution, recovery: RecoverySolution,
            instance: Optional[Instance] = None) -> dict:
    periods = np.asarray(recovery.period, dtype=float)
    out = {
        "min_period": int(periods.min()) if len(periods) else 0,
        "mean_period": float(periods.mean()) if len(periods) else 0.0,
        "max_period": int(periods.max()) if len(periods) else 0,
        "n_periods": recovery.grid(instance).n_periods if instance is not None else recovery.n_periods,
        "total_deviation": float(sum(avoidance.deviation_costs)),
    }
    if instance is not None:
        out["n_hold"] = int(np.sum(periods >= recovery.grid(instance).n_periods))
        delays = np.array([t.arrival_time for t in trajectories]) - nominal_arrival(instance)
        out["arrival_delay_h"] = [float(x) for x in delays]
    return out


# ---------------------------------------------------------------- SVG

_COLORS = {"nominal": "#999999", "avoid": "#d62728", "recover": "#1f77b4"}


def plot_svg(instance: Instance, trajectories: Sequence[Trajectory], size: int = 600) -> str:
    """Top-down plot: dashed grey nominal routes, red avoidance legs, blue recovery legs."""
    pts = [a.origin for a in instance.aircraft] + [a.target for a in instance.aircraft]
    for tr in trajectories:
        pts += [s.start for s in tr.segments] + [s.end for s in tr.segments]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    pad = 0.05 * max(max(xs) - min(xs), max(ys) - min(ys), 1.0)
    x0, x1, y0, y1 = min(xs) - pad, max(xs) + pad, min(ys) - pad, max(ys) + pad
    scale = size / max(x1 - x0, y1 - y0)

    def xy(p):
        return f"{(p[0] - x0) * scale:.2f},{(y1 - p[1]) * scale:.2f}"

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for a in instance.aircraft:
        lines.append(f'<polyline points="{xy(a.origin)} {xy(a.target)}" fill="none" '
                     f'stroke="{_COLORS["nominal"]}" stroke-dasharray="6,4" stroke-width="1"/>')
    for tr in trajectories:
        for k, seg in enumerate(tr.segments):
            kind = "recover" if k > 0 or len(tr.segments) == 1 else "avoid"
            lines.append(f'<polyline points="{xy(seg.start)} {xy(seg.end)}" fill="none" '
                         f'stroke="{_COLORS[kind]}" stroke-width="1.5"/>')
        cx, cy = xy(tr.segments[0].start).split(",")
        lines.append(f'<circle cx="{cx}" cy="{cy}" r="3" fill="black"/>')
        lines.append(f'<text x="{cx}" y="{cy}" font-size="10" dx="4" dy="-4">{tr.aircraft_id}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
