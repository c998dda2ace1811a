"""Stage 2: choose when each deviated aircraft turns back toward its target.

Recovery times live on a grid ``t_m = m * period_len``. For every aircraft
pair we tabulate which period pairs ``(m, n)`` keep the pair separated in each
of the three post-avoidance states (both recovered, only ``j`` recovered,
only ``i`` recovered). Assignments are then searched exactly (depth-first
branch-and-bound with forward checking) or greedily with a priority list.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .avoidance import AvoidanceSolution, Maneuver, heading_velocity
from .instances import Aircraft, Instance
from .kinematics import (Point2, RelativeState, Velocity2, conflict_interval, conflict_onset_array,
                         is_separated, is_separated_array)

ARRIVAL_TOL = 1e-9  # NM
DEFAULT_TIME_LIMIT = 300.0


class RecoveryInfeasibleError(RuntimeError):
    def __init__(self, message: str, pair: Optional[Tuple[int, int]] = None):
        self.pair = pair
        super().__init__(message)


@dataclass(frozen=True)
class RecoveryGrid:
    n_periods: int
    period_len: float

    def __post_init__(self):
        if self.n_periods < 1 or self.period_len <= 0:
            raise ValueError("need n_periods >= 1 and period_len > 0")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_periods) * self.period_len

    def time(self, m: int) -> float:
        return m * self.period_len

    @classmethod
    def from_instance(cls, instance: Instance) -> "RecoveryGrid":
        return cls(instance.config.n_periods, instance.config.period_len)

    @classmethod
    def covering_flights(cls, instance: Instance, avoidance: AvoidanceSolution) -> "RecoveryGrid":
        """Configured spacing, extended until every aircraft has passed its target."""
        eps = instance.config.period_len
        t_max = 0.0
        for a, m in zip(instance.aircraft, avoidance.maneuvers):
            v = heading_velocity(a, m)
            vv = v.vx ** 2 + v.vy ** 2
            t_max = max(t_max, ((a.target.x - a.origin.x) * v.vx + (a.target.y - a.origin.y) * v.vy) / vv)
        return cls(max(instance.config.n_periods, int(math.ceil(t_max / eps)) + 1), eps)


def avoidance_position(aircraft: Aircraft, maneuver: Maneuver, t: float) -> Point2:
    if t < 0:
        raise ValueError("t must be nonnegative")
    vx, vy = heading_velocity(aircraft, maneuver)
    return Point2(aircraft.origin.x + vx * t, aircraft.origin.y + vy * t)


def recovery_velocity(aircraft: Aircraft, maneuver: Maneuver, t: float) -> Optional[Velocity2]:
    """Nominal-speed velocity from the avoidance position at ``t`` to the target.

    Returns ``None`` when the aircraft is at (or has flown past) its target.
    """
    pos = avoidance_position(aircraft, maneuver, t)
    dx, dy = aircraft.target.x - pos.x, aircraft.target.y - pos.y
    dist = math.hypot(dx, dy)
    va = heading_velocity(aircraft, maneuver)
    if dist <= ARRIVAL_TOL or (t > 0 and dx * va.vx + dy * va.vy <= 0.0):
        return None
    hdg = math.atan2(dy, dx)
    return Velocity2(aircraft.nominal_speed * math.cos(hdg), aircraft.nominal_speed * math.sin(hdg))


@dataclass
class _Lines:
    """Straight motion lines ``X(t) = base + vel * t`` in absolute time."""

    avoid_base: np.ndarray     # (n, 2)
    avoid_vel: np.ndarray      # (n, 2)
    rec_base: np.ndarray       # (n, T, 2), NaN where recovery is unavailable
    rec_vel: np.ndarray        # (n, T, 2)
    available: np.ndarray      # (n, T) bool
    avoid_arrival: np.ndarray  # (n,) target time along the avoidance line, inf after a turn
    rec_arrival: np.ndarray    # (n, T) target time along each recovery line


def _build_lines(instance: Instance, avoidance: AvoidanceSolution, grid: RecoveryGrid) -> _Lines:
    n, T = len(instance), grid.n_periods
    times = grid.times
    ab = np.array([a.origin for a in instance.aircraft], dtype=float).reshape(n, 2)
    av = np.array(avoidance.velocities(instance), dtype=float).reshape(n, 2)
    rb = np.full((n, T, 2), np.nan)
    rv = np.full((n, T, 2), np.nan)
    avail = np.zeros((n, T), dtype=bool)
    aa = np.full(n, np.inf)
    ra = np.full((n, T), np.inf)
    for i, (a, m) in enumerate(zip(instance.aircraft, avoidance.maneuvers)):
        if m.theta == 0.0:
            aa[i] = float(np.dot(np.subtract(a.target, a.origin), av[i]) / np.dot(av[i], av[i]))
        for k, t in enumerate(times):
            vel = recovery_velocity(a, m, float(t))
            if vel is None:
                continue
            pos = ab[i] + av[i] * t
            rv[i, k] = vel
            rb[i, k] = pos - np.asarray(vel) * t
            ra[i, k] = t + math.dist(pos, a.target) / a.nominal_speed
            avail[i, k] = True
    return _Lines(ab, av, rb, rv, avail, aa, ra)


def _state(base_i, vel_i, base_j, vel_j, t0: float) -> RelativeState:
    p = (base_i + vel_i * t0) - (base_j + vel_j * t0)
    v = vel_i - vel_j
    return RelativeState(Point2(float(p[0]), float(p[1])), Velocity2(float(v[0]), float(v[1])))


def _lines_separated(rs: RelativeState, d: float, horizon: float = math.inf) -> bool:
    """Two-term test ``g >= 0 or t_bar <= 0``, or no conflict before ``horizon``.

    ``horizon`` is relative time until one of the two aircraft reaches its
    target; the pair is only checked while both are en route.
    """
    return is_separated(rs, d) or _conflict_onset(rs, d) > horizon


def _conflict_onset(rs: RelativeState, d: float) -> float:
    """Relative time at which the pair first comes within ``d`` (inf if never)."""
    iv = conflict_interval(rs, d)
    if iv is None:
        return math.inf
    return iv[0]


@dataclass
class PairOmega:
    """Conflict-free membership tables for the ordered pair ``(i, j)``."""

    rr: np.ndarray  # (T, T)
    ar: np.ndarray  # (T, T): i still avoiding, j recovered at n
    ra: np.ndarray  # (T, T): i recovered at m, j still avoiding
    ra_lines: np.ndarray  # (T,): R_i(m) vs the A_j line, without the onset escape
    ar_lines: np.ndarray  # (T,): A_i vs the R_j(n) line, without the onset escape

    def transposed(self) -> "PairOmega":
        return PairOmega(self.rr.T.copy(), self.ra.T.copy(), self.ar.T.copy(), self.ar_lines, self.ra_lines)


def build_omega(pair: Tuple[int, int], instance: Instance, avoidance: AvoidanceSolution,
                grid: RecoveryGrid, lines: Optional[_Lines] = None) -> PairOmega:
    i, j = pair
    if lines is None:
        lines = _build_lines(instance, avoidance, grid)
    d = instance.config.d
    T = grid.n_periods
    times = grid.times
    ar = np.zeros((T, T), dtype=bool)
    ra = np.zeros((T, T), dtype=bool)
    ra_lines = np.zeros(T, dtype=bool)
    ar_lines = np.zeros(T, dtype=bool)
    av_i, av_j = lines.available[i], lines.available[j]

    # A_i against R_j(n), referenced at t_n
    for n in range(T):
        if not av_j[n]:
            continue
        rs = _state(lines.avoid_base[i], lines.avoid_vel[i], lines.rec_base[j, n], lines.rec_vel[j, n], times[n])
        horizon = min(lines.avoid_arrival[i], lines.rec_arrival[j, n]) - times[n]
        if _lines_separated(rs, d, horizon):
            ar[:, n] = True
            ar_lines[n] = True
        else:
            tau = times[n] + _conflict_onset(rs, d)
            ar[:, n] = times <= tau + 1e-12
    # R_i(m) against A_j, referenced at t_m
    for m in range(T):
        if not av_i[m]:
            continue
        rs = _state(lines.rec_base[i, m], lines.rec_vel[i, m], lines.avoid_base[j], lines.avoid_vel[j], times[m])
        horizon = min(lines.rec_arrival[i, m], lines.avoid_arrival[j]) - times[m]
        if _lines_separated(rs, d, horizon):
            ra[m, :] = True
            ra_lines[m] = True
        else:
            tau = times[m] + _conflict_onset(rs, d)
            ra[m, :] = times <= tau + 1e-12
    # both recovered, referenced at max(t_m, t_n)
    t0 = np.maximum(times[:, None], times[None, :])[..., None]
    bi, vi = lines.rec_base[i][:, None, :], lines.rec_vel[i][:, None, :]
    bj, vj = lines.rec_base[j][None, :, :], lines.rec_vel[j][None, :, :]
    p = (bi + vi * t0) - (bj + vj * t0)
    v = np.broadcast_to(vi - vj, p.shape)
    horizon = np.minimum(lines.rec_arrival[i][:, None], lines.rec_arrival[j][None, :]) - t0[..., 0]
    rr = is_separated_array(p[..., 0], p[..., 1], v[..., 0], v[..., 1], d)
    rr |= conflict_onset_array(p[..., 0], p[..., 1], v[..., 0], v[..., 1], d) > horizon
    rr &= av_i[:, None] & av_j[None, :]
    return PairOmega(rr, ar, ra, ra_lines, ar_lines)


class OmegaTables:
    """All pairwise tables plus the combined admissibility array.

    ``ok[i, j, m, n]`` is true when ``t_i = t_m, t_j = t_n`` is admissible for
    the pair: both-recovered state always, plus the intermediate state implied
    by which aircraft turns first.

    With ``allow_hold`` an extra column ``hold == grid.n_periods`` is appended.
    It is open only to speed-only maneuvers (no heading change): such an
    aircraft may keep its avoidance speed all the way to its target. A holding
    aircraft never leaves its avoidance line, so its pair checks reduce to the
    line tests against the partner's recovery line, and two holding aircraft
    are separated by the stage-1 guarantee.
    """

    def __init__(self, instance: Instance, avoidance: AvoidanceSolution, grid: Optional[RecoveryGrid] = None,
                 allow_hold: bool = True):
        self.grid = grid or RecoveryGrid.from_instance(instance)
        self.n = len(instance)
        lines = _build_lines(instance, avoidance, self.grid)
        T = self.grid.n_periods
        self.hold = T if allow_hold else None
        C = T + 1 if allow_hold else T
        self.available = np.zeros((self.n, C), dtype=bool)
        self.available[:, :T] = lines.available
        if allow_hold:
            self.available[:, T] = [m.theta == 0.0 for m in avoidance.maneuvers]
        self._pairs: Dict[Tuple[int, int], PairOmega] = {}
        self.ok = np.ones((self.n, self.n, C, C), dtype=bool)
        self.ra_lines = np.ones((self.n, self.n, C), dtype=bool)
        upper = np.triu(np.ones((T, T), dtype=bool), 1)
        lower = upper.T
        for i in range(self.n):
            for j in range(i + 1, self.n):
                om = build_omega((i, j), instance, avoidance, self.grid, lines)
                self._pairs[(i, j)] = om
                ok = np.ones((C, C), dtype=bool)
                ok[:T, :T] = om.rr & (om.ra | ~upper) & (om.ar | ~lower)
                if allow_hold:
                    ok[T, :T] = om.ar_lines
                    ok[:T, T] = om.ra_lines
                ok &= self.available[i][:, None] & self.available[j][None, :]
                self.ok[i, j] = ok
                self.ok[j, i] = ok.T
                self.ra_lines[i, j, :T] = om.ra_lines
                # R_j(n) vs A_i is the same geometry as A_i vs R_j(n)
                self.ra_lines[j, i, :T] = om.ar_lines

    @property
    def n_cols(self) -> int:
        return self.ok.shape[-1]

    def is_hold(self, m: int) -> bool:
        return self.hold is not None and m == self.hold

    def pair(self, i: int, j: int) -> PairOmega:
        if i < j:
            return self._pairs[(i, j)]
        return self._pairs[(j, i)].transposed()

    @classmethod
    def from_arrays(cls, ok: np.ndarray, ra_lines: Optional[np.ndarray] = None) -> "OmegaTables":
        """Tables built directly from an admissibility array (tests, synthetic runs)."""
        self = cls.__new__(cls)
        n, _, T, _ = ok.shape
        self.n = n
        self.grid = RecoveryGrid(T, 1.0)
        self.hold = None
        self.available = np.ones((n, T), dtype=bool)
        self._pairs = {}
        self.ok = ok
        self.ra_lines = ra_lines if ra_lines is not None else np.ones((n, n, T), dtype=bool)
        return self


@dataclass
class RecoverySolution:
    period: List[int]
    objective: float
    optimal: bool
    method: str
    stats: Dict[str, float] = field(default_factory=dict)
    # grid length the periods refer to; index n_periods means hold
    n_periods: Optional[int] = None

    def grid(self, instance: Instance) -> RecoveryGrid:
        return RecoveryGrid(self.n_periods or instance.config.n_periods, instance.config.period_len)

    def to_dict(self, instance: Instance) -> dict:
        eps_min = instance.config.period_len * 60.0
        hold = self.grid(instance).n_periods
        return {
            "aircraft": [{"id": a.id, "period": int(m), "time_min": None if m >= hold else m * eps_min,
                          "hold": bool(m >= hold)}
                         for a, m in zip(instance.aircraft, self.period)],
            "objective": self.objective,
            "optimal": self.optimal,
            "method": self.method,
            "runtime_s": self.stats.get("runtime", 0.0),
            "n_periods": hold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RecoverySolution":
        periods = [int(r["period"]) for r in data["aircraft"]]
        return cls(periods, float(data["objective"]), bool(data["optimal"]), data.get("method", ""),
                   {"runtime": data.get("runtime_s", 0.0)}, data.get("n_periods"))


def recovery_objective(weights, periods) -> float:
    return float(sum(a * m * m for a, m in zip(weights, periods)))


def _weights(avoidance: AvoidanceSolution) -> np.ndarray:
    return np.asarray(avoidance.deviation_costs, dtype=float)


def check_assignment(omega: OmegaTables, periods) -> Optional[Tuple[int, int]]:
    """First inadmissible pair under ``periods``, or ``None``."""
    for i in range(omega.n):
        for j in range(i + 1, omega.n):
            if not omega.ok[i, j, periods[i], periods[j]]:
                return (i, j)
    return None


def solve_greedy(instance: Instance, avoidance: AvoidanceSolution, omega: OmegaTables) -> RecoverySolution:
    start = time.perf_counter()
    a = _weights(avoidance)
    return _greedy(a, omega, start)


def _greedy(a: np.ndarray, omega: OmegaTables, start: float) -> RecoverySolution:
    n, T = omega.n, omega.grid.n_periods
    t = [-1] * n
    recovered = [i for i in range(n) if a[i] == 0.0]
    for i in recovered:
        t[i] = 0
    pending = sorted((i for i in range(n) if a[i] != 0.0), key=lambda i: (-a[i], i))
    checks = 0
    for m in range(omega.n_cols):
        update = True
        while update and pending:
            update = False
            for i in list(pending):
                ok = True
                for j in range(n):
                    if j == i:
                        continue
                    checks += 1
                    if t[j] >= 0:
                        if not omega.ok[i, j, m, t[j]]:
                            ok = False
                            break
                    elif not omega.ra_lines[i, j, m]:
                        ok = False
                        break
                if ok and omega.available[i, m]:
                    t[i] = m
                    pending.remove(i)
                    update = True
    complete = not pending
    for i in pending:
        t[i] = T - 1
    return RecoverySolution(
        t, recovery_objective(a, t), False, "greedy",
        {"runtime": time.perf_counter() - start, "complete": complete, "checks": checks},
        T,
    )


class _ExactSearch:
    def __init__(self, a: np.ndarray, omega: OmegaTables, time_limit: float):
        self.a = a
        self.omega = omega
        self.n = omega.n
        self.sq = np.arange(omega.n_cols, dtype=float) ** 2
        fixed = [i for i in range(self.n) if a[i] == 0.0]
        free = sorted((i for i in range(self.n) if a[i] != 0.0), key=lambda i: (-a[i], i))
        self.order = fixed + free
        self.n_fixed = len(fixed)
        self.best_obj = math.inf
        self.best: Optional[List[int]] = None
        self.nodes = 0
        self.timed_out = False
        self.deadline = time.perf_counter() + time_limit
        self.wipeouts: Dict[Tuple[int, int], int] = {}

    def run(self, incumbent: Optional[List[int]] = None) -> None:
        if incumbent is not None and check_assignment(self.omega, incumbent) is None:
            self.best = list(incumbent)
            self.best_obj = recovery_objective(self.a, incumbent)
        dom = self.omega.available.copy()
        for i in self.order[: self.n_fixed]:
            dom[i, 1:] = False
        self._dfs(0, dom, [-1] * self.n, 0.0)

    def _dfs(self, depth: int, dom: np.ndarray, t: List[int], cost: float) -> None:
        if self.timed_out:
            return
        self.nodes += 1
        if (self.nodes & 1023) == 0 and time.perf_counter() > self.deadline:
            self.timed_out = True
            return
        if depth == self.n:
            if cost < self.best_obj - 1e-15 or self.best is None:
                self.best_obj, self.best = cost, list(t)
            return
        rest = self.order[depth + 1:]
        # forward-checked lower bound over the unassigned aircraft
        lb_rest = float(np.sum(self.a[rest] * self.sq[np.argmax(dom[rest], axis=1)])) if rest else 0.0
        i = self.order[depth]
        for m in np.nonzero(dom[i])[0]:
            c = cost + self.a[i] * self.sq[m]
            if self.best is not None and c + lb_rest >= self.best_obj - 1e-15:
                break
            nd = dom.copy()
            nd[rest] &= self.omega.ok[i, rest, m, :]
            if rest:
                empty = ~nd[rest].any(axis=1)
                if empty.any():
                    j = rest[int(np.argmax(empty))]
                    key = (min(i, j), max(i, j))
                    self.wipeouts[key] = self.wipeouts.get(key, 0) + 1
                    continue
            nd[i] = False
            nd[i, m] = True
            t[i] = int(m)
            self._dfs(depth + 1, nd, t, c)
            t[i] = -1
            if self.timed_out:
                return


def solve_exact(instance: Instance, avoidance: AvoidanceSolution, omega: OmegaTables,
                time_limit: float = DEFAULT_TIME_LIMIT, incumbent: Optional[List[int]] = None) -> RecoverySolution:
    start = time.perf_counter()
    return _exact(_weights(avoidance), omega, time_limit, incumbent, start)


def _exact(a: np.ndarray, omega: OmegaTables, time_limit: float, incumbent, start: float) -> RecoverySolution:
    if incumbent is None:
        greedy = _greedy(a, omega, start)
        if greedy.stats["complete"]:
            incumbent = greedy.period
    search = _ExactSearch(a, omega, time_limit)
    search.run(incumbent)
    runtime = time.perf_counter() - start
    if search.best is None:
        pair = max(search.wipeouts, key=search.wipeouts.get) if search.wipeouts else None
        if search.timed_out:
            raise RecoveryInfeasibleError("no admissible recovery assignment found within time limit", pair)
        raise RecoveryInfeasibleError(f"no admissible recovery assignment (blocking pair {pair})", pair)
    return RecoverySolution(
        search.best, recovery_objective(a, search.best), not search.timed_out, "exact",
        {"runtime": runtime, "nodes": search.nodes},
        omega.grid.n_periods,
    )


def recovery_tables(instance: Instance, avoidance: AvoidanceSolution, allow_hold: bool = True) -> OmegaTables:
    """Tables on the configured grid, or on a grid covering every flight if greedy gets stuck there.

    Greedy completeness certifies that the configured grid admits an
    assignment; otherwise both solvers should see the longer horizon.
    """
    omega = OmegaTables(instance, avoidance, allow_hold=allow_hold)
    if _greedy(_weights(avoidance), omega, time.perf_counter()).stats["complete"]:
        return omega
    wide = RecoveryGrid.covering_flights(instance, avoidance)
    if wide.n_periods == omega.grid.n_periods:
        return omega
    return OmegaTables(instance, avoidance, wide, allow_hold=allow_hold)
