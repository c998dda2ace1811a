"""Benchmark instances: circle problem (CP), random circle problem (RCP), JSON I/O."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, Tuple

import jsonschema
import numpy as np

from .kinematics import Point2, Velocity2, is_separated, relative_state

CP_SPEED = 500.0
RCP_SPEED_RANGE = (486.0, 594.0)
RCP_HEADING_DEV = math.pi / 6
DEFAULT_RADIUS = 200.0
RETRY_BUDGET = 1000


class InstanceError(ValueError):
    """Invalid instance data; ``path`` names the offending field when known."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def default_headings() -> Tuple[float, ...]:
    return tuple(math.radians(a) for a in range(-30, 31, 10))


@dataclass(frozen=True)
class ScenarioConfig:
    d: float = 5.0
    w: float = 0.2
    q_min: float = 0.9
    q_max: float = 1.1
    heading_set: Tuple[float, ...] = field(default_factory=default_headings)
    n_periods: int = 15
    period_len: float = 2.0 / 60.0  # hours
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.q_min <= 1.0 <= self.q_max):
            raise InstanceError("need 0 < q_min <= 1 <= q_max", "config.q_min")
        if not any(abs(h) < 1e-12 for h in self.heading_set):
            raise InstanceError("heading set must contain 0", "config.headings_deg")
        if self.n_periods < 1:
            raise InstanceError("n_periods must be >= 1", "config.n_periods")
        if self.period_len <= 0:
            raise InstanceError("period_len must be positive", "config.period_len_min")
        if self.d <= 0:
            raise InstanceError("d must be positive", "config.d")
        if self.w < 0:
            raise InstanceError("w must be nonnegative", "config.w")

    @property
    def period_times(self) -> np.ndarray:
        return np.arange(self.n_periods) * self.period_len


@dataclass(frozen=True)
class Aircraft:
    id: int
    origin: Point2
    initial_heading: float
    nominal_speed: float
    target: Point2

    def __post_init__(self):
        if not self.nominal_speed > 0:
            raise InstanceError("nominal speed must be positive", f"aircraft[{self.id}].speed")
        if math.hypot(self.target[0] - self.origin[0], self.target[1] - self.origin[1]) == 0.0:
            raise InstanceError("target equals origin", f"aircraft[{self.id}].target_x")

    @property
    def nominal_velocity(self) -> Velocity2:
        return Velocity2(self.nominal_speed * math.cos(self.initial_heading),
                         self.nominal_speed * math.sin(self.initial_heading))


@dataclass(frozen=True)
class Instance:
    aircraft: Tuple[Aircraft, ...]
    config: ScenarioConfig
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "aircraft", tuple(self.aircraft))
        ids = [a.id for a in self.aircraft]
        if len(set(ids)) != len(ids):
            raise InstanceError("aircraft ids must be unique", "aircraft")
        check_initial_separation(self.aircraft, self.config.d)

    def __len__(self) -> int:
        return len(self.aircraft)

    def pairs(self):
        return itertools.combinations(range(len(self.aircraft)), 2)


def check_initial_separation(aircraft: Sequence[Aircraft], d: float) -> None:
    for a, b in itertools.combinations(aircraft, 2):
        dist = math.hypot(a.origin[0] - b.origin[0], a.origin[1] - b.origin[1])
        if dist < d:
            raise InstanceError(
                f"aircraft {a.id} and {b.id} start {dist:.4g} NM apart (< d={d:g})", "aircraft")


def _circle_layout(n: int, radius: float, d: float):
    if n < 2:
        raise InstanceError("need at least 2 aircraft", "n")
    if 2.0 * radius * math.sin(math.pi / n) < d:
        raise InstanceError(f"{n} aircraft on radius {radius:g} violate initial separation", "n")
    for k in range(n):
        ang = 2.0 * math.pi * k / n
        yield k, ang, Point2(radius * math.cos(ang), radius * math.sin(ang))


def generate_cp(n: int, radius: float = DEFAULT_RADIUS, config: ScenarioConfig = ScenarioConfig()) -> Instance:
    aircraft = [
        Aircraft(k, pos, ang + math.pi, CP_SPEED, Point2(-pos.x, -pos.y))
        for k, ang, pos in _circle_layout(n, radius, config.d)
    ]
    return Instance(tuple(aircraft), config, f"CP-{n}")


def generate_rcp(n: int, radius: float = DEFAULT_RADIUS, config: ScenarioConfig = ScenarioConfig(),
                 name: str = "") -> Instance:
    rng = np.random.default_rng(config.seed)
    layout = list(_circle_layout(n, radius, config.d))
    for _ in range(RETRY_BUDGET):
        speeds = rng.uniform(*RCP_SPEED_RANGE, size=n)
        devs = rng.uniform(-RCP_HEADING_DEV, RCP_HEADING_DEV, size=n)
        aircraft = []
        for (k, ang, pos), v, dev in zip(layout, speeds, devs):
            hdg = ang + math.pi + dev
            target = Point2(pos.x + 2.0 * radius * math.cos(hdg), pos.y + 2.0 * radius * math.sin(hdg))
            aircraft.append(Aircraft(k, pos, hdg, float(v), target))
        try:
            return Instance(tuple(aircraft), config, name or f"RCP-{n}-{config.seed}")
        except InstanceError:
            continue
    raise InstanceError(f"no valid RCP draw after {RETRY_BUDGET} attempts", "seed")


def count_conflicts(instance: Instance) -> int:
    d = instance.config.d
    ac = instance.aircraft
    return sum(
        not is_separated(relative_state(ac[i].origin, ac[i].nominal_velocity,
                                        ac[j].origin, ac[j].nominal_velocity), d)
        for i, j in instance.pairs()
    )


# ---------------------------------------------------------------- JSON I/O

INSTANCE_SCHEMA = {
    "type": "object",
    "required": ["name", "config", "aircraft"],
    "properties": {
        "name": {"type": "string"},
        "config": {
            "type": "object",
            "required": ["d", "w", "q_min", "q_max", "headings_deg", "n_periods", "period_len_min", "seed"],
            "properties": {
                "d": {"type": "number"},
                "w": {"type": "number"},
                "q_min": {"type": "number"},
                "q_max": {"type": "number"},
                "headings_deg": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "n_periods": {"type": "integer"},
                "period_len_min": {"type": "number"},
                "seed": {"type": "integer"},
            },
        },
        "aircraft": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "x", "y", "heading_deg", "speed", "target_x", "target_y"],
                "properties": {k: {"type": "number"} for k in
                               ("x", "y", "heading_deg", "speed", "target_x", "target_y")}
                | {"id": {"type": "integer"}},
            },
        },
    },
}


def instance_to_dict(instance: Instance) -> dict:
    c = instance.config
    return {
        "name": instance.name,
        "config": {
            "d": c.d, "w": c.w, "q_min": c.q_min, "q_max": c.q_max,
            "headings_deg": [math.degrees(h) for h in c.heading_set],
            "n_periods": c.n_periods,
            "period_len_min": c.period_len * 60.0,
            "seed": c.seed,
        },
        "aircraft": [
            {"id": a.id, "x": a.origin.x, "y": a.origin.y,
             "heading_deg": math.degrees(a.initial_heading), "speed": a.nominal_speed,
             "target_x": a.target.x, "target_y": a.target.y}
            for a in instance.aircraft
        ],
    }


def instance_from_dict(data: dict) -> Instance:
    try:
        jsonschema.validate(data, INSTANCE_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path)
        raise InstanceError(exc.message, path) from None
    c = data["config"]
    config = ScenarioConfig(
        d=float(c["d"]), w=float(c["w"]), q_min=float(c["q_min"]), q_max=float(c["q_max"]),
        heading_set=tuple(math.radians(h) for h in c["headings_deg"]),
        n_periods=int(c["n_periods"]), period_len=float(c["period_len_min"]) / 60.0,
        seed=int(c["seed"]),
    )
    aircraft = tuple(
        Aircraft(int(a["id"]), Point2(float(a["x"]), float(a["y"])), math.radians(a["heading_deg"]),
                 float(a["speed"]), Point2(float(a["target_x"]), float(a["target_y"])))
        for a in data["aircraft"]
    )
    return Instance(aircraft, config, data["name"])


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=2) + "\n")


def load_instance(path) -> Instance:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"invalid JSON: {exc}") from None
    return instance_from_dict(data)


def with_config(instance: Instance, **changes) -> Instance:
    return replace(instance, config=replace(instance.config, **changes))
