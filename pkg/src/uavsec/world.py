"""Obstacles, detection, repulsion-based avoidance and sensor emulation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from . import vehicle
from .errors import ValidationError
from .vehicle import ControlInput, UavState, VehicleParams

D_MIN = 0.1
SONAR_MAX_RANGE = 40.0

Vec3 = tuple[float, float, float]


def _vec3(v, name="vector") -> Vec3:
    v = tuple(float(c) for c in v)
    if len(v) != 3:
        raise ValidationError(f"{name} must have 3 components")
    return v


@dataclass(frozen=True)
class Obstacle:
    id: str
    center: Vec3
    radius: float
    velocity: Vec3 = (0.0, 0.0, 0.0)
    phantom: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        object.__setattr__(self, "velocity", _vec3(self.velocity, "velocity"))
        if not self.radius > 0:
            raise ValidationError(f"obstacle {self.id!r}: radius must be positive")

    def surface_distance(self, point: Sequence[float]) -> float:
        return math.dist(self.center, point) - self.radius


class ObstacleRegistry:
    """Mutable set of obstacles; dynamic ones advance by ``velocity * dt`` per tick."""

    def __init__(self, obstacles: Iterable[Obstacle] = ()):
        self._obstacles: dict[str, Obstacle] = {}
        self._snapshot: Optional[tuple[Obstacle, ...]] = None
        for ob in obstacles:
            self.add(ob)

    def add(self, ob: Obstacle) -> None:
        if ob.id in self._obstacles:
            raise ValidationError(f"duplicate obstacle id {ob.id!r}")
        self._obstacles[ob.id] = ob
        self._snapshot = None

    def remove(self, obstacle_id: str) -> Obstacle:
        self._snapshot = None
        return self._obstacles.pop(obstacle_id)

    def __contains__(self, obstacle_id: str) -> bool:
        return obstacle_id in self._obstacles

    def __len__(self) -> int:
        return len(self._obstacles)

    def advance(self, dt: float) -> None:
        for key, ob in self._obstacles.items():
            if ob.velocity != (0.0, 0.0, 0.0):
                c = tuple(ci + vi * dt for ci, vi in zip(ob.center, ob.velocity))
                self._obstacles[key] = replace(ob, center=c)
                self._snapshot = None

    def snapshot(self) -> tuple[Obstacle, ...]:
        """Current obstacles; the same tuple object is returned until the set changes."""
        if self._snapshot is None:
            self._snapshot = tuple(self._obstacles.values())
        return self._snapshot


def detect(uav_position: Sequence[float], obstacles: Iterable[Obstacle],
           mode: str = "local", radius: float = 5.0) -> list[Obstacle]:
    """Global mode returns everything; local keeps obstacles whose surface is within ``radius``."""
    if mode == "global":
        return list(obstacles)
    if mode != "local":
        raise ValidationError(f"unknown detection mode {mode!r}")
    if not radius > 0:
        raise ValidationError("local detection radius must be positive")
    return [ob for ob in obstacles if ob.surface_distance(uav_position) <= radius]


def repulsion(uav_position: Sequence[float], uav_velocity: Sequence[float],
              nearby: Iterable[Obstacle], gain: float, saturation: float,
              d_min: float = D_MIN) -> np.ndarray:
    """Inverse-square velocity correction pushing away from nearby obstacles.

    Each obstacle contributes ``gain * d_hat / max(d, d_min)**2`` where
    ``d_hat`` points from the obstacle center to the UAV and ``d`` is the
    surface distance. The summed vector is clamped to norm ``saturation``.
    ``uav_velocity`` is accepted for interface symmetry with other avoidance
    laws and is unused by this one.
    """
    p = np.asarray(uav_position, dtype=float)
    total = np.zeros(3)
    for ob in nearby:
        diff = p - np.asarray(ob.center)
        dist = float(np.linalg.norm(diff))
        if dist == 0.0:
            continue
        d = max(dist - ob.radius, 0.0)
        total += gain * (diff / dist) / max(d * d, d_min * d_min)
    norm = float(np.linalg.norm(total))
    if norm > saturation:
        total *= saturation / norm
    return total


# -- sensors ---------------------------------------------------------------

SENSOR_CHANNELS = {"gps": 3, "imu": 6, "sonar": 1}


@dataclass(frozen=True)
class SensorModel:
    kind: str
    rate: float
    noise_std: tuple[float, ...] = ()
    bias: tuple[float, ...] = ()
    dropout_probability: float = 0.0
    max_range: float = SONAR_MAX_RANGE

    def __post_init__(self):
        if self.kind not in SENSOR_CHANNELS:
            raise ValidationError(f"unknown sensor kind {self.kind!r}")
        n = SENSOR_CHANNELS[self.kind]
        object.__setattr__(self, "noise_std", _channels(self.noise_std, n, "noise_std"))
        object.__setattr__(self, "bias", _channels(self.bias, n, "bias"))
        if not self.rate > 0:
            raise ValidationError("sensor rate must be positive")
        if min(self.noise_std) < 0:
            raise ValidationError("noise_std must be nonnegative")
        if not 0.0 <= self.dropout_probability <= 1.0:
            raise ValidationError("dropout_probability must lie in [0, 1]")

    @property
    def channels(self) -> int:
        return SENSOR_CHANNELS[self.kind]

    def period_ticks(self, dt: float) -> int:
        return max(1, int(round(1.0 / (self.rate * dt))))


def _channels(value, n: int, name: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)):
        return (float(value),) * n
    value = tuple(float(v) for v in value)
    if not value:
        return (0.0,) * n
    if len(value) == 1:
        return value * n
    if len(value) != n:
        raise ValidationError(f"{name} needs 1 or {n} entries")
    return value


@dataclass(frozen=True)
class GpsReading:
    position: Vec3


@dataclass(frozen=True)
class ImuReading:
    accel: Vec3
    gyro: Vec3


@dataclass(frozen=True)
class SonarReading:
    range: float


def rotation_body_to_world(phi: float, theta: float, psi: float) -> np.ndarray:
    """Z-Y-X Euler rotation matching the thrust direction used by the dynamics."""
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def euler_rates_to_body(phi: float, theta: float, rates: Sequence[float]) -> np.ndarray:
    dphi, dtheta, dpsi = rates
    return np.array([
        dphi - math.sin(theta) * dpsi,
        math.cos(phi) * dtheta + math.sin(phi) * math.cos(theta) * dpsi,
        -math.sin(phi) * dtheta + math.cos(phi) * math.cos(theta) * dpsi,
    ])


def body_rates_to_euler(phi: float, theta: float, body: Sequence[float]) -> np.ndarray:
    p, q, r = body
    sf, cf = math.sin(phi), math.cos(phi)
    tt, ct = math.tan(theta), math.cos(theta)
    return np.array([
        p + sf * tt * q + cf * tt * r,
        cf * q - sf * r,
        (sf * q + cf * r) / ct,
    ])


def specific_force(state: UavState, control: ControlInput, params: VehicleParams) -> np.ndarray:
    """Accelerometer reading in body frame: R^T (a - g_vec), g_vec = (0, 0, g)."""
    acc = vehicle.derivative(state, control, params)[6:9]
    R = rotation_body_to_world(state.phi, state.theta, state.psi)
    return R.T @ (acc - np.array([0.0, 0.0, params.g]))


def sense(ground_truth: UavState, model: SensorModel, rng: np.random.Generator, tick: int,
          dt: float = 0.01, control: Optional[ControlInput] = None,
          params: Optional[VehicleParams] = None):
    """Return one emulated reading, or None when unscheduled or dropped out.

    The RNG is consumed in a fixed order per emitted sample (dropout draw
    first, then one normal per channel) so streams stay reproducible.
    """
    if tick % model.period_ticks(dt):
        return None
    if model.dropout_probability > 0.0 and rng.random() < model.dropout_probability:
        return None
    noise = rng.standard_normal(model.channels)
    vals = _clean_values(ground_truth, model, control, params)
    out = [v + b + s * n for v, b, s, n in zip(vals, model.bias, model.noise_std, noise)]
    if model.kind == "gps":
        return GpsReading(tuple(out))
    if model.kind == "imu":
        return ImuReading(tuple(out[:3]), tuple(out[3:]))
    return SonarReading(min(max(out[0], 0.0), model.max_range))


def _clean_values(s: UavState, model: SensorModel, control, params) -> list[float]:
    if model.kind == "gps":
        return [s.x, s.y, s.z]
    if model.kind == "sonar":
        return [-s.z]
    if params is None:
        params = VehicleParams()
    if control is None:
        control = vehicle.hover_input(params)
    f = specific_force(s, control, params)
    w = euler_rates_to_body(s.phi, s.theta, (s.p_rate, s.q_rate, s.r_rate))
    return [float(v) for v in f] + [float(v) for v in w]
