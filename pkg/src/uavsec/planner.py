"""Closed-form minimum-jerk trajectory generation.

Each axis is an independent quintic in normalized time ``s = t / T`` with
boundary position and velocity taken from the start/goal states and zero
boundary acceleration. Yaw is interpolated linearly along the shortest
angular direction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .vehicle import UavState, wrap_angle


@dataclass(frozen=True)
class PlanRequest:
    start: UavState
    goal: UavState
    T: float
    resolution: float
    max_speed: Optional[float] = None
    max_accel: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValidationError("T must be positive", "/T")
        if not (math.isfinite(self.resolution) and 0 < self.resolution <= self.T):
            raise ValidationError("resolution must lie in (0, T]", "/resolution")
        if not (self.start.is_finite() and self.goal.is_finite()):
            raise ValidationError("start and goal must be finite")


@dataclass(frozen=True)
class PathSample:
    t: float
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    acceleration: tuple[float, float, float]
    yaw: float


@dataclass(frozen=True)
class Evaluation:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    yaw: float
    clamped: bool = False


def quintic_coefficients(p0: float, v0: float, p1: float, v1: float, T: float) -> tuple[float, ...]:
    """Coefficients a0..a5 of p(s) = sum a_k s^k on s in [0, 1].

    Rest-to-rest unit displacement gives (0, 0, 0, 10, -15, 6).
    """
    d = p1 - p0 - v0 * T
    e = (v1 - v0) * T
    return (p0, v0 * T, 0.0, 10.0 * d - 4.0 * e, -15.0 * d + 7.0 * e, 6.0 * d - 3.0 * e)


def _poly(a, s):
    p = ((((a[5] * s + a[4]) * s + a[3]) * s + a[2]) * s + a[1]) * s + a[0]
    dp = (((5 * a[5] * s + 4 * a[4]) * s + 3 * a[3]) * s + 2 * a[2]) * s + a[1]
    ddp = ((20 * a[5] * s + 12 * a[4]) * s + 6 * a[3]) * s + 2 * a[2]
    return p, dp, ddp


@dataclass(frozen=True)
class Trajectory:
    """Per-axis quintic polynomials plus a linear yaw profile, valid on [0, T]."""

    coefficients: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]
    T: float
    yaw_start: float
    yaw_delta: float

    def evaluate(self, t: float) -> Evaluation:
        clamped = False
        if t < 0.0 or t > self.T:
            clamped = True
            t = min(max(t, 0.0), self.T)
        s = t / self.T
        pos, vel, acc = [], [], []
        for a in self.coefficients:
            p, dp, ddp = _poly(a, s)
            pos.append(p)
            vel.append(dp / self.T)
            acc.append(ddp / (self.T * self.T))
        yaw = wrap_angle(self.yaw_start + s * self.yaw_delta)
        return Evaluation(np.array(pos), np.array(vel), np.array(acc), yaw, clamped)

    def evaluate_checked(self, t: float) -> Evaluation:
        """Like :meth:`evaluate` but warns when ``t`` had to be clamped."""
        ev = self.evaluate(t)
        if ev.clamped:
            warnings.warn(f"t={t} outside [0, {self.T}], clamped", RuntimeWarning, stacklevel=2)
        return ev

    def to_dict(self) -> dict:
        return {
            "coefficients": [list(a) for a in self.coefficients],
            "T": self.T,
            "yaw_start": self.yaw_start,
            "yaw_delta": self.yaw_delta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        coeffs = tuple(tuple(float(c) for c in a) for a in d["coefficients"])
        return cls(coeffs, float(d["T"]), float(d["yaw_start"]), float(d["yaw_delta"]))


@dataclass(frozen=True)
class Path:
    samples: tuple[PathSample, ...]
    trajectory: Optional[Trajectory] = None
    max_speed: float = 0.0
    max_accel: float = 0.0
    violations: tuple[str, ...] = field(default_factory=tuple)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.samples])

    def velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self.samples])

    def accelerations(self) -> np.ndarray:
        return np.array([s.acceleration for s in self.samples])


def sample_times(T: float, resolution: float) -> list[float]:
    """0, res, 2*res, ... with the final sample at exactly T."""
    n = int(math.floor(T / resolution + 1e-9))
    times = [k * resolution for k in range(n + 1)]
    if abs(times[-1] - T) <= 1e-9 * max(1.0, T):
        times[-1] = T
    else:
        times.append(T)
    return times


def build_trajectory(request: PlanRequest) -> Trajectory:
    s, g = request.start, request.goal
    coeffs = (
        quintic_coefficients(s.x, s.vx, g.x, g.vx, request.T),
        quintic_coefficients(s.y, s.vy, g.y, g.vy, request.T),
        quintic_coefficients(s.z, s.vz, g.z, g.vz, request.T),
    )
    return Trajectory(coeffs, request.T, s.psi, wrap_angle(g.psi - s.psi))


def plan(request: PlanRequest) -> Path:
    """Minimum-jerk plan sampled at the requested resolution.

    Speed and acceleration limits on the request are checked after the fact;
    exceeding them is reported in ``Path.violations``, the plan itself is not
    re-optimized.
    """
    traj = build_trajectory(request)
    samples = []
    for t in sample_times(request.T, request.resolution):
        ev = traj.evaluate(t)
        samples.append(PathSample(
            t,
            tuple(float(v) for v in ev.position),
            tuple(float(v) for v in ev.velocity),
            tuple(float(v) for v in ev.acceleration),
            ev.yaw,
        ))
    vmax = max(math.sqrt(sum(c * c for c in smp.velocity)) for smp in samples)
    amax = max(math.sqrt(sum(c * c for c in smp.acceleration)) for smp in samples)
    violations = []
    if request.max_speed is not None and vmax > request.max_speed:
        violations.append("max_speed")
    if request.max_accel is not None and amax > request.max_accel:
        violations.append("max_accel")
    return Path(tuple(samples), traj, vmax, amax, tuple(violations))


def evaluate(trajectory: Trajectory, t: float) -> Evaluation:
    return trajectory.evaluate_checked(t)
