"""Quadrotor state, parameters and nonlinear rigid-body dynamics.

Axis convention: local NED frame, x north, y east, z positive *down*. Gravity
therefore enters as ``+g`` on the z axis and hover requires ``ft = m*g``.
Altitude is ``-z``.

The angular-rate states are Euler-angle rates (roll, pitch, yaw rates), not
body rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np

from .errors import NumericalDivergence, ValidationError

STATE_FIELDS = (
    "x", "y", "z", "phi", "theta", "psi",
    "vx", "vy", "vz", "p_rate", "q_rate", "r_rate",
)


def wrap_angle(a: float) -> float:
    """Map an angle onto (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class UavState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    vx: float = 0.0
    vy: float = 0.0
    vz: float = 0.0
    p_rate: float = 0.0
    q_rate: float = 0.0
    r_rate: float = 0.0

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "UavState":
        if len(values) != 12:
            raise ValidationError(f"state needs 12 entries, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=float)

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.z, self.phi, self.theta, self.psi,
                self.vx, self.vy, self.vz, self.p_rate, self.q_rate, self.r_rate)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz])

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in self.as_tuple())

    def with_(self, **changes) -> "UavState":
        return replace(self, **changes)


@dataclass(frozen=True)
class VehicleParams:
    m: float = 1.0
    g: float = 9.81
    Ix: float = 0.01
    Iy: float = 0.01
    Iz: float = 0.02
    ft_max: float = 25.0
    tau_max: float = 1.0

    def __post_init__(self):
        for name in ("m", "g", "Ix", "Iy", "Iz"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive", f"/{name}")
        if not self.ft_max > self.m * self.g:
            raise ValidationError("ft_max must exceed m*g", "/ft_max")
        if not self.tau_max >= 0:
            raise ValidationError("tau_max must be nonnegative", "/tau_max")

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g


@dataclass(frozen=True)
class ControlInput:
    ft: float = 0.0
    tau_x: float = 0.0
    tau_y: float = 0.0
    tau_z: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.ft, self.tau_x, self.tau_y, self.tau_z], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ControlInput":
        return cls(*(float(v) for v in values))


def hover_input(params: VehicleParams) -> ControlInput:
    return ControlInput(ft=params.m * params.g)


def clamp_input(u: ControlInput, params: VehicleParams) -> tuple[ControlInput, bool]:
    """Clamp to actuator limits; the flag is True when anything saturated."""
    lim = params.tau_max
    ft = min(max(u.ft, 0.0), params.ft_max)
    tx = min(max(u.tau_x, -lim), lim)
    ty = min(max(u.tau_y, -lim), lim)
    tz = min(max(u.tau_z, -lim), lim)
    if ft == u.ft and tx == u.tau_x and ty == u.tau_y and tz == u.tau_z:
        return u, False
    return ControlInput(ft, tx, ty, tz), True


def _derivative(s: Sequence[float], u: Sequence[float], p: VehicleParams) -> list[float]:
    # s and u are plain float sequences; this is the hot loop of every run.
    _, _, _, phi, theta, psi, vx, vy, vz, dphi, dtheta, dpsi = s
    ft, tx, ty, tz = u
    sphi, cphi = math.sin(phi), math.cos(phi)
    sth, cth = math.sin(theta), math.cos(theta)
    spsi, cpsi = math.sin(psi), math.cos(psi)
    k = ft / p.m
    ax = -k * (sphi * spsi + cphi * cpsi * sth)
    ay = -k * (cphi * spsi * sth - cpsi * sphi)
    az = p.g - k * (cphi * cth)
    aphi = (p.Iy - p.Iz) / p.Ix * dtheta * dpsi + tx / p.Ix
    atheta = (p.Iz - p.Ix) / p.Iy * dphi * dpsi + ty / p.Iy
    apsi = (p.Ix - p.Iy) / p.Iz * dphi * dtheta + tz / p.Iz
    return [vx, vy, vz, dphi, dtheta, dpsi, ax, ay, az, aphi, atheta, apsi]


def derivative(state: UavState, control: ControlInput, params: VehicleParams) -> np.ndarray:
    """Time derivative of the 12-dim state under the six rigid-body equations."""
    s = state.as_tuple()
    if not all(math.isfinite(v) for v in s):
        raise NumericalDivergence(f"non-finite state {s}")
    u = (control.ft, control.tau_x, control.tau_y, control.tau_z)
    return np.array(_derivative(s, u, params))


def rk4_step(s: Sequence[float], u: Sequence[float], params: VehicleParams, dt: float) -> list[float]:
    """One classical Runge-Kutta step on raw float lists (no clamping, no wrapping)."""
    h2 = 0.5 * dt
    k1 = _derivative(s, u, params)
    k2 = _derivative([a + h2 * b for a, b in zip(s, k1)], u, params)
    k3 = _derivative([a + h2 * b for a, b in zip(s, k2)], u, params)
    k4 = _derivative([a + dt * b for a, b in zip(s, k3)], u, params)
    h6 = dt / 6.0
    return [a + h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)]


def step(state: UavState, control: ControlInput, params: VehicleParams, dt: float) -> UavState:
    """Advance one fixed RK4 step after clamping the input to actuator limits.

    Euler angles are renormalized onto (-pi, pi] afterwards. Raises
    NumericalDivergence if the result is not finite.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    u, _ = clamp_input(control, params)
    s = state.as_tuple()
    nxt = rk4_step(s, (u.ft, u.tau_x, u.tau_y, u.tau_z), params, dt)
    if not all(math.isfinite(v) for v in nxt):
        raise NumericalDivergence(f"integration produced non-finite state from {s}")
    for i in (3, 4, 5):
        nxt[i] = wrap_angle(nxt[i])
    return UavState(*nxt)


def linearize_hover(params: VehicleParams, epsilon: float = 1e-6
                    ) -> tuple[np.ndarray, np.ndarray, ControlInput]:
    """Central-difference Jacobians (A, B) of the dynamics at hover."""
    u0 = hover_input(params)
    x0 = np.zeros(12)
    u0a = u0.as_array()
    A = np.empty((12, 12))
    B = np.empty((12, 4))
    for j in range(12):
        dx = np.zeros(12)
        dx[j] = epsilon
        fp = _derivative(x0 + dx, u0a, params)
        fm = _derivative(x0 - dx, u0a, params)
        A[:, j] = (np.array(fp) - np.array(fm)) / (2 * epsilon)
    for j in range(4):
        du = np.zeros(4)
        du[j] = epsilon
        fp = _derivative(x0, u0a + du, params)
        fm = _derivative(x0, u0a - du, params)
        B[:, j] = (np.array(fp) - np.array(fm)) / (2 * epsilon)
    return A, B, u0


def state_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(UavState))
