"""Future-path predictors for an observed target and an EKF template."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import vehicle, world
from .errors import FilterDivergence, ValidationError
from .planner import sample_times
from .vehicle import ControlInput, UavState, VehicleParams


@dataclass(frozen=True)
class TrackHistory:
    times: tuple[float, ...]
    positions: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        if len(self.times) != len(self.positions):
            raise ValidationError("times and positions differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValidationError("observation times must be strictly increasing")

    @classmethod
    def from_observations(cls, obs: Iterable[tuple[float, Sequence[float]]]) -> "TrackHistory":
        obs = list(obs)
        return cls(tuple(float(t) for t, _ in obs),
                   tuple(tuple(float(c) for c in p) for _, p in obs))

    def __len__(self) -> int:
        return len(self.times)

    def last(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.times[-n:]), np.array(self.positions[-n:])


@dataclass(frozen=True)
class PredictedPath:
    times: np.ndarray
    positions: np.ndarray
    fallback: bool = False


def _offsets(horizon: float, resolution: float) -> list[float]:
    return sample_times(horizon, resolution)[1:]


def _require(history: TrackHistory, n: int) -> None:
    if len(history) < n:
        raise ValidationError(f"predictor needs at least {n} observations, got {len(history)}")


def predict_linear(history: TrackHistory, horizon: float, resolution: float) -> PredictedPath:
    """Constant-velocity extrapolation from the latest observation pair."""
    _require(history, 2)
    t, p = history.last(2)
    v = (p[1] - p[0]) / (t[1] - t[0])
    taus = _offsets(horizon, resolution)
    pos = np.array([p[1] + v * tau for tau in taus])
    return PredictedPath(t[1] + np.array(taus), pos)


def infer_thrust(accel: np.ndarray, params: VehicleParams) -> tuple[float, float, float]:
    """Invert the translational dynamics for (ft, phi, theta) at zero yaw.

    The thrust vector is ``m * (g e_z - a)``; at small angles this reduces
    to ``ft = m (g - a_z)`` and ``theta = -a_x / g``.
    """
    F = params.m * (np.array([0.0, 0.0, params.g]) - accel)
    ft = float(np.linalg.norm(F))
    if ft < 1e-12:
        return 0.0, 0.0, 0.0
    n = F / ft
    phi = math.asin(max(-1.0, min(1.0, -n[1])))
    theta = math.atan2(n[0], n[2])
    return ft, phi, theta


def predict_dynamics(history: TrackHistory, assumed_params: VehicleParams,
                     horizon: float, resolution: float, substep: float = 0.01) -> PredictedPath:
    """Propagate the quadrotor model holding the thrust/attitude implied by the
    latest finite-difference acceleration. Falls back to ``predict_linear``
    (``fallback=True``) when the implied thrust exceeds ``ft_max``."""
    _require(history, 3)
    t, p = history.last(3)
    v01 = (p[1] - p[0]) / (t[1] - t[0])
    v12 = (p[2] - p[1]) / (t[2] - t[1])
    accel = 2.0 * (v12 - v01) / (t[2] - t[0])
    v_now = v12 + accel * (t[2] - t[1]) / 2.0
    ft, phi, theta = infer_thrust(accel, assumed_params)
    if ft > assumed_params.ft_max:
        lin = predict_linear(history, horizon, resolution)
        return PredictedPath(lin.times, lin.positions, fallback=True)

    state = UavState(*p[2], phi, theta, 0.0, *v_now, 0.0, 0.0, 0.0)
    u = ControlInput(ft)
    elapsed = 0.0
    out = []
    taus = _offsets(horizon, resolution)
    for tau in taus:
        while tau - elapsed > 1e-12:
            h = min(substep, tau - elapsed)
            state = vehicle.step(state, u, assumed_params, h)
            elapsed += h
        elapsed = tau
        out.append([state.x, state.y, state.z])
    return PredictedPath(t[2] + np.array(taus), np.array(out))


def predict_obstacle_aware(history: TrackHistory, obstacles: Sequence[world.Obstacle],
                           gain: float, horizon: float, resolution: float,
                           saturation: float = math.inf) -> PredictedPath:
    """Constant-velocity propagation bent by the same repulsion law our UAVs use."""
    _require(history, 2)
    t, p = history.last(2)
    v = (p[1] - p[0]) / (t[1] - t[0])
    dev = np.zeros(3)
    prev_tau = 0.0
    out = []
    taus = _offsets(horizon, resolution)
    for tau in taus:
        here = p[1] + v * prev_tau + dev
        if obstacles:
            dev = dev + world.repulsion(here, v, obstacles, gain, saturation) * (tau - prev_tau)
        out.append(p[1] + v * tau + dev)
        prev_tau = tau
    return PredictedPath(t[1] + np.array(taus), np.array(out))


# -- EKF template ------------------------------------------------------------

@dataclass(frozen=True)
class EkfState:
    mean: np.ndarray
    covariance: np.ndarray
    process_noise: np.ndarray
    measurement_noise: np.ndarray


def numeric_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = eps
        J[:, j] = (np.asarray(f(x + dx)) - np.asarray(f(x - dx))) / (2 * eps)
    return J


def constant_velocity(x: np.ndarray, dt: float, u: Optional[np.ndarray] = None) -> np.ndarray:
    """Position += velocity*dt; an optional world acceleration ``u`` is integrated exactly."""
    out = np.array(x, dtype=float)
    if u is None:
        out[:3] = x[:3] + x[3:6] * dt
    else:
        out[:3] = x[:3] + x[3:6] * dt + 0.5 * np.asarray(u) * dt * dt
        out[3:6] = x[3:6] + np.asarray(u) * dt
    return out


def position_measurement(x: np.ndarray) -> np.ndarray:
    return x[:3]


def _check_pd(P: np.ndarray) -> None:
    if not np.all(np.isfinite(P)) or np.min(np.linalg.eigvalsh(P)) <= 0.0:
        raise FilterDivergence("covariance is no longer positive definite")


class ExtendedKalmanFilter:
    """EKF with pluggable transition and measurement models.

    Jacobians are numeric central differences unless explicit Jacobian
    callables are given. ``process_noise`` is added once per predict step.
    """

    def __init__(self, transition=constant_velocity, measurement=position_measurement,
                 transition_jacobian=None, measurement_jacobian=None, eps: float = 1e-6):
        self.transition = transition
        self.measurement = measurement
        self.transition_jacobian = transition_jacobian
        self.measurement_jacobian = measurement_jacobian
        self.eps = eps

    def predict(self, state: EkfState, dt: float, u=None) -> EkfState:
        f = lambda x: self.transition(x, dt, u)
        F = (self.transition_jacobian(state.mean, dt, u) if self.transition_jacobian
             else numeric_jacobian(f, state.mean, self.eps))
        mean = f(state.mean)
        P = F @ state.covariance @ F.T + state.process_noise
        P = 0.5 * (P + P.T)
        _check_pd(P)
        return EkfState(mean, P, state.process_noise, state.measurement_noise)

    def update(self, state: EkfState, z, measurement=None, noise=None,
               measurement_jacobian=None) -> tuple[EkfState, np.ndarray, np.ndarray]:
        """Measurement update; returns (new state, innovation, innovation covariance)."""
        h = measurement or self.measurement
        Rm = state.measurement_noise if noise is None else np.atleast_2d(noise)
        jac = measurement_jacobian or (None if measurement else self.measurement_jacobian)
        H = jac(state.mean) if jac else numeric_jacobian(h, state.mean, self.eps)
        H = np.atleast_2d(H)
        nu = np.atleast_1d(np.asarray(z, dtype=float) - np.asarray(h(state.mean)))
        P = state.covariance
        S = H @ P @ H.T + Rm
        S = 0.5 * (S + S.T)
        K = np.linalg.solve(S, H @ P).T
        mean = state.mean + K @ nu
        I_KH = np.eye(P.shape[0]) - K @ H
        P = I_KH @ P @ I_KH.T + K @ Rm @ K.T
        P = 0.5 * (P + P.T)
        _check_pd(P)
        return EkfState(mean, P, state.process_noise, state.measurement_noise), nu, S

    def step(self, state: EkfState, dt: float, measurement=None, u=None) -> EkfState:
        state = self.predict(state, dt, u)
        if measurement is not None:
            state, _, _ = self.update(state, measurement)
        return state


def cv_jacobian(x, dt, u=None):
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    return F


def position_jacobian(x):
    H = np.zeros((3, 6))
    H[:, :3] = np.eye(3)
    return H


_DEFAULT_FILTER = ExtendedKalmanFilter()


def ekf_step(state: EkfState, dt: float, measurement: Optional[Sequence[float]] = None) -> EkfState:
    """Constant-velocity predict plus optional position-only update."""
    return _DEFAULT_FILTER.step(state, dt, measurement)


def initial_ekf_state(position=(0.0, 0.0, 0.0), velocity=(0.0, 0.0, 0.0),
                      pos_var: float = 1.0, vel_var: float = 1.0,
                      q: float = 1e-4, r: float = 1.0) -> EkfState:
    mean = np.concatenate([np.asarray(position, float), np.asarray(velocity, float)])
    P = np.diag([pos_var] * 3 + [vel_var] * 3)
    return EkfState(mean, P, q * np.eye(6), r * np.eye(3))
