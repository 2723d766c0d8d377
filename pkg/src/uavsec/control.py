"""LQR synthesis about hover and the closed-loop tracking law.

The continuous algebraic Riccati equation is solved by Newton-Kleinman
iteration. Each Newton step is a Lyapunov solve; the initial stabilizing
gain comes from Bass's eigenvalue-shifted Lyapunov construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from operator import mul
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from . import vehicle
from .errors import NumericalDivergence, RiccatiError, ValidationError
from .planner import Path, Trajectory
from .vehicle import ControlInput, UavState, VehicleParams, clamp_input, wrap_angle


@dataclass(frozen=True)
class LqrWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValidationError("Q must be square")
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValidationError("R must be square")
        if np.max(np.abs(Q - Q.T), initial=0.0) > 1e-12:
            raise ValidationError("Q must be symmetric")
        if np.max(np.abs(R - R.T), initial=0.0) > 1e-12:
            raise ValidationError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise ValidationError("Q must be positive semidefinite")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ValidationError("R must be positive definite") from None


WEIGHT_PRESETS: dict[str, LqrWeights] = {
    "default": LqrWeights(
        np.diag([10, 10, 10, 5, 5, 5, 1, 1, 1, 1, 1, 1]).astype(float),
        np.diag([0.1, 10, 10, 10]).astype(float),
    ),
    "identity": LqrWeights(np.eye(12), np.eye(4)),
    "gentle": LqrWeights(
        np.diag([2, 2, 2, 5, 5, 5, 1, 1, 1, 1, 1, 1]).astype(float),
        np.diag([1.0, 20, 20, 20]).astype(float),
    ),
}


def weights_preset(name: str) -> LqrWeights:
    try:
        return WEIGHT_PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown weight preset {name!r}") from None


@dataclass(frozen=True)
class LqrGain:
    K: np.ndarray
    P: np.ndarray
    residual: float
    iterations: int = 0

    @cached_property
    def rows(self) -> tuple[tuple[float, ...], ...]:
        """K as nested float tuples, for the per-tick control law."""
        return tuple(tuple(float(k) for k in row) for row in self.K)


def care_residual(A, B, Q, R, P) -> float:
    """Max-abs entry of A'P + PA - P B R^-1 B' P + Q."""
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.max(np.abs(res)))


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(M).real))


def bootstrap_gain(A: np.ndarray, B: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Stabilizing gain from a shifted Lyapunov solve (Bass's construction).

    With ``a = A + alpha*I`` anti-stable, ``a Z + Z a' = 2 B R^-1 B'`` has a
    positive definite solution iff (A, B) is controllable, and
    ``K = R^-1 B' Z^-1`` places every closed-loop eigenvalue left of -alpha.
    """
    n = A.shape[0]
    eig = np.linalg.eigvals(A)
    alpha = max(0.0, float(np.max(-eig.real))) + 1.0
    BRB = B @ np.linalg.solve(R, B.T)
    Z = solve_continuous_lyapunov(A + alpha * np.eye(n), 2.0 * BRB)
    Z = 0.5 * (Z + Z.T)
    try:
        np.linalg.cholesky(Z)
    except np.linalg.LinAlgError:
        raise RiccatiError("(A, B) is not controllable; cannot bootstrap a stabilizing gain") from None
    return np.linalg.solve(R, B.T @ np.linalg.inv(Z))


def solve_care(A, B, Q, R, *, tol: float = 1e-8, max_iter: int = 100,
               K0: Optional[np.ndarray] = None) -> LqrGain:
    """Stabilizing solution of the continuous algebraic Riccati equation.

    Raises RiccatiError when the initial gain is not stabilizing or the
    residual does not reach ``tol`` within ``max_iter`` Newton steps.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, m = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
        raise ValidationError("inconsistent dimensions for A, B, Q, R")

    K = bootstrap_gain(A, B, R) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    if spectral_abscissa(A - B @ K) >= 0:
        raise RiccatiError("initial gain is not stabilizing")

    best = None
    for it in range(1, max_iter + 1):
        Acl = A - B @ K
        P = solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P = 0.5 * (P + P.T)
        K = np.linalg.solve(R, B.T @ P)
        res = care_residual(A, B, Q, R, P)
        if best is None or res < best[2]:
            best = (K, P, res)
        if res <= tol:
            return LqrGain(K, P, res, it)
    raise RiccatiError(f"Newton-Kleinman did not converge: residual {best[2]:.3e} after {max_iter} steps")


def lqr_hover(params: VehicleParams, weights: LqrWeights, epsilon: float = 1e-6
              ) -> tuple[LqrGain, ControlInput]:
    A, B, u_hover = vehicle.linearize_hover(params, epsilon)
    return solve_care(A, B, weights.Q, weights.R), u_hover


@dataclass(frozen=True)
class Reference:
    position: Sequence[float]
    velocity: Sequence[float]
    acceleration: Sequence[float] = (0.0, 0.0, 0.0)
    yaw: float = 0.0


def reference_vector(ref: Reference) -> np.ndarray:
    p, v = ref.position, ref.velocity
    return np.array([p[0], p[1], p[2], 0.0, 0.0, ref.yaw,
                     v[0], v[1], v[2], 0.0, 0.0, 0.0], dtype=float)


def error_list(state: UavState, ref: Reference) -> list[float]:
    """x - x_ref as a plain list, Euler-angle entries wrapped."""
    p, v = ref.position, ref.velocity
    e = [state.x - p[0], state.y - p[1], state.z - p[2],
         wrap_angle(state.phi), wrap_angle(state.theta), wrap_angle(state.psi - ref.yaw),
         state.vx - v[0], state.vy - v[1], state.vz - v[2],
         state.p_rate, state.q_rate, state.r_rate]
    return e


def tracking_error(state: UavState, ref: Reference) -> np.ndarray:
    return np.array(error_list(state, ref))


def control_law(gain: LqrGain, state: UavState, reference: Reference,
                u_hover: ControlInput, limits: VehicleParams,
                feedforward: bool = False) -> tuple[ControlInput, bool]:
    """u = clamp(u_hover - K (x - x_ref)); returns the input and a saturation flag.

    With ``feedforward`` the thrust additionally gets ``m * (-a_ref_z)``.
    """
    e = error_list(state, reference)
    ft, tx, ty, tz = (h - sum(map(mul, row, e))
                      for h, row in zip((u_hover.ft, u_hover.tau_x, u_hover.tau_y, u_hover.tau_z), gain.rows))
    if feedforward:
        ft += limits.m * (-reference.acceleration[2])
    return clamp_input(ControlInput(ft, tx, ty, tz), limits)


@dataclass
class TrackLog:
    t: np.ndarray
    states: np.ndarray
    references: np.ndarray
    inputs: np.ndarray
    error_norm: np.ndarray
    position_error: np.ndarray
    saturated: np.ndarray


def track(plan: Path | Trajectory, initial: UavState, params: VehicleParams,
          weights: LqrWeights, dt: float, horizon: float,
          feedforward: bool = False) -> TrackLog:
    """Closed-loop simulation of the LQR tracker along a plan, no bus involved."""
    traj = plan.trajectory if isinstance(plan, Path) else plan
    if traj is None:
        raise ValidationError("plan carries no trajectory")
    if horizon > traj.T + 1e-9:
        raise ValidationError(f"horizon {horizon} exceeds plan duration {traj.T}")
    gain, u_hover = lqr_hover(params, weights)
    n = int(round(horizon / dt))
    ts, xs, refs, us, en, pe, sat = [], [], [], [], [], [], []
    state = initial
    for k in range(n + 1):
        t = k * dt
        ev = traj.evaluate(min(t, traj.T))
        ref = Reference(ev.position, ev.velocity, ev.acceleration, ev.yaw)
        u, saturated = control_law(gain, state, ref, u_hover, params, feedforward)
        e = tracking_error(state, ref)
        ts.append(t)
        xs.append(state.as_tuple())
        refs.append(reference_vector(ref))
        us.append(u.as_array())
        en.append(float(np.linalg.norm(e)))
        pe.append(float(np.linalg.norm(e[:3])))
        sat.append(saturated)
        if k < n:
            state = vehicle.step(state, u, params, dt)
            if not state.is_finite():
                raise NumericalDivergence(f"state exploded at t={t}")
    return TrackLog(np.array(ts), np.array(xs), np.array(refs), np.array(us),
                    np.array(en), np.array(pe), np.array(sat))
