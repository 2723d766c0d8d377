"""The closed set of message kinds carried on the bus, with a JSON codec.

Every kind is a frozen dataclass. Payloads serialize to JSON objects whose
first key is ``"kind"`` followed by the fields in declaration order; floats
use Python's shortest round-trip repr, so decode(encode(m)) == m bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass
from typing import Any, Optional, Union

from .comms import RemoteIdMsg, SwarmStateMsg
from .errors import BusError, ValidationError
from .planner import Path, PathSample, Trajectory
from .vehicle import ControlInput, UavState
from .world import Obstacle

Vec3 = tuple[float, float, float]


@dataclass(frozen=True)
class GpsFix:
    position: Vec3
    stamp: float


@dataclass(frozen=True)
class ImuSample:
    accel: Vec3
    gyro: Vec3
    stamp: float


@dataclass(frozen=True)
class SonarRange:
    range: float
    stamp: float


@dataclass(frozen=True)
class ObstacleList:
    obstacles: tuple[Obstacle, ...]


@dataclass(frozen=True)
class ControlCmd:
    ft: float
    tau_x: float
    tau_y: float
    tau_z: float
    saturated: bool = False

    def as_input(self) -> ControlInput:
        return ControlInput(self.ft, self.tau_x, self.tau_y, self.tau_z)


@dataclass(frozen=True)
class TrackingStatus:
    reference_position: Vec3
    reference_velocity: Vec3
    reference_yaw: float
    error_norm: float
    position_error: float
    avoidance: Vec3 = (0.0, 0.0, 0.0)
    saturated: bool = False


@dataclass(frozen=True)
class PredictedPathMsg:
    target: str
    model: str
    times: tuple[float, ...]
    positions: tuple[Vec3, ...]
    fallback: bool = False


@dataclass(frozen=True)
class AttackStatus:
    attack_id: str
    uav_id: str
    active: bool


@dataclass(frozen=True)
class AttackCommand:
    armed: bool


@dataclass(frozen=True)
class Ack:
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class StepRequest:
    state: UavState
    input: ControlInput
    dt: float


@dataclass(frozen=True)
class StepResponse:
    state: UavState


@dataclass(frozen=True)
class MissionGoal:
    start: UavState
    goal: UavState
    T: float
    feedback_period: float = 1.0


@dataclass(frozen=True)
class MissionFeedback:
    t: float
    position: Vec3
    position_error: float


@dataclass(frozen=True)
class MissionResult:
    status: str
    t: float
    position_error: float


@dataclass(frozen=True)
class ServiceFault:
    error_type: str
    message: str


MESSAGE_KINDS: dict[str, type] = {cls.__name__: cls for cls in (
    UavState, ControlInput, ControlCmd, TrackingStatus, GpsFix, ImuSample, SonarRange,
    ObstacleList, Path, PredictedPathMsg, SwarmStateMsg, RemoteIdMsg, AttackStatus,
    AttackCommand, Ack, StepRequest, StepResponse, MissionGoal, MissionFeedback,
    MissionResult, ServiceFault,
)}


def kind_of(name_or_cls) -> type:
    if isinstance(name_or_cls, str):
        try:
            return MESSAGE_KINDS[name_or_cls]
        except KeyError:
            raise BusError(f"unknown message kind {name_or_cls!r}") from None
    if name_or_cls not in MESSAGE_KINDS.values():
        raise BusError(f"unknown message kind {name_or_cls!r}")
    return name_or_cls


# -- codec -------------------------------------------------------------------

_HINTS: dict[type, list[tuple[str, Any]]] = {}


def _fields(cls) -> list[tuple[str, Any]]:
    try:
        return _HINTS[cls]
    except KeyError:
        hints = typing.get_type_hints(cls)
        out = [(f.name, hints[f.name]) for f in dataclasses.fields(cls)]
        _HINTS[cls] = out
        return out


def _float(v):
    v = float(v)
    if not math.isfinite(v):
        raise ValidationError(f"non-finite float {v} cannot be serialized")
    return v


def _identity(v):
    return v


_ENCODERS: dict[Any, Any] = {}


def _encoder(hint):
    """Build (once per type hint) a function mapping a value to its JSON-native form."""
    enc = _ENCODERS.get(hint)
    if enc is not None:
        return enc
    if hint is float:
        enc = _float
    elif hint is int or hint is bool or hint is str:
        enc = _identity
    elif dataclasses.is_dataclass(hint):
        parts = [(name, _encoder(h)) for name, h in _fields(hint)]
        if all(e is _float for _, e in parts):
            names = [n for n, _ in parts]
            def enc(v, names=names):
                return {n: _float(getattr(v, n)) for n in names}
        else:
            def enc(v, parts=parts):
                return {n: e(getattr(v, n)) for n, e in parts}
    else:
        origin = typing.get_origin(hint)
        args = typing.get_args(hint)
        if origin is tuple and len(args) == 2 and args[1] is Ellipsis:
            inner = _encoder(args[0])
            def enc(v, inner=inner):
                return [inner(x) for x in v]
        elif origin is tuple:
            encs = [_encoder(a) for a in args]
            def enc(v, encs=encs):
                return [e(x) for e, x in zip(encs, v)]
        elif origin in (Union, types.UnionType):
            inner = _encoder([a for a in args if a is not type(None)][0])
            def enc(v, inner=inner):
                return None if v is None else inner(v)
        else:
            enc = _identity
    _ENCODERS[hint] = enc
    return enc


def _to_json(value, hint):
    return _encoder(hint)(value)


def _from_json(value, hint):
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"expected number, got {value!r}")
        return float(value)
    if hint is int:
        return int(value)
    if hint is bool or hint is str:
        return value
    if dataclasses.is_dataclass(hint):
        return hint(**{name: _from_json(value[name], h)
                       for name, h in _fields(hint) if name in value})
    origin = typing.get_origin(hint)
    if origin is tuple:
        args = typing.get_args(hint)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_from_json(v, args[0]) for v in value)
        return tuple(_from_json(v, h) for v, h in zip(value, args))
    if origin in (Union, types.UnionType):
        if value is None:
            return None
        inner = [a for a in typing.get_args(hint) if a is not type(None)][0]
        return _from_json(value, inner)
    return value


def to_payload(msg) -> dict:
    cls = type(msg)
    out = {"kind": cls.__name__}
    out.update(_to_json(msg, cls))
    return out


def from_payload(data: dict):
    if not isinstance(data, dict) or "kind" not in data:
        raise ValidationError("payload must be an object with a 'kind' field")
    cls = kind_of(data["kind"])
    body = {k: v for k, v in data.items() if k != "kind"}
    return _from_json(body, cls)


_JSON = json.JSONEncoder(separators=(",", ":"), allow_nan=False)


def dumps(obj) -> str:
    return _JSON.encode(obj)


def _flat_template(cls):
    """A %-format template for kinds made only of floats, bools and fixed float tuples.

    Produces exactly what ``dumps(to_payload(msg))`` would, several times faster.
    """
    getters, parts = [], []
    for name, h in _fields(cls):
        if h is float:
            getters.append((name, None, False))
            parts.append(f'"{name}":%r')
        elif h is bool:
            getters.append((name, None, True))
            parts.append(f'"{name}":%s')
        elif typing.get_origin(h) is tuple and all(a is float for a in typing.get_args(h)):
            n = len(typing.get_args(h))
            getters.append((name, n, False))
            parts.append(f'"{name}":[' + ",".join(["%r"] * n) + "]")
        else:
            return None
    return '{"kind":"%s",' % cls.__name__ + ",".join(parts) + "}", getters


_TEMPLATES: dict[type, Any] = {}


def encode_payload(msg) -> str:
    cls = type(msg)
    tpl = _TEMPLATES.get(cls, False)
    if tpl is False:
        tpl = _TEMPLATES[cls] = _flat_template(cls)
    if tpl is None:
        return dumps(to_payload(msg))
    fmt, getters = tpl
    vals = []
    for name, n, is_bool in getters:
        v = getattr(msg, name)
        if is_bool:
            vals.append("true" if v else "false")
        elif n is None:
            vals.append(float(v))
        else:
            if len(v) != n:
                raise ValidationError(f"{cls.__name__}.{name} needs {n} components")
            vals.extend(float(x) for x in v)
    for v in vals:
        if v.__class__ is float and not math.isfinite(v):
            raise ValidationError(f"non-finite float {v} cannot be serialized")
    return fmt % tuple(vals)


__all__ = [
    "GpsFix", "ImuSample", "SonarRange", "ObstacleList", "ControlCmd", "TrackingStatus",
    "PredictedPathMsg", "AttackStatus", "AttackCommand", "Ack", "StepRequest", "StepResponse",
    "MissionGoal", "MissionFeedback", "MissionResult", "ServiceFault", "MESSAGE_KINDS",
    "kind_of", "to_payload", "from_payload", "encode_payload", "UavState", "ControlInput",
    "Path", "PathSample", "Trajectory", "Obstacle", "RemoteIdMsg", "SwarmStateMsg",
]
