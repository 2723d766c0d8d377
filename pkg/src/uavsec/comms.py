"""Inter-UAV swarm messages and the Remote ID broadcast format.

Local frame is NED (x north, y east, z down). Geodesy is flat-earth about a
configured origin: one degree of latitude is 111,320 m and longitude degrees
shrink by ``cos(origin latitude)``. The conversion is exactly invertible.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ValidationError
from .vehicle import UavState

METERS_PER_DEG_LAT = 111_320.0
EMERGENCY_STATUSES = ("none", "emergency")


@dataclass(frozen=True)
class GeoOrigin:
    lat: float
    lon: float


@dataclass(frozen=True)
class RemoteIdConfig:
    uas_id: str
    origin: GeoOrigin = GeoOrigin(0.0, 0.0)
    operator: GeoOrigin = GeoOrigin(0.0, 0.0)
    rate: float = 1.0
    emergency_status: str = "none"


@dataclass(frozen=True)
class RemoteIdMsg:
    uas_id: str
    latitude: float
    longitude: float
    altitude: float
    speed: float
    heading: float
    timestamp: float
    operator_latitude: float
    operator_longitude: float
    emergency_status: str = "none"

    def __post_init__(self):
        validate_remote_id(self)


def _normalize_lon(lon: float) -> float:
    lon = math.fmod(lon + 180.0, 360.0)
    if lon <= 0.0:
        lon += 360.0
    return lon - 180.0


def local_to_geo(north: float, east: float, origin: GeoOrigin) -> tuple[float, float]:
    lat = origin.lat + north / METERS_PER_DEG_LAT
    lon = origin.lon + east / (METERS_PER_DEG_LAT * math.cos(math.radians(origin.lat)))
    if not -180.0 < lon <= 180.0:
        lon = _normalize_lon(lon)
    return lat, lon


def geo_to_local(lat: float, lon: float, origin: GeoOrigin) -> tuple[float, float]:
    north = (lat - origin.lat) * METERS_PER_DEG_LAT
    dlon = lon - origin.lon
    if dlon > 180.0:
        dlon -= 360.0
    elif dlon <= -180.0:
        dlon += 360.0
    east = dlon * METERS_PER_DEG_LAT * math.cos(math.radians(origin.lat))
    return north, east


def heading_deg(v_north: float, v_east: float) -> float:
    """Course over ground in degrees clockwise from north, in [0, 360)."""
    h = math.degrees(math.atan2(v_east, v_north)) % 360.0
    return 0.0 if h >= 360.0 else h


def remote_id_from_state(state: UavState, config: RemoteIdConfig, timestamp: float) -> RemoteIdMsg:
    lat, lon = local_to_geo(state.x, state.y, config.origin)
    return RemoteIdMsg(
        uas_id=config.uas_id,
        latitude=lat,
        longitude=lon,
        altitude=-state.z,
        speed=math.hypot(state.vx, state.vy),
        heading=heading_deg(state.vx, state.vy),
        timestamp=timestamp,
        operator_latitude=config.operator.lat,
        operator_longitude=config.operator.lon,
        emergency_status=config.emergency_status,
    )


def validate_remote_id(m: RemoteIdMsg) -> None:
    def bad(name, why):
        raise ValidationError(why, f"/{name}")

    for f in fields(m):
        v = getattr(m, f.name)
        if f.type in ("float",) and not (isinstance(v, (int, float)) and math.isfinite(v)):
            bad(f.name, "must be a finite number")
    if not isinstance(m.uas_id, str) or not m.uas_id:
        bad("uas_id", "must be a nonempty string")
    if not -90.0 <= m.latitude <= 90.0:
        bad("latitude", f"{m.latitude} outside [-90, 90]")
    if not -180.0 < m.longitude <= 180.0:
        bad("longitude", f"{m.longitude} outside (-180, 180]")
    if not -90.0 <= m.operator_latitude <= 90.0:
        bad("operator_latitude", f"{m.operator_latitude} outside [-90, 90]")
    if not -180.0 < m.operator_longitude <= 180.0:
        bad("operator_longitude", f"{m.operator_longitude} outside (-180, 180]")
    if not 0.0 <= m.heading < 360.0:
        bad("heading", f"{m.heading} outside [0, 360)")
    if not m.speed >= 0.0:
        bad("speed", "must be nonnegative")
    if m.emergency_status not in EMERGENCY_STATUSES:
        bad("emergency_status", f"must be one of {EMERGENCY_STATUSES}")


def encode(m: RemoteIdMsg) -> str:
    """JSON wire form with the exact dataclass field names."""
    return json.dumps(asdict(m), separators=(",", ":"), allow_nan=False)


def decode(wire: str | bytes) -> RemoteIdMsg:
    try:
        obj = json.loads(wire)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed Remote ID message: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError("Remote ID message must be a JSON object")
    names = [f.name for f in fields(RemoteIdMsg)]
    for name in names:
        if name not in obj and name != "emergency_status":
            raise ValidationError("missing field", f"/{name}")
    extra = set(obj) - set(names)
    if extra:
        raise ValidationError(f"unknown fields {sorted(extra)}")
    kwargs = {}
    for f in fields(RemoteIdMsg):
        if f.name not in obj:
            continue
        v = obj[f.name]
        if f.type == "float":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError("must be a number", f"/{f.name}")
            v = float(v)
        kwargs[f.name] = v
    return RemoteIdMsg(**kwargs)


def reconstruct_track(messages, origin: GeoOrigin) -> np.ndarray:
    """Flight path (t, north, east, down) recovered from broadcast records alone."""
    rows = []
    for m in sorted(messages, key=lambda m: m.timestamp):
        n, e = geo_to_local(m.latitude, m.longitude, origin)
        rows.append((m.timestamp, n, e, -m.altitude))
    return np.array(rows).reshape(-1, 4)


@dataclass(frozen=True)
class SwarmStateMsg:
    uav_id: str
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    sim_time: float

    def __post_init__(self):
        vals = (*self.position, *self.velocity, self.sim_time)
        if len(self.position) != 3 or len(self.velocity) != 3 or not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"swarm message from {self.uav_id!r} has non-finite or malformed fields")
