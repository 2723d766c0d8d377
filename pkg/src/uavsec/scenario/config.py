"""Scenario documents: JSON parsing, schema validation, defaults and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath
from typing import Any, Optional

import jsonschema

from ..attacks import AttackSpec, Region, Trigger
from ..comms import GeoOrigin, RemoteIdConfig
from ..control import WEIGHT_PRESETS
from ..errors import StorageError, ValidationError
from ..planner import PlanRequest
from ..vehicle import STATE_FIELDS, UavState, VehicleParams
from ..world import Obstacle, SensorModel

DEFAULT_SENSORS = (
    {"kind": "gps", "rate": 10.0, "noise_std": 0.05},
    {"kind": "imu", "rate": 100.0, "noise_std": [0.02, 0.02, 0.02, 0.002, 0.002, 0.002]},
    {"kind": "sonar", "rate": 20.0, "noise_std": 0.02},
)


def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("schema.json").read_text())


_VALIDATOR = None


def _validator():
    global _VALIDATOR
    if _VALIDATOR is None:
        _VALIDATOR = jsonschema.Draft202012Validator(schema())
    return _VALIDATOR


def pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


@dataclass(frozen=True)
class VehicleConfig:
    id: str
    params: VehicleParams
    initial: UavState
    mission: PlanRequest
    weights: str = "default"
    feedforward: bool = False
    estimator: str = "ekf"
    sensors: tuple[SensorModel, ...] = ()
    remote_id: Optional[RemoteIdConfig] = None


@dataclass(frozen=True)
class DetectionConfig:
    mode: str = "local"
    radius: float = 5.0
    gain: float = 1.0
    saturation: float = 2.0


@dataclass(frozen=True)
class SwarmConfig:
    enabled: bool = False
    rate: float = 10.0


@dataclass(frozen=True)
class PredictorConfig:
    target: str
    model: str = "linear"
    horizon: float = 2.0
    resolution: float = 0.5
    rate: float = 1.0


@dataclass(frozen=True)
class ScheduleEntry:
    t: float
    service: str = ""
    request: Optional[dict] = None
    action: str = ""
    goal: Optional[dict] = None
    cancel: str = ""


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    dt: float
    duration: float
    seed: int
    mode: str
    vehicles: tuple[VehicleConfig, ...]
    obstacles: tuple[Obstacle, ...] = ()
    attacks: tuple[AttackSpec, ...] = ()
    detection: DetectionConfig = DetectionConfig()
    origin: GeoOrigin = GeoOrigin(0.0, 0.0)
    operator: GeoOrigin = GeoOrigin(0.0, 0.0)
    swarm: SwarmConfig = SwarmConfig()
    predictors: tuple[PredictorConfig, ...] = ()
    schedule: tuple[ScheduleEntry, ...] = ()
    outputs: dict = field(default_factory=dict)
    document: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_ticks(self) -> int:
        """Index of the last tick; ticks run 0..n_ticks inclusive."""
        return int(round(self.duration / self.dt))

    @property
    def hash(self) -> str:
        return scenario_hash(self.document)

    def vehicle(self, uav_id: str) -> VehicleConfig:
        for v in self.vehicles:
            if v.id == uav_id:
                return v
        raise KeyError(uav_id)


# -- hashing -----------------------------------------------------------------

def _normalize_numbers(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, float):
        if obj.is_integer() and abs(obj) < 2 ** 53:
            return int(obj)
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, dict):
        return {k: _normalize_numbers(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize_numbers(v) for v in obj]
    return obj


def canonical_text(document: dict) -> str:
    return json.dumps(_normalize_numbers(document), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def scenario_hash(document: dict) -> str:
    """Stable hash of the normalized document; output locations are excluded."""
    doc = {k: v for k, v in document.items() if k != "outputs"}
    return hashlib.sha256(canonical_text(doc).encode()).hexdigest()


# -- loading -------------------------------------------------------------------

def load(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    try:
        text = FsPath(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read scenario {path}: {exc}") from exc
    return loads(text, overrides)


def loads(text: str, overrides: Optional[dict] = None) -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_document(doc, overrides)


def from_document(doc: dict, overrides: Optional[dict] = None) -> ScenarioConfig:
    doc = copy.deepcopy(doc)
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    errors = sorted(_validator().iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ValidationError(err.message, pointer(err.absolute_path) or "/")
    normalized = normalize(doc)
    return build(normalized)


def _state_dict(value) -> dict:
    if value is None:
        return {k: 0.0 for k in STATE_FIELDS}
    if isinstance(value, list):
        return dict(zip(STATE_FIELDS, (float(v) for v in value)))
    return {k: float(value.get(k, 0.0)) for k in STATE_FIELDS}


def _num(x):
    return float(x)


def normalize(doc: dict) -> dict:
    """Fill every default so the document fully describes the run."""
    dt = _num(doc.get("dt", 0.01))
    duration = _num(doc.get("duration", 10.0))
    mode = doc.get("mode", "ideal")
    out: dict[str, Any] = {
        "name": doc.get("name", "scenario"),
        "dt": dt,
        "duration": duration,
        "seed": int(doc.get("seed", 0)),
        "mode": mode,
    }
    vehicles = []
    for v in doc["vehicles"]:
        initial = _state_dict(v.get("initial"))
        m = v.get("mission", {})
        start = _state_dict(m["start"]) if "start" in m else dict(initial)
        goal = _state_dict(m["goal"]) if "goal" in m else dict(start)
        T = _num(m.get("T", duration))
        mission = {"start": start, "goal": goal, "T": T,
                   "resolution": _num(m.get("resolution", min(0.1, T)))}
        for k in ("max_speed", "max_accel"):
            if k in m:
                mission[k] = _num(m[k])
        params = {**{"m": 1.0, "g": 9.81, "Ix": 0.01, "Iy": 0.01, "Iz": 0.02,
                     "ft_max": 25.0, "tau_max": 1.0}, **{k: _num(x) for k, x in v.get("params", {}).items()}}
        sensors = v.get("sensors")
        if sensors is None:
            sensors = list(DEFAULT_SENSORS) if mode == "sensor" else []
        norm_sensors = []
        for s in sensors:
            norm_sensors.append({
                "kind": s["kind"],
                "rate": _num(s.get("rate", {"gps": 10.0, "imu": 100.0, "sonar": 20.0}[s["kind"]])),
                "noise_std": s.get("noise_std", 0.0),
                "bias": s.get("bias", 0.0),
                "dropout_probability": _num(s.get("dropout_probability", 0.0)),
                "max_range": _num(s.get("max_range", 40.0)),
            })
        nv = {
            "id": v["id"],
            "params": params,
            "initial": initial,
            "mission": mission,
            "weights": v.get("weights", "default"),
            "feedforward": bool(v.get("feedforward", False)),
            "estimator": v.get("estimator", "ekf"),
            "sensors": norm_sensors,
        }
        if "remote_id" in v:
            r = v["remote_id"]
            nv["remote_id"] = {"uas_id": r["uas_id"], "rate": _num(r.get("rate", 1.0)),
                               "emergency_status": r.get("emergency_status", "none")}
        vehicles.append(nv)
    out["vehicles"] = vehicles
    out["obstacles"] = [{"id": o["id"], "center": [_num(c) for c in o["center"]],
                         "radius": _num(o["radius"]),
                         "velocity": [_num(c) for c in o.get("velocity", [0, 0, 0])]}
                        for o in doc.get("obstacles", [])]
    out["attacks"] = [_normalize_attack(a) for a in doc.get("attacks", [])]
    det = doc.get("detection", {})
    out["detection"] = {"mode": det.get("mode", "local"), "radius": _num(det.get("radius", 5.0)),
                        "gain": _num(det.get("gain", 1.0)), "saturation": _num(det.get("saturation", 2.0))}
    rid = doc.get("remote_id", {})
    out["remote_id"] = {"origin": {k: _num(x) for k, x in rid.get("origin", {"lat": 0, "lon": 0}).items()},
                        "operator": {k: _num(x) for k, x in rid.get("operator", {"lat": 0, "lon": 0}).items()}}
    sw = doc.get("swarm", {})
    out["swarm"] = {"enabled": bool(sw.get("enabled", len(vehicles) > 1)), "rate": _num(sw.get("rate", 10.0))}
    out["predictors"] = [{"target": p["target"], "model": p.get("model", "linear"),
                          "horizon": _num(p.get("horizon", 2.0)), "resolution": _num(p.get("resolution", 0.5)),
                          "rate": _num(p.get("rate", 1.0))} for p in doc.get("predictors", [])]
    out["schedule"] = [dict(e) for e in doc.get("schedule", [])]
    out["outputs"] = dict(doc.get("outputs", {}))
    return out


def _normalize_trigger(t: Optional[dict]) -> dict:
    if t is None:
        return {"kind": "time_window", "window": [0.0, None]}
    out = {"kind": t["kind"]}
    if t["kind"] == "time_window":
        w = t.get("window", [0.0, None])
        out["window"] = [_num(w[0]), None if w[1] is None else _num(w[1])]
    elif t["kind"] == "region":
        out["region"] = t.get("region")
    elif t["kind"] == "composite":
        out["op"] = t.get("op", "AND")
        out["children"] = [_normalize_trigger(c) for c in t.get("children", [])]
    return out


def _normalize_attack(a: dict) -> dict:
    out = {k: v for k, v in a.items() if k != "description"}
    out["trigger"] = _normalize_trigger(a.get("trigger"))
    out.setdefault("magnitude", [])
    out.setdefault("duty_cycle", 1.0)
    out.setdefault("period", 1.0)
    out.setdefault("targets", [])
    return out


def _trigger(d: dict, path: str) -> Trigger:
    if d["kind"] == "time_window":
        w = d["window"]
        return _prefixed(lambda: Trigger("time_window", (w[0], math.inf if w[1] is None else w[1])), path)
    if d["kind"] == "region":
        r = d.get("region")
        if r is None:
            raise ValidationError("region trigger needs a region", f"{path}/region")
        return _prefixed(lambda: Trigger("region", region=Region(tuple(r["center"]), r["radius"])), path)
    if d["kind"] == "composite":
        kids = tuple(_trigger(c, f"{path}/children/{i}") for i, c in enumerate(d["children"]))
        return _prefixed(lambda: Trigger("composite", op=d["op"], children=kids), path)
    return Trigger("manual")


def _prefixed(fn, path):
    try:
        return fn()
    except ValidationError as exc:
        raise ValidationError(exc.message, path + exc.path) from None


def build(doc: dict) -> ScenarioConfig:
    dt, duration = doc["dt"], doc["duration"]
    if duration < dt:
        raise ValidationError("duration must be at least dt", "/duration")
    ids = {}
    vehicles = []
    for i, v in enumerate(doc["vehicles"]):
        base = f"/vehicles/{i}"
        if v["id"] in ids:
            raise ValidationError(f"duplicate vehicle id {v['id']!r}", f"{base}/id")
        ids[v["id"]] = i
        if v["weights"] not in WEIGHT_PRESETS:
            raise ValidationError(f"unknown weight preset {v['weights']!r}", f"{base}/weights")
        params = _prefixed(lambda: VehicleParams(**v["params"]), f"{base}/params")
        m = v["mission"]
        mission = _prefixed(lambda: PlanRequest(UavState(**m["start"]), UavState(**m["goal"]), m["T"],
                                                m["resolution"], m.get("max_speed"), m.get("max_accel")),
                            f"{base}/mission")
        sensors = []
        kinds = set()
        for j, s in enumerate(v["sensors"]):
            if s["kind"] in kinds:
                raise ValidationError(f"duplicate {s['kind']} sensor", f"{base}/sensors/{j}/kind")
            kinds.add(s["kind"])
            sensors.append(_prefixed(lambda: SensorModel(**s), f"{base}/sensors/{j}"))
        rid = None
        if "remote_id" in v:
            r = v["remote_id"]
            rid = RemoteIdConfig(r["uas_id"], GeoOrigin(**doc["remote_id"]["origin"]),
                                 GeoOrigin(**doc["remote_id"]["operator"]), r["rate"], r["emergency_status"])
        vehicles.append(VehicleConfig(v["id"], params, UavState(**v["initial"]), mission, v["weights"],
                                      v["feedforward"], v["estimator"], tuple(sensors), rid))

    obstacles = []
    seen = set()
    for i, o in enumerate(doc["obstacles"]):
        if o["id"] in seen:
            raise ValidationError(f"duplicate obstacle id {o['id']!r}", f"/obstacles/{i}/id")
        seen.add(o["id"])
        obstacles.append(Obstacle(o["id"], tuple(o["center"]), o["radius"], tuple(o["velocity"])))

    attacks = []
    attack_ids = set()
    for i, a in enumerate(doc["attacks"]):
        base = f"/attacks/{i}"
        if a["id"] in attack_ids:
            raise ValidationError(f"duplicate attack id {a['id']!r}", f"{base}/id")
        attack_ids.add(a["id"])
        tg = a["targets"]
        if isinstance(tg, dict):
            targets = _prefixed(lambda: Region(tuple(tg["center"]), tg["radius"]), f"{base}/targets")
        else:
            for j, t in enumerate(tg):
                if t not in ids:
                    raise ValidationError(f"unknown vehicle {t!r}", f"{base}/targets/{j}")
            targets = tuple(tg)
        phantom = None
        if "phantom" in a:
            p = a["phantom"]
            if p["id"] in seen:
                raise ValidationError(f"duplicate phantom id {p['id']!r}", f"{base}/phantom/id")
            seen.add(p["id"])
            phantom = Obstacle(p["id"], tuple(p["center"]), p["radius"],
                               tuple(p.get("velocity", (0, 0, 0))), phantom=True)
        trigger = _trigger(a["trigger"], f"{base}/trigger")
        attacks.append(_prefixed(lambda: AttackSpec(
            id=a["id"], surface=a["surface"], trigger=trigger, magnitude=tuple(a["magnitude"]),
            bound=a.get("bound", math.inf), duty_cycle=a["duty_cycle"], period=a["period"],
            targets=targets, effect=a.get("effect", ""), link=a.get("link", ""), phantom=phantom), base))

    predictors = []
    for i, p in enumerate(doc["predictors"]):
        if p["target"] not in ids:
            raise ValidationError(f"unknown vehicle {p['target']!r}", f"/predictors/{i}/target")
        predictors.append(PredictorConfig(**p))

    schedule = []
    for i, e in enumerate(doc["schedule"]):
        if not (e.get("service") or e.get("action") or e.get("cancel")):
            raise ValidationError("entry needs service, action or cancel", f"/schedule/{i}")
        schedule.append(ScheduleEntry(float(e["t"]), e.get("service", ""), e.get("request"),
                                      e.get("action", ""), e.get("goal"), e.get("cancel", "")))

    det = DetectionConfig(**doc["detection"])
    return ScenarioConfig(
        name=doc["name"], dt=dt, duration=duration, seed=doc["seed"], mode=doc["mode"],
        vehicles=tuple(vehicles), obstacles=tuple(obstacles), attacks=tuple(attacks), detection=det,
        origin=GeoOrigin(**doc["remote_id"]["origin"]), operator=GeoOrigin(**doc["remote_id"]["operator"]),
        swarm=SwarmConfig(**doc["swarm"]), predictors=tuple(predictors),
        schedule=tuple(sorted(schedule, key=lambda e: e.t)), outputs=doc["outputs"], document=doc)
