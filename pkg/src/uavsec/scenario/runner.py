"""Deterministic tick scheduler: wires the node graph, runs it and records the bag."""

from __future__ import annotations

import dataclasses
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path as FsPath
from typing import Optional, Union

from .. import messages
from ..bus import Bag, Bus, parse_bag, read_bag
from ..comms import SwarmStateMsg, RemoteIdMsg
from ..control import weights_preset
from ..errors import HashMismatch, InvalidRequest, NodeAbort, UavSimError, ValidationError
from ..messages import (AttackStatus, ControlCmd, MissionGoal, ObstacleList, StepRequest,
                        TrackingStatus)
from ..planner import Path
from ..vehicle import STATE_FIELDS, UavState
from ..world import ObstacleRegistry
from . import nodes as N
from .config import ScenarioConfig, load
from .export import export_bag
from .report import ReportBuilder, RunReport, write_report

log = logging.getLogger("uavsec")


@dataclass
class RunResult:
    report: RunReport
    bag_path: Optional[FsPath]
    bag_text: Optional[str]

    def bag(self) -> Bag:
        if self.bag_text is not None:
            return parse_bag(self.bag_text.splitlines(keepends=True))
        return read_bag(self.bag_path)


class Simulation:
    """Builds every node for a scenario; :meth:`run` executes ticks ``0..n_ticks``."""

    def __init__(self, config: ScenarioConfig):
        self.config = c = config
        self.bus = bus = Bus(c.dt, c.seed, c.hash)
        self.registry = ObstacleRegistry(c.obstacles)
        self.nodes: list[N.Node] = []
        self.request_kinds: dict[str, type] = {}
        self.plants: dict[str, N.Plant] = {}
        self.controllers: dict[str, N.Controller] = {}
        self.comms: dict[str, N.SwarmComms] = {}

        bus.create_topic("world/obstacles", ObstacleList)
        for v in c.vehicles:
            for leaf, kind in (("truth", UavState), ("state_est", UavState), ("cmd", ControlCmd),
                               ("tracking", TrackingStatus), ("global_plan", Path),
                               ("local_plan", Path), ("nearby_obstacles", ObstacleList)):
                bus.create_topic(f"{v.id}/{leaf}", kind)
            for s in v.sensors:
                bus.create_topic(f"{v.id}/{s.kind}", N.SENSOR_KINDS[s.kind])
                bus.create_topic(f"{v.id}/{s.kind}_out", N.SENSOR_KINDS[s.kind])
        for a in c.attacks:
            bus.create_topic(f"attacks/{a.id}/active", AttackStatus)
        if c.swarm.enabled:
            bus.create_topic("swarm/positions", SwarmStateMsg)
        if any(v.remote_id for v in c.vehicles):
            bus.create_topic("remoteid/broadcast", RemoteIdMsg)

        self._add(N.ObstacleManager(bus, self.registry))
        for v in c.vehicles:
            plant = N.Plant(bus, v.id, v.params, v.initial)
            self.plants[v.id] = plant
        self.attack_manager = N.AttackManager(bus, c.attacks, self.plants, self.registry) if c.attacks else None
        for v in c.vehicles:
            plant = self.plants[v.id]
            self._add(N.Detector(bus, plant, self.registry, c.detection.mode, c.detection.radius))
            for s in v.sensors:
                self._add(N.SensorNode(bus, plant, s))
                if s.kind in ("gps", "imu"):
                    self._add(N.Relay(bus, v.id, s.kind, self.attack_manager))
                else:
                    self._add(N.Relay(bus, v.id, s.kind, None))
            use_ekf = c.mode == "sensor" and v.estimator == "ekf"
            self._add(N.EkfEstimator(bus, v) if use_ekf else N.PassThroughEstimator(bus, v.id))
            self._add(N.PlannerNode(bus, v.id, v.mission))
            ctl = N.Controller(bus, v, c.detection, c.n_ticks)
            self.controllers[v.id] = ctl
            self._add(ctl)
            self._add(plant)
            if c.swarm.enabled:
                self.comms[v.id] = N.SwarmComms(bus, plant, c.swarm.rate)
                self._add(self.comms[v.id])
            if v.remote_id:
                self._add(N.RemoteIdBroadcaster(bus, v.id, v.remote_id))
            bus.register_service(f"{v.id}/simulate_step", N.simulate_step_service(v.params))
            self.request_kinds[f"{v.id}/simulate_step"] = StepRequest
            bus.register_action(f"{v.id}/fly_mission", N.MissionAction(v.params, weights_preset(v.weights), c.dt))
        for i, p in enumerate(c.predictors):
            self._add(N.PredictorNode(bus, i, p, self.registry, c.detection, c.vehicle(p.target).params))
        if self.attack_manager:
            self._add(self.attack_manager)
            self._check_attack_surfaces()
            self.attack_manager.wire_jammers()
            for a in c.attacks:
                self.request_kinds[f"attacks/{a.id}/set"] = messages.AttackCommand
        self.nodes.sort(key=lambda n: N.PHASES.index(n.phase))
        self._check_schedule()
        self.handles = {}

    def _add(self, node):
        self.nodes.append(node)

    def _check_attack_surfaces(self):
        for i, a in enumerate(self.config.attacks):
            if a.effect == "offset":
                if not any(a.surface in {s.kind for s in v.sensors} for v in self.config.vehicles):
                    raise ValidationError(f"no vehicle carries a {a.surface} sensor", f"/attacks/{i}/surface")
            if a.effect in ("jam", "degrade"):
                for v in self.config.vehicles:
                    if not self.bus.has_topic(a.link_topic(v.id)):
                        raise ValidationError(f"link topic {a.link_topic(v.id)!r} does not exist",
                                              f"/attacks/{i}/link")

    def _check_schedule(self):
        actions = {f"{v.id}/fly_mission" for v in self.config.vehicles}
        for i, e in enumerate(self.config.schedule):
            if e.service and e.service not in self.request_kinds:
                raise ValidationError(f"unknown service {e.service!r}", f"/schedule/{i}/service")
            for name, key in ((e.action, "action"), (e.cancel, "cancel")):
                if name and name not in actions:
                    raise ValidationError(f"unknown action {name!r}", f"/schedule/{i}/{key}")

    # -- schedule ------------------------------------------------------------

    def _run_schedule(self, tick):
        for e in self.config.schedule:
            if int(round(e.t / self.config.dt)) != tick:
                continue
            if e.service:
                req = _decode(self.request_kinds[e.service], e.request or {})
                try:
                    self.bus.call_service(e.service, req, tick)
                except InvalidRequest as exc:
                    log.warning("service %s rejected request at tick %d: %s", e.service, tick, exc)
            if e.action:
                goal = _decode(MissionGoal, e.goal or {})
                self.handles[e.action] = self.bus.start_action(e.action, goal, tick)
            if e.cancel:
                h = self.handles.get(e.cancel)
                if h is None or not self.bus.cancel_action(h):
                    log.info("cancel of %s at tick %d ignored: no active goal", e.cancel, tick)

    # -- run -------------------------------------------------------------------

    def run(self, record: Union[str, FsPath, None] = None, taps=()) -> RunResult:
        c = self.config
        buf = None
        if record is None:
            buf = io.StringIO()
            self.bus.record(buf)
        else:
            FsPath(record).parent.mkdir(parents=True, exist_ok=True)
            self.bus.record(record)
        builder = ReportBuilder([v.id for v in c.vehicles], [a.id for a in c.attacks])
        self.bus.taps.append(builder)
        self.bus.taps.extend(taps)
        log.info("running %s: %d ticks, %d vehicles, mode %s", c.name, c.n_ticks + 1, len(c.vehicles), c.mode)
        t0 = time.perf_counter()
        try:
            for tick in range(c.n_ticks + 1):
                self.bus.advance(tick)
                try:
                    self._run_schedule(tick)
                except UavSimError as exc:
                    raise NodeAbort("schedule", tick, exc) from exc
                for node in self.nodes:
                    try:
                        node.step(tick)
                    except NodeAbort:
                        raise
                    except Exception as exc:
                        raise NodeAbort(node.name, tick, exc) from exc
        finally:
            self.bus.close()
        wall = time.perf_counter() - t0
        report = builder.finalize(c.n_ticks, scenario=c.name, scenario_hash=c.hash, seed=c.seed,
                                  mode=c.mode, dt=c.dt, wall_clock=wall)
        log.info("finished %s in %.3f s (%.0fx real time)", c.name, wall, report.realtime_factor)
        return RunResult(report, FsPath(record) if record is not None else None,
                         buf.getvalue() if buf is not None else None)


def _decode(cls, data: dict):
    """Build a message from a schedule entry, accepting 12-element arrays for states."""
    if "kind" in data:
        return messages.from_payload(data)
    body = {}
    for name, hint in messages._fields(cls):
        if name not in data:
            continue
        v = data[name]
        if hint is UavState:
            v = dict(zip(STATE_FIELDS, v)) if isinstance(v, list) else {k: v.get(k, 0.0) for k in STATE_FIELDS}
        elif isinstance(v, list) and hint is not tuple and dataclasses.is_dataclass(hint):
            v = dict(zip([f for f, _ in messages._fields(hint)], v))
        body[name] = v
    try:
        return messages.from_payload({"kind": cls.__name__, **body})
    except (TypeError, KeyError) as exc:
        raise ValidationError(f"bad {cls.__name__} in schedule: {exc}") from None


def run(config: Union[ScenarioConfig, str, FsPath], *, record=None, export=None, report=None,
        overrides: Optional[dict] = None, taps=()) -> RunResult:
    """Run a scenario; bag, CSV and report destinations default to the config's outputs."""
    if not isinstance(config, ScenarioConfig):
        config = load(config, overrides)
    out = config.outputs
    record = record or out.get("bag_path")
    export = export or out.get("csv_dir")
    report = report or out.get("report_path")
    result = Simulation(config).run(record, taps)
    if export:
        export_bag(result.bag(), export)
    if report:
        write_report(result.report, report)
    return result


def replay(bag: Union[Bag, str, FsPath], config: Union[ScenarioConfig, str, FsPath], *,
           force: bool = False, export=None, record=None) -> RunReport:
    """Republish a bag and rebuild its report; refuses a bag from another scenario unless forced."""
    if not isinstance(config, ScenarioConfig):
        config = load(config)
    if not isinstance(bag, Bag):
        bag = read_bag(bag)
    recorded = bag.header.get("scenario_hash", "")
    if recorded != config.hash and not force:
        raise HashMismatch(recorded, config.hash)
    bus = Bus.for_bag(bag)
    builder = ReportBuilder([v.id for v in config.vehicles], [a.id for a in config.attacks])
    bus.taps.append(builder)
    if record is not None:
        bus.record(record)
    t0 = time.perf_counter()
    bus.replay(bag)
    bus.close()
    wall = time.perf_counter() - t0
    if export:
        export_bag(bag, export)
    return builder.finalize(config.n_ticks, scenario=config.name, scenario_hash=recorded,
                            seed=bag.header.get("seed", 0), mode=config.mode, dt=config.dt,
                            wall_clock=wall)
