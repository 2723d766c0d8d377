"""Nodes wired together by the scenario runner.

Each node runs once per tick in a fixed phase order. Nodes exchange data
only over the bus, except world-side nodes (sensors, detectors, attack
manager) which may read the simulated plant directly, the way a physical
sensor or attacker observes the real vehicle.
"""

from __future__ import annotations

import math
from collections import deque
from typing import Optional

import numpy as np

from .. import attacks as atk
from .. import comms, control, planner, prediction, vehicle, world
from ..bus import Bus, Envelope, QosPolicy, derive_rng
from ..errors import InvalidRequest, NodeAbort, UavSimError
from ..messages import (Ack, AttackCommand, AttackStatus, ControlCmd, GpsFix, ImuSample,
                        MissionFeedback, MissionGoal, MissionResult, ObstacleList,
                        PredictedPathMsg, SonarRange, StepRequest, StepResponse, TrackingStatus)
from ..comms import RemoteIdMsg, SwarmStateMsg
from ..planner import Path, PathSample, PlanRequest
from ..vehicle import ControlInput, UavState

PHASES = ("world", "sensors", "attacks", "estimation", "prediction", "control", "dynamics", "comms")
SENSOR_KINDS = {"gps": GpsFix, "imu": ImuSample, "sonar": SonarRange}


class Node:
    phase = "world"

    def __init__(self, name: str, bus: Bus):
        self.name = name
        self.bus = bus

    def subscribe(self, topic, callback=None, qos: QosPolicy = QosPolicy()):
        if callback is None:
            return self.bus.subscribe(topic, qos, owner=self.name)

        def guarded(env):
            try:
                callback(env)
            except NodeAbort:
                raise
            except Exception as exc:
                raise NodeAbort(self.name, self.bus.tick, exc) from exc
        return self.bus.subscribe(topic, qos, owner=self.name, callback=guarded)

    def step(self, tick: int) -> None:
        pass

    def finish(self, tick: int) -> None:
        pass

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Plant(Node):
    """Ground-truth rigid body; applies the latest command and publishes truth."""

    phase = "dynamics"

    def __init__(self, bus: Bus, uav_id: str, params, initial: UavState):
        super().__init__(f"{uav_id}/dynamics", bus)
        self.uav_id = uav_id
        self.params = params
        self.state = initial
        self.state_tick = 0
        self.cmd = vehicle.hover_input(params)
        self.truth = bus.topic(f"{uav_id}/truth")
        self.subscribe(f"{uav_id}/cmd", self._on_cmd)

    def _on_cmd(self, env: Envelope):
        self.cmd = env.payload.as_input()

    def step(self, tick):
        if tick > 0:
            self.state = vehicle.step(self.state, self.cmd, self.params, self.bus.dt)
        self.state_tick = tick
        self.bus.publish(self.truth, self.state, tick)


class ObstacleManager(Node):
    def __init__(self, bus: Bus, registry: world.ObstacleRegistry):
        super().__init__("world/obstacle_manager", bus)
        self.registry = registry
        self.topic = bus.topic("world/obstacles")
        self._msg = ObstacleList(())

    def step(self, tick):
        if tick > 0:
            self.registry.advance(self.bus.dt)
        snap = self.registry.snapshot()
        if snap is not self._msg.obstacles:
            self._msg = ObstacleList(snap)
        self.bus.publish(self.topic, self._msg, tick)


class Detector(Node):
    def __init__(self, bus: Bus, plant: Plant, registry: world.ObstacleRegistry, mode: str, radius: float):
        super().__init__(f"{plant.uav_id}/detector", bus)
        self.plant = plant
        self.registry = registry
        self.mode = mode
        self.radius = radius
        self.topic = bus.topic(f"{plant.uav_id}/nearby_obstacles")
        self._msg = ObstacleList(())

    def step(self, tick):
        s = self.plant.state
        nearby = tuple(world.detect((s.x, s.y, s.z), self.registry.snapshot(), self.mode, self.radius))
        if len(nearby) != len(self._msg.obstacles) or any(
                a is not b for a, b in zip(nearby, self._msg.obstacles)):
            self._msg = ObstacleList(nearby)
        self.bus.publish(self.topic, self._msg, tick)


class SensorNode(Node):
    phase = "sensors"

    def __init__(self, bus: Bus, plant: Plant, model: world.SensorModel):
        super().__init__(f"{plant.uav_id}/{model.kind}_sensor", bus)
        self.plant = plant
        self.model = model
        self.rng = derive_rng(bus.seed, "sensor", plant.uav_id, model.kind)
        self.topic = bus.topic(f"{plant.uav_id}/{model.kind}")

    def step(self, tick):
        p = self.plant
        r = world.sense(p.state, self.model, self.rng, tick, self.bus.dt, p.cmd, p.params)
        if r is None:
            return
        stamp = p.state_tick * self.bus.dt
        if isinstance(r, world.GpsReading):
            msg = GpsFix(tuple(float(v) for v in r.position), stamp)
        elif isinstance(r, world.ImuReading):
            msg = ImuSample(tuple(float(v) for v in r.accel), tuple(float(v) for v in r.gyro), stamp)
        else:
            msg = SonarRange(float(r.range), stamp)
        self.bus.publish(self.topic, msg, tick)


class AttackManager(Node):
    """Evaluates every attack per targeted UAV each tick and drives its effect.

    Offsets are applied by the relays (which ask :meth:`active`); jams and
    phantoms are applied here. Transitions are published on
    ``attacks/<id>/active``.
    """

    phase = "attacks"

    def __init__(self, bus: Bus, specs, plants: dict, registry: world.ObstacleRegistry):
        super().__init__("attacks/manager", bus)
        self.specs = list(specs)
        self.plants = plants
        self.registry = registry
        self.armed: dict[str, bool] = {s.id: False for s in self.specs}
        self._active: dict[tuple[str, str], bool] = {}
        self.jammers: dict[tuple[str, str], atk.Jammer] = {}
        self.status_topics = {s.id: bus.topic(f"attacks/{s.id}/active") for s in self.specs}
        for s in self.specs:
            bus.register_service(f"attacks/{s.id}/set", self._setter(s.id))

    def wire_jammers(self) -> None:
        """Resolve jam links once every subscription exists."""
        for s in self.specs:
            if s.effect not in ("jam", "degrade"):
                continue
            for uav in self.plants:
                topic = s.link_topic(uav)
                if not self.bus.has_topic(topic):
                    raise UavSimError(f"attack {s.id!r}: unknown link {topic!r}")
                links = [sub for sub in self.bus.subscriptions(topic)
                         if sub.owner.startswith(f"{uav}/")]
                if links:
                    self.jammers[(s.id, uav)] = atk.Jammer(s, self.bus, links)
            if not any(k[0] == s.id for k in self.jammers):
                raise UavSimError(f"attack {s.id!r}: no subscriptions on link {s.link!r}")

    def _setter(self, attack_id):
        def handler(cmd):
            if not isinstance(cmd, AttackCommand):
                raise InvalidRequest(f"expected AttackCommand, got {type(cmd).__name__}")
            self.armed[attack_id] = cmd.armed
            return Ack(True, "armed" if cmd.armed else "disarmed")
        return handler

    def active(self, attack_id: str, uav_id: str) -> bool:
        return self._active.get((attack_id, uav_id), False)

    def step(self, tick):
        t = tick * self.bus.dt
        for s in self.specs:
            any_active = False
            for uav, plant in self.plants.items():
                st = plant.state
                pos = (st.x, st.y, st.z)
                on = s.targets_uav(uav, pos) and atk.is_active(s, tick, t, pos, self.armed)
                key = (s.id, uav)
                if on != self._active.get(key, False):
                    self._active[key] = on
                    self.bus.publish(self.status_topics[s.id], AttackStatus(s.id, uav, on), tick)
                if key in self.jammers:
                    self.jammers[key].update(on)
                any_active = any_active or on
            if s.effect == "phantom":
                atk.inject_phantom(s, self.registry, any_active)


class Relay(Node):
    """Man-in-the-middle between a raw sensor topic and its ``_out`` twin.

    Identity when no offset attack is active for this UAV.
    """

    phase = "attacks"

    def __init__(self, bus: Bus, uav_id: str, kind: str, manager: Optional[AttackManager]):
        super().__init__(f"{uav_id}/{kind}_relay", bus)
        self.uav_id = uav_id
        self.kind = kind
        self.manager = manager
        self.out = bus.topic(f"{uav_id}/{kind}_out")
        specs = manager.specs if manager else []
        self.specs = [s for s in specs if s.surface == kind and s.effect == "offset"]
        self.sub = self.subscribe(f"{uav_id}/{kind}", self._on_msg)

    def _on_msg(self, env: Envelope):
        msg = env.payload
        for s in self.specs:
            if self.manager.active(s.id, self.uav_id):
                msg = atk.apply_gps(s, msg) if self.kind == "gps" else atk.apply_imu(s, msg)
        self.bus.publish(self.out, msg)


class PassThroughEstimator(Node):
    phase = "estimation"

    def __init__(self, bus: Bus, uav_id: str):
        super().__init__(f"{uav_id}/estimator", bus)
        self.latest: Optional[UavState] = None
        self.topic = bus.topic(f"{uav_id}/state_est")
        self.subscribe(f"{uav_id}/truth", self._on_truth)

    def _on_truth(self, env):
        self.latest = env.payload

    def step(self, tick):
        if self.latest is not None:
            self.bus.publish(self.topic, self.latest, tick)
            self.latest = None


class EkfEstimator(Node):
    """Position/velocity EKF driven by accelerometer input, corrected by GPS and sonar.

    Attitude and Euler rates come from integrating the gyro.
    """

    phase = "estimation"

    def __init__(self, bus: Bus, vc, q_pos: float = 1e-8, q_vel: float = 1e-6):
        super().__init__(f"{vc.id}/estimator", bus)
        self.params = vc.params
        s0 = vc.initial
        sensors = {m.kind: m for m in vc.sensors}
        gps = sensors.get("gps")
        self.r_gps = max(float(np.mean(np.square(gps.noise_std))) if gps else 0.0, 1e-6)
        sonar = sensors.get("sonar")
        self.r_sonar = max(float(np.mean(np.square(sonar.noise_std))) if sonar else 0.0, 1e-6)
        self.sonar_max = sonar.max_range if sonar else world.SONAR_MAX_RANGE
        self.ekf = prediction.ExtendedKalmanFilter(
            transition_jacobian=prediction.cv_jacobian,
            measurement_jacobian=prediction.position_jacobian)
        self.state = prediction.EkfState(
            np.array([s0.x, s0.y, s0.z, s0.vx, s0.vy, s0.vz]),
            np.diag([1e-4] * 3 + [1e-4] * 3),
            np.diag([q_pos] * 3 + [q_vel] * 3),
            self.r_gps * np.eye(3))
        self.att = np.array([s0.phi, s0.theta, s0.psi])
        self.rates = np.array([s0.p_rate, s0.q_rate, s0.r_rate])
        self.imu: Optional[ImuSample] = None
        self.gps: list[GpsFix] = []
        self.sonar: list[SonarRange] = []
        self.topic = bus.topic(f"{vc.id}/state_est")
        for kind, store in (("imu", None), ("gps", self.gps), ("sonar", self.sonar)):
            if kind in sensors:
                self.subscribe(f"{vc.id}/{kind}_out", self._collector(kind, store))

    def _collector(self, kind, store):
        def cb(env):
            if kind == "imu":
                self.imu = env.payload
            else:
                store.append(env.payload)
        return cb

    def step(self, tick):
        dt = self.bus.dt
        if tick > 0:
            u = None
            if self.imu is not None:
                phi, theta, _ = self.att
                self.rates = world.body_rates_to_euler(phi, theta, self.imu.gyro)
                self.att = np.array([vehicle.wrap_angle(a) for a in self.att + self.rates * dt])
                R = world.rotation_body_to_world(*self.att)
                u = R @ np.asarray(self.imu.accel) + np.array([0.0, 0.0, self.params.g])
            self.state = self.ekf.predict(self.state, dt, u)
            for fix in self.gps:
                self.state, _, _ = self.ekf.update(self.state, fix.position)
            for rng in self.sonar:
                if rng.range < self.sonar_max:
                    self.state, _, _ = self.ekf.update(
                        self.state, [rng.range], measurement=_altitude, noise=[[self.r_sonar]],
                        measurement_jacobian=_altitude_jacobian)
        self.gps.clear()
        self.sonar.clear()
        m = self.state.mean
        est = UavState(m[0], m[1], m[2], *self.att, m[3], m[4], m[5], *self.rates)
        self.bus.publish(self.topic, UavState(*(float(v) for v in est.as_tuple())), tick)


def _altitude(x):
    return np.array([-x[2]])


def _altitude_jacobian(x):
    H = np.zeros((1, 6))
    H[0, 2] = -1.0
    return H


class PlannerNode(Node):
    phase = "control"

    def __init__(self, bus: Bus, uav_id: str, request: PlanRequest):
        super().__init__(f"{uav_id}/planner", bus)
        self.request = request
        self.topic = bus.topic(f"{uav_id}/global_plan")

    def step(self, tick):
        if tick == 0:
            self.bus.publish(self.topic, planner.plan(self.request), tick)


class Controller(Node):
    """LQR tracker with repulsion added to the velocity reference."""

    phase = "control"

    def __init__(self, bus: Bus, vc, detection, final_tick: int):
        super().__init__(f"{vc.id}/controller", bus)
        self.uav_id = vc.id
        self.params = vc.params
        self.feedforward = vc.feedforward
        self.detection = detection
        self.final_tick = final_tick
        self.gain, self.u_hover = control.lqr_hover(vc.params, control.weights_preset(vc.weights))
        self.trajectory = None
        self.resolution = vc.mission.resolution
        self.state: Optional[UavState] = None
        self.nearby: tuple = ()
        self.achieved: list[tuple[float, UavState]] = []
        self.cmd_topic = bus.topic(f"{vc.id}/cmd")
        self.tracking_topic = bus.topic(f"{vc.id}/tracking")
        self.local_topic = bus.topic(f"{vc.id}/local_plan")
        self.subscribe(f"{vc.id}/state_est", self._on_state)
        self.subscribe(f"{vc.id}/global_plan", self._on_plan)
        if bus.has_topic(f"{vc.id}/nearby_obstacles"):
            self.subscribe(f"{vc.id}/nearby_obstacles", self._on_nearby)

    def _on_state(self, env):
        self.state = env.payload

    def _on_plan(self, env):
        self.trajectory = env.payload.trajectory

    def _on_nearby(self, env):
        self.nearby = env.payload.obstacles

    def step(self, tick):
        if self.state is None or self.trajectory is None:
            return
        t = tick * self.bus.dt
        st = self.state
        ev = self.trajectory.evaluate(t)
        avoid = np.zeros(3)
        if self.nearby:
            d = self.detection
            avoid = world.repulsion((st.x, st.y, st.z), (st.vx, st.vy, st.vz), self.nearby, d.gain, d.saturation)
        ref = control.Reference(ev.position, ev.velocity + avoid, ev.acceleration, ev.yaw)
        u, saturated = control.control_law(self.gain, st, ref, self.u_hover, self.params, self.feedforward)
        e = control.error_list(st, ref)
        self.bus.publish(self.cmd_topic, ControlCmd(u.ft, u.tau_x, u.tau_y, u.tau_z, saturated), tick)
        self.bus.publish(self.tracking_topic, TrackingStatus(
            _f3(ref.position), _f3(ref.velocity), float(ref.yaw),
            math.sqrt(sum(x * x for x in e)), math.sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]),
            _f3(avoid), saturated), tick)
        self.achieved.append((t, st))
        if tick == self.final_tick:
            self.bus.publish(self.local_topic, self._local_plan(), tick)

    def _local_plan(self) -> Path:
        every = max(1, int(round(self.resolution / self.bus.dt)))
        samples = []
        pts = self.achieved[::every]
        if pts[-1] is not self.achieved[-1]:
            pts.append(self.achieved[-1])
        for t, s in pts:
            samples.append(PathSample(t, (s.x, s.y, s.z), (s.vx, s.vy, s.vz), (0.0, 0.0, 0.0), s.psi))
        return Path(tuple(samples))


def _f3(v) -> tuple[float, float, float]:
    return (float(v[0]), float(v[1]), float(v[2]))


class PredictorNode(Node):
    phase = "prediction"

    def __init__(self, bus: Bus, index: int, cfg, registry, detection, params, history: int = 20):
        super().__init__(f"predictor{index}/{cfg.target}", bus)
        self.cfg = cfg
        self.registry = registry
        self.detection = detection
        self.params = params
        self.history = deque(maxlen=history)
        self.period = max(1, int(round(1.0 / (cfg.rate * bus.dt))))
        self.topic = bus.ensure_topic(f"{cfg.target}/predicted_path", PredictedPathMsg)
        self.subscribe(f"{cfg.target}/truth", self._on_truth)

    def _on_truth(self, env):
        s = env.payload
        self.history.append((env.sim_time, (s.x, s.y, s.z)))

    def step(self, tick):
        if tick % self.period or len(self.history) < 3:
            return
        hist = prediction.TrackHistory.from_observations(self.history)
        c = self.cfg
        if c.model == "linear":
            out = prediction.predict_linear(hist, c.horizon, c.resolution)
        elif c.model == "dynamics":
            out = prediction.predict_dynamics(hist, self.params, c.horizon, c.resolution)
        else:
            obs = [o for o in self.registry.snapshot()]
            out = prediction.predict_obstacle_aware(hist, obs, self.detection.gain, c.horizon,
                                                    c.resolution, self.detection.saturation)
        self.bus.publish(self.topic, PredictedPathMsg(
            c.target, c.model, tuple(float(t) for t in out.times),
            tuple(_f3(p) for p in out.positions), out.fallback), tick)


class SwarmComms(Node):
    phase = "comms"

    def __init__(self, bus: Bus, plant: Plant, rate: float):
        super().__init__(f"{plant.uav_id}/comms", bus)
        self.plant = plant
        self.period = max(1, int(round(1.0 / (rate * bus.dt))))
        self.topic = bus.topic("swarm/positions")
        self.received: dict[str, int] = {}
        self.neighbors: dict[str, SwarmStateMsg] = {}
        self.sub = self.subscribe(self.topic, self._on_msg)

    def _on_msg(self, env):
        m = env.payload
        if m.uav_id == self.plant.uav_id:
            return
        self.received[m.uav_id] = self.received.get(m.uav_id, 0) + 1
        self.neighbors[m.uav_id] = m

    def step(self, tick):
        if tick % self.period:
            return
        s = self.plant.state
        self.bus.publish(self.topic, SwarmStateMsg(
            self.plant.uav_id, (s.x, s.y, s.z), (s.vx, s.vy, s.vz), self.plant.state_tick * self.bus.dt), tick)


class RemoteIdBroadcaster(Node):
    """Broadcasts Remote ID from ground truth at a fixed cadence."""

    phase = "comms"

    def __init__(self, bus: Bus, uav_id: str, config: comms.RemoteIdConfig):
        super().__init__(f"{uav_id}/remote_id", bus)
        self.config = config
        self.period = max(1, int(round(1.0 / (config.rate * bus.dt))))
        self.topic = bus.topic("remoteid/broadcast")
        self.subscribe(f"{uav_id}/truth", self._on_truth)

    def _on_truth(self, env):
        if env.tick % self.period == 0:
            self.bus.publish(self.topic, comms.remote_id_from_state(env.payload, self.config, env.sim_time))


class MissionAction:
    """Self-contained fly-mission action: closed-loop LQR flight of a planned mission.

    Feedback every ``feedback_period`` seconds of mission time, then one result.
    """

    def __init__(self, params, weights, dt: float):
        self.params = params
        self.weights = weights
        self.dt = dt
        self.gain, self.u_hover = control.lqr_hover(params, weights)

    def accept(self, goal: MissionGoal, tick: int) -> None:
        if not (goal.T > 0 and goal.feedback_period > 0):
            raise InvalidRequest("mission needs T > 0 and feedback_period > 0")
        req = PlanRequest(goal.start, goal.goal, goal.T, min(0.1, goal.T))
        self.trajectory = planner.build_trajectory(req)
        self.state = goal.start
        self.k = 0
        self.n = int(round(goal.T / self.dt))
        self.fb_every = max(1, int(round(goal.feedback_period / self.dt)))

    def _error(self) -> float:
        ev = self.trajectory.evaluate(min(self.k * self.dt, self.trajectory.T))
        s = self.state
        return float(np.linalg.norm(np.array([s.x, s.y, s.z]) - ev.position))

    def step(self, tick):
        ev = self.trajectory.evaluate(self.k * self.dt)
        ref = control.Reference(ev.position, ev.velocity, ev.acceleration, ev.yaw)
        u, _ = control.control_law(self.gain, self.state, ref, self.u_hover, self.params)
        self.state = vehicle.step(self.state, u, self.params, self.dt)
        self.k += 1
        t = self.k * self.dt
        fb = []
        if self.k % self.fb_every == 0:
            s = self.state
            fb.append(MissionFeedback(t, (s.x, s.y, s.z), self._error()))
        if self.k >= self.n:
            return fb, MissionResult("succeeded", t, self._error())
        return fb, None

    def cancel(self, tick):
        return MissionResult("cancelled", self.k * self.dt, self._error())


def simulate_step_service(params):
    def handler(req):
        if not isinstance(req, StepRequest):
            raise InvalidRequest(f"expected StepRequest, got {type(req).__name__}")
        if not (req.dt > 0 and math.isfinite(req.dt)):
            raise InvalidRequest("dt must be positive and finite")
        if not req.state.is_finite():
            raise InvalidRequest("state must be finite")
        return StepResponse(vehicle.step(req.state, req.input, params, req.dt))
    return handler
