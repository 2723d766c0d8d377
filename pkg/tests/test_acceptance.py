"""Acceptance criteria 1-13, one test each.

Every test records a PASS/FAIL line (with the measured quantities) that the
conftest hook prints in the terminal summary. Runtime budgets are asserted
inside each criterion.
"""

import copy
import math
import time
import warnings
from contextlib import contextmanager

import numpy as np
import pytest

from uavsec import scenarios
from uavsec.comms import GeoOrigin, RemoteIdMsg, decode, encode, local_to_geo, reconstruct_track
from uavsec.control import lqr_hover, solve_care, spectral_abscissa, track, weights_preset
from uavsec.planner import PlanRequest, plan, quintic_coefficients
from uavsec.prediction import TrackHistory, ekf_step, initial_ekf_state, predict_linear
from uavsec.scenario import replay, run
from uavsec.scenario.config import from_document
from uavsec.vehicle import ControlInput, UavState, VehicleParams, hover_input, linearize_hover, step

from conftest import ACCEPTANCE, run_doc, shipped

P = VehicleParams()
DEFAULT = weights_preset("default")


class Record:
    def __init__(self):
        self.details = []

    def note(self, text):
        self.details.append(text)


@contextmanager
def criterion(n, title, budget, blocking=True):
    rec = Record()
    t0 = time.perf_counter()
    ok, err = False, None
    try:
        yield rec
        elapsed = time.perf_counter() - t0
        assert elapsed < budget, f"runtime {elapsed:.2f} s over the {budget} s budget"
        ok = True
    except AssertionError as exc:
        err = exc
        rec.note(f"failed: {str(exc).splitlines()[0] if str(exc) else 'assertion'}")
    finally:
        elapsed = time.perf_counter() - t0
        ACCEPTANCE[n] = (ok, title, "; ".join(rec.details + [f"{elapsed:.2f} s"]))
    if err is not None:
        if blocking:
            raise err
        warnings.warn(f"criterion {n} (non-blocking) not met: {err}")


def check(cond, message):
    assert cond, message


# -- 1 ---------------------------------------------------------------------

def test_criterion_01_dynamics_equilibria():
    with criterion(1, "dynamics equilibria", 1.0) as rec:
        s0 = UavState(x=1.0, y=-2.0, z=-10.0, psi=0.3)
        s = s0
        for _ in range(1000):
            s = step(s, hover_input(P), P, 0.01)
        drift = float(np.max(np.abs(s.as_array() - s0.as_array())))
        rec.note(f"hover drift {drift:.1e}")
        check(drift <= 1e-12, f"hover drift {drift}")
        s = UavState()
        for _ in range(100):
            s = step(s, ControlInput(), P, 0.01)
        ez, ev = abs(s.z - 0.5 * P.g), abs(s.vz - P.g)
        rec.note(f"free fall |dz| {ez:.1e} |dvz| {ev:.1e}")
        check(ez <= 1e-12 and ev <= 1e-12, f"free fall errors {ez}, {ev}")


# -- 2 ---------------------------------------------------------------------

def test_criterion_02_integrator_order():
    with criterion(2, "RK4 integrator order", 5.0) as rec:
        u = ControlInput(10.5, 0.002, -0.0015, 0.003)
        s0 = UavState(vx=1.0, p_rate=0.3, q_rate=-0.2, r_rate=0.5)

        def fly(dt):
            s = s0
            for _ in range(int(round(1.0 / dt))):
                s = step(s, u, P, dt)
            return s.as_array()

        dt = 0.05
        ref = fly(dt / 64)
        ratio = float(np.linalg.norm(fly(dt) - ref) / np.linalg.norm(fly(dt / 2) - ref))
        rec.note(f"ratio {ratio:.3f}")
        check(14.0 <= ratio <= 18.0, f"ratio {ratio}")


# -- 3 ---------------------------------------------------------------------

def test_criterion_03_riccati_oracle():
    with criterion(3, "Riccati oracle", 1.0) as rec:
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        g = solve_care(A, B, np.eye(2), np.array([[1.0]]))
        r3 = math.sqrt(3.0)
        eP = float(np.max(np.abs(g.P - [[r3, 1.0], [1.0, r3]])))
        eK = float(np.max(np.abs(g.K - [[1.0, r3]])))
        rec.note(f"double integrator |dP| {eP:.1e} |dK| {eK:.1e}")
        check(eP <= 1e-8 and eK <= 1e-8, f"double integrator errors {eP}, {eK}")
        gain, _ = lqr_hover(P, DEFAULT)
        A, B, _ = linearize_hover(P)
        alpha = spectral_abscissa(A - B @ gain.K)
        rec.note(f"hover residual {gain.residual:.1e} max Re(eig) {alpha:.3f}")
        check(gain.residual <= 1e-8, f"hover residual {gain.residual}")
        check(alpha < 0.0, f"closed loop not Hurwitz: {alpha}")


# -- 4 ---------------------------------------------------------------------

def _boundary_matrix():
    return np.array([[1, 0, 0, 0, 0, 0], [0, 1, 0, 0, 0, 0], [0, 0, 2, 0, 0, 0],
                     [1, 1, 1, 1, 1, 1], [0, 1, 2, 3, 4, 5], [0, 0, 2, 6, 12, 20]], dtype=float)


def test_criterion_04_planner_boundary_oracle():
    with criterion(4, "planner boundary oracle", 5.0) as rec:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            p0, p1 = rng.uniform(-100, 100, 3), rng.uniform(-100, 100, 3)
            v0, v1 = rng.uniform(-5 / math.sqrt(3), 5 / math.sqrt(3), (2, 3))
            T = rng.uniform(0.5, 30.0)
            start = UavState(*p0, vx=v0[0], vy=v0[1], vz=v0[2])
            goal = UavState(*p1, vx=v1[0], vy=v1[1], vz=v1[2])
            path = plan(PlanRequest(start, goal, T, T / 10))
            a, b = path.samples[0], path.samples[-1]
            err = max(np.max(np.abs(np.subtract(a.position, p0))), np.max(np.abs(np.subtract(a.velocity, v0))),
                      np.max(np.abs(np.subtract(b.position, p1))), np.max(np.abs(np.subtract(b.velocity, v1))),
                      np.max(np.abs(a.acceleration)), np.max(np.abs(b.acceleration)))
            worst = max(worst, float(err))
        rec.note(f"worst boundary error {worst:.1e}")
        check(worst <= 1e-9, f"boundary error {worst}")
        oracle = np.linalg.solve(_boundary_matrix(), [0, 0, 0, 1, 0, 0])
        check(np.allclose(oracle[3:], (10, -15, 6), atol=1e-12), f"oracle {oracle}")
        c = np.asarray(quintic_coefficients(0.0, 0.0, 1.0, 0.0, 2.0))  # in normalized time s = t / T
        rec.note(f"coefficients {tuple(float(x) for x in c[3:])}")
        check(np.allclose(c, oracle, atol=1e-12), f"coefficients {c}")
        r2r = plan(PlanRequest(UavState(), UavState(x=1.0), 2.0, 0.1)).trajectory
        mid = float(r2r.evaluate(1.0).position[0])
        rec.note(f"midpoint {mid!r}")
        check(mid == 0.5, f"midpoint {mid}")


# -- 5 ---------------------------------------------------------------------

def test_criterion_05_closed_loop_tracking():
    with criterion(5, "closed-loop tracking", 10.0) as rec:
        hover = UavState(z=-10.0)
        hp = plan(PlanRequest(hover, hover, 10.0, 0.1))
        log = track(hp, hover.with_(x=0.5), P, DEFAULT, 0.01, 10.0)
        final = float(log.position_error[-1])
        rec.note(f"offset error at 10 s {final:.2e}")
        check(final < 0.01, f"offset error {final}")
        check(log.position_error[300] == pytest.approx(9.14899234e-04, rel=1e-6), "offset regression value moved")
        res = run(scenarios.path("rest_to_rest"))
        terminal = res.report.terminal_error["uav1"]
        r2r = plan(PlanRequest(UavState(), UavState(x=1.0), 2.0, 0.1))
        direct = float(track(r2r, UavState(), P, DEFAULT, 0.01, 2.0).position_error[-1])
        rec.note(f"rest-to-rest terminal error {terminal:.4f} (direct loop {direct:.4f})")
        check(direct == pytest.approx(0.20318423766806148, rel=1e-9), "rest-to-rest regression value moved")
        check(terminal < 0.05, f"rest-to-rest terminal error {terminal:.4f} >= 0.05")


# -- 6 ---------------------------------------------------------------------

def test_criterion_06_determinism_and_replay():
    with criterion(6, "determinism and replay", 60.0) as rec:
        names = scenarios.names()
        for name in names:
            a = run(scenarios.path(name))
            b = run(scenarios.path(name))
            check(a.bag_text == b.bag_text, f"{name}: bags differ")
            rep = replay(a.bag(), scenarios.path(name))
            check(rep.counts() == a.report.counts(), f"{name}: replay counts differ")
        rec.note(f"{len(names)} scenarios byte-identical, replay counts equal")


# -- 7 ---------------------------------------------------------------------

def test_criterion_07_jamming_semantics():
    with criterion(7, "jamming semantics", 10.0) as rec:
        bag = run(scenarios.path("jam_gps")).bag()
        ticks = np.array([r.tick for r in bag.topic_records("uav1/gps_out")])
        # a fix published on tick k is delivered on k + 1, so window [a, b) maps to ticks (a, b]
        per_second = np.array([np.sum((ticks > 100 * k) & (ticks <= 100 * (k + 1))) for k in range(20)])
        in_jam = int(per_second[5:10].sum())
        pre, post = per_second[:5].mean(), per_second[10:15]
        throttled = int(per_second[15:20].sum())
        predicted = 5.0 / 0.5
        rec.note(f"jam-window deliveries {in_jam}; pre rate {pre:.1f}/s post {post.tolist()}; "
                 f"throttled {throttled} vs predicted {predicted:.0f}")
        check(in_jam == 0, f"{in_jam} deliveries during the jam")
        check(np.all(np.abs(post - pre) <= 1), f"post-window rate {post} vs {pre}")
        check(abs(throttled - predicted) <= 1, f"throttled count {throttled}")


# -- 8 ---------------------------------------------------------------------

def _gps_offsets(bag, uav):
    fixes = {r.payload.stamp: np.array(r.payload.position) for r in bag.topic_records(f"{uav}/gps")}
    return [(r.tick, np.array(r.payload.position) - fixes[r.payload.stamp])
            for r in bag.topic_records(f"{uav}/gps_out")]


def _active_ticks(bag, attack_id):
    """Ticks on which the attack was applied per UAV, from its status transitions."""
    on, out = {}, {}
    final = bag.records[-1].tick
    for r in bag.topic_records(f"attacks/{attack_id}/active"):
        if r.payload.active:
            on[r.payload.uav_id] = r.tick
        else:
            out.setdefault(r.payload.uav_id, set()).update(range(on.pop(r.payload.uav_id), r.tick))
    for uav, start in on.items():
        out.setdefault(uav, set()).update(range(start, final + 1))
    return out


def _records_without_attack_topics(bag):
    return [(r.tick, r.kind, r.name, r.seq, r.payload_json) for r in bag.records
            if not r.name.startswith("attacks/")]


def test_criterion_08_spoof_threshold_and_targets():
    with criterion(8, "spoof threshold and multi-target", 10.0) as rec:
        doc = shipped("spoof_gps_multi")
        spec = doc["attacks"][0]
        bound = spec["bound"]
        bag = run_doc(doc).bag()
        active = _active_ticks(bag, spec["id"])
        offset_uavs, worst = set(), 0.0
        for v in doc["vehicles"]:
            for tick, off in _gps_offsets(bag, v["id"]):
                n = float(np.linalg.norm(off))
                if n > 0:
                    offset_uavs.add(v["id"])
                    worst = max(worst, n)
                    check(tick in active.get(v["id"], ()), f"{v['id']} offset while inactive at tick {tick}")
        lo, hi = spec["trigger"]["window"]
        check(all(lo <= k * doc["dt"] < hi for ticks in active.values() for k in ticks),
              "attack active outside its window")
        center, radius = np.array(spec["targets"]["center"]), spec["targets"]["radius"]
        inside = {v["id"] for v in doc["vehicles"]
                  if np.linalg.norm(np.array([v["initial"].get(k, 0.0) for k in "xyz"]) - center) < radius}
        rec.note(f"max offset {worst:.12f} (bound {bound}); offset UAVs {sorted(offset_uavs)}; "
                 f"inside region {sorted(inside)}")
        # the audit recovers offsets by subtracting ~10 m positions, so allow that rounding
        check(worst <= bound + 1e-12, f"offset {worst} above bound")
        check(offset_uavs == inside, f"{offset_uavs} != {inside}")
        never = copy.deepcopy(doc)
        never["attacks"][0]["trigger"] = {"kind": "time_window", "window": [100.0, 200.0]}
        clean = copy.deepcopy(doc)
        clean["attacks"] = []
        a, b = run_doc(never).bag(), run_doc(clean).bag()
        same = _records_without_attack_topics(a) == _records_without_attack_topics(b)
        rec.note(f"no-trigger bag equals attack-free bag: {same}")
        check(same, "no-trigger bag differs from the attack-free bag")


# -- 9 ---------------------------------------------------------------------

def test_criterion_09_imu_attack_model():
    with criterion(9, "IMU attack model", 10.0) as rec:
        doc = shipped("imu_injection")
        spec = doc["attacks"][0]
        bag = run_doc(doc).bag()
        raw = {r.payload.stamp: np.array(r.payload.accel) for r in bag.topic_records("uav1/imu")}
        outs = bag.topic_records("uav1/imu_out")
        offsets = [np.array(r.payload.accel) - raw[r.payload.stamp] for r in outs]
        norms = np.array([np.linalg.norm(o) for o in offsets])
        periods = 100
        samples = int(round(periods * spec["period"] / doc["dt"]))
        frac = float(np.mean(norms[:samples] > 0))
        tol = doc["dt"] / spec["period"]
        rec.note(f"active fraction {frac:.4f} vs duty {spec['duty_cycle']} (tol {tol}); "
                 f"max offset {norms.max():.12f} (bound {spec['bound']})")
        check(abs(frac - spec["duty_cycle"]) <= tol, f"active fraction {frac}")
        check(norms.max() <= spec["bound"] + 1e-12, f"offset {norms.max()} above bound")
        gyro_same = all(r.payload.gyro == g.payload.gyro
                        for r, g in zip(outs, bag.topic_records("uav1/imu")))
        check(gyro_same, "gyro channel was modified")


# -- 10 --------------------------------------------------------------------

def test_criterion_10_prediction_suite():
    with criterion(10, "prediction suite", 10.0) as rec:
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(500):
            p0, v = rng.uniform(-1e3, 1e3, 3), rng.uniform(-20, 20, 3)
            dt = rng.uniform(0.05, 2.0)
            h = TrackHistory.from_observations([(k * dt, tuple(p0 + v * k * dt)) for k in range(3)])
            out = predict_linear(h, 5.0, 0.25)
            truth = p0 + np.outer(out.times, v)
            worst = max(worst, float(np.max(np.abs(out.positions - truth)) / (1 + np.abs(truth).max())))
        rec.note(f"constant-velocity relative error {worst:.1e}")
        check(worst <= 1e-12, f"linear prediction error {worst}")
        s = initial_ekf_state(q=1e-3, r=0.1)
        min_eig = math.inf
        for _ in range(10000):
            z = rng.normal(0, 10, 3) if rng.random() < 0.7 else None
            s = ekf_step(s, rng.uniform(0.001, 1.0), z)
            check(np.array_equal(s.covariance, s.covariance.T), "covariance lost symmetry")
            min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(s.covariance))))
        rec.note(f"min covariance eigenvalue {min_eig:.2e}")
        check(min_eig > 0, f"covariance not PD: {min_eig}")
        z = np.array([1.5, -2.0, 0.7])
        snap = ekf_step(initial_ekf_state(pos_var=1.0, vel_var=1.0, q=1e-4, r=1e-9), 0.1, z)
        gap = float(np.max(np.abs(snap.mean[:3] - z)))
        rec.note(f"zero-noise snap gap {gap:.1e}")
        check(gap <= 1e-6, f"snap gap {gap}")


# -- 11 --------------------------------------------------------------------

def test_criterion_11_remote_id():
    with criterion(11, "Remote ID", 5.0) as rec:
        rng = np.random.default_rng(11)
        for i in range(2000):
            m = RemoteIdMsg(f"UAS-{i}", rng.uniform(-90, 90), rng.uniform(-179.999, 180), rng.uniform(-100, 1e4),
                            rng.uniform(0, 100), rng.uniform(0, 359.999), rng.uniform(0, 1e5),
                            rng.uniform(-90, 90), rng.uniform(-179.999, 180),
                            "emergency" if rng.random() < 0.1 else "none")
            check(decode(encode(m)) == m, f"round trip failed for {m}")
        doc = shipped("remote_id")
        origin = GeoOrigin(**doc["remote_id"]["origin"])
        bag = run_doc(doc).bag()
        recs = bag.topic_records("remoteid/broadcast")
        msgs = [r.payload for r in recs]
        truth = {r.sim_time: r.payload for r in bag.topic_records("uav1/truth")}
        worst = 0.0
        for t, n, e, d in reconstruct_track(msgs, origin):
            s = truth[t]
            lat_t, lon_t = local_to_geo(s.x, s.y, origin)
            lat_r, lon_r = local_to_geo(n, e, origin)
            worst = max(worst, abs(lat_t - lat_r), abs(lon_t - lon_r), abs(d - s.z))
        gaps = {round(b.timestamp - a.timestamp, 12) for a, b in zip(msgs, msgs[1:])}
        rate = doc["vehicles"][0]["remote_id"]["rate"]
        rec.note(f"2000 round trips; {len(msgs)} broadcasts; reconstruction error {worst:.1e}; gaps {sorted(gaps)}")
        check(worst < 1e-6, f"reconstruction error {worst}")
        check(gaps == {1.0 / rate}, f"cadence gaps {gaps}")
        check(all(b.tick - a.tick == int(round(1 / (rate * doc["dt"]))) for a, b in zip(recs, recs[1:])),
              "cadence in ticks")


# -- 12 --------------------------------------------------------------------

ZERO_NOISE = [{"kind": "gps", "rate": 10.0}, {"kind": "imu", "rate": 100.0}, {"kind": "sonar", "rate": 20.0}]


def _truth(bag):
    out = {}
    for r in bag.topic_records():
        if r.name.endswith("/truth"):
            out.setdefault(r.name, []).append(r.payload.as_tuple())
    return {k: np.array(v) for k, v in out.items()}


def test_criterion_12_mode_toggle_equivalence():
    with criterion(12, "mode-toggle equivalence", 10.0) as rec:
        worst = 0.0
        for name, overrides in (("rest_to_rest", {}), ("swarm_obstacles", {"duration": 5.0})):
            ideal = shipped(name)
            sensor = copy.deepcopy(ideal)
            sensor["mode"] = "sensor"
            for v in sensor["vehicles"]:
                v["sensors"] = ZERO_NOISE
                v["estimator"] = "passthrough"
            a, b = run_doc(ideal, **overrides).bag(), run_doc(sensor, **overrides).bag()
            check(any(r.name.endswith("/gps_out") for r in b.topic_records()), "sensor pipeline did not run")
            ta, tb = _truth(a), _truth(b)
            check(ta.keys() == tb.keys(), "vehicle sets differ")
            for k in ta:
                check(ta[k].shape == tb[k].shape, f"{k} lengths differ")
                worst = max(worst, float(np.max(np.abs(ta[k] - tb[k]))))
        rec.note(f"max per-coordinate difference {worst:.1e}")
        check(worst <= 1e-12, f"difference {worst}")


# -- 13 --------------------------------------------------------------------

def _grid_swarm(n, duration):
    return {"name": f"grid{n}", "duration": duration, "mode": "ideal", "swarm": {"enabled": True},
            "vehicles": [{"id": f"uav{i}", "initial": {"x": 5.0 * (i % 5), "y": 5.0 * (i // 5), "z": -10.0}}
                         for i in range(n)]}


def _best_wall(doc, repeats=3):
    return min(run(from_document(doc)).report.wall_clock_s for _ in range(repeats))


def test_criterion_13_performance_envelope():
    with criterion(13, "performance envelope (non-blocking)", 120.0, blocking=False) as rec:
        rf = max(run(scenarios.path("hover")).report.realtime_factor for _ in range(3))
        w1, w10 = _best_wall(_grid_swarm(1, 2.0)), _best_wall(_grid_swarm(10, 2.0))
        rec.note(f"hover {rf:.0f}x real time; 1 vehicle {w1:.3f} s, 10 vehicles {w10:.3f} s "
                 f"(ratio {w10 / w1:.2f})")
        check(w10 <= 10.0 * w1, f"10-vehicle wall time {w10:.3f} s exceeds 10 x {w1:.3f} s")
        check(rf >= 100.0, f"hover runs at {rf:.0f}x real time, below 100x")
