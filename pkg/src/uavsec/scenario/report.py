"""Run reports computed purely from the recorded record stream.

:class:`ReportBuilder` is a bus tap, so the same code produces the report
during a live run and during a replay; the counts are then equal by
construction whenever the record streams are.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..bus import BagRecord


@dataclass
class RunReport:
    scenario: str
    scenario_hash: str
    seed: int
    mode: str
    ticks: int
    sim_duration: float
    terminal_error: dict[str, float] = field(default_factory=dict)
    collisions: dict[str, list[int]] = field(default_factory=dict)
    attack_active_ticks: dict[str, dict[str, int]] = field(default_factory=dict)
    message_counts: dict[str, int] = field(default_factory=dict)
    record_counts: dict[str, int] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    ticks_per_second: float = 0.0
    realtime_factor: float = 0.0

    @property
    def collision_free(self) -> bool:
        return not any(self.collisions.values())

    def counts(self) -> dict:
        """Everything that must reproduce exactly under replay."""
        return {"message_counts": self.message_counts, "record_counts": self.record_counts,
                "attack_active_ticks": self.attack_active_ticks,
                "collisions": self.collisions, "terminal_error": self.terminal_error}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["collision_free"] = self.collision_free
        for k in ("ticks_per_second", "realtime_factor"):
            if not math.isfinite(d[k]):
                d[k] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class ReportBuilder:
    """Accumulates report quantities from bag records."""

    def __init__(self, vehicle_ids, attack_ids=()):
        self.vehicle_ids = list(vehicle_ids)
        self.attack_ids = list(attack_ids)
        self.topic_counts: Counter = Counter()
        self.kind_counts: Counter = Counter()
        self._plans = {}
        self._last_truth = {}
        self._obstacles: tuple = ()
        self._collisions: dict[str, list[int]] = {v: [] for v in self.vehicle_ids}
        self._attack_on: dict[tuple[str, str], int] = {}
        self._attack_ticks: dict[str, dict[str, int]] = {a: {} for a in self.attack_ids}
        self.last_tick = -1

    def __call__(self, rec: BagRecord) -> None:
        self.kind_counts[rec.kind] += 1
        self.last_tick = max(self.last_tick, rec.tick)
        if rec.kind != "topic":
            return
        name = rec.name
        self.topic_counts[name] += 1
        if name == "world/obstacles":
            self._obstacles = tuple(o for o in rec.payload.obstacles if not o.phantom)
            return
        uav, _, leaf = name.partition("/")
        if leaf == "truth":
            s = rec.payload
            self._last_truth[uav] = (rec.sim_time, s)
            p = (s.x, s.y, s.z)
            if any(math.dist(p, o.center) < o.radius for o in self._obstacles):
                self._collisions.setdefault(uav, []).append(rec.tick)
        elif leaf == "global_plan":
            self._plans[uav] = rec.payload.trajectory
        elif uav == "attacks" and name.endswith("/active"):
            st = rec.payload
            key = (st.attack_id, st.uav_id)
            if st.active:
                self._attack_on[key] = rec.tick
            elif key in self._attack_on:
                start = self._attack_on.pop(key)
                self._add_ticks(st.attack_id, st.uav_id, rec.tick - start)

    def _add_ticks(self, attack_id, uav_id, n):
        per = self._attack_ticks.setdefault(attack_id, {})
        per[uav_id] = per.get(uav_id, 0) + n

    def finalize(self, final_tick: int, *, scenario: str = "", scenario_hash: str = "",
                 seed: int = 0, mode: str = "", dt: float = 0.0, wall_clock: float = 0.0) -> RunReport:
        # attacks still active at the end count through the final tick inclusive
        for (aid, uav), start in sorted(self._attack_on.items()):
            self._add_ticks(aid, uav, final_tick + 1 - start)
        self._attack_on.clear()
        terminal = {}
        for uav in self.vehicle_ids:
            traj = self._plans.get(uav)
            last = self._last_truth.get(uav)
            if traj is None or last is None:
                continue
            t, s = last
            ref = traj.evaluate(min(t, traj.T)).position
            terminal[uav] = math.dist((s.x, s.y, s.z), tuple(ref))
        n = final_tick + 1
        sim = final_tick * dt
        return RunReport(
            scenario=scenario, scenario_hash=scenario_hash, seed=seed, mode=mode,
            ticks=n, sim_duration=sim, terminal_error=terminal,
            collisions={k: list(v) for k, v in self._collisions.items()},
            attack_active_ticks={k: dict(sorted(v.items())) for k, v in self._attack_ticks.items()},
            message_counts=dict(sorted(self.topic_counts.items())),
            record_counts=dict(sorted(self.kind_counts.items())),
            wall_clock_s=wall_clock,
            ticks_per_second=n / wall_clock if wall_clock > 0 else math.inf,
            realtime_factor=sim / wall_clock if wall_clock > 0 else math.inf,
        )


def write_report(report: RunReport, path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(report.to_json() + "\n", encoding="utf-8")
