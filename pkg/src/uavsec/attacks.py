"""Sensor and link attack models.

An attack is declared by an :class:`AttackSpec`. Whether it is active on a
given tick for a given UAV comes from its trigger AND-ed with a duty-cycle
gate, which models intermittent access to the attack surface. Offsets are
norm-clamped to ``bound``: the detection-avoidance threshold for spoofing,
and the stand-in for the onboard filters that limit IMU injection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .bus import Bus, QosPolicy, Subscription
from .errors import ValidationError
from .messages import GpsFix, ImuSample
from .world import Obstacle, ObstacleRegistry

SURFACES = ("imu", "gps", "comm_link", "obstacle")
EFFECTS = ("offset", "jam", "degrade", "phantom")
_DEFAULT_EFFECT = {"imu": "offset", "gps": "offset", "comm_link": "jam", "obstacle": "phantom"}
_ALLOWED = {
    "imu": ("offset",),
    "gps": ("offset", "jam", "degrade"),
    "comm_link": ("jam", "degrade"),
    "obstacle": ("phantom",),
}


@dataclass(frozen=True)
class Region:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise ValidationError("region center must have 3 components", "/center")
        if not self.radius > 0:
            raise ValidationError("region radius must be positive", "/radius")

    def contains(self, point: Sequence[float]) -> bool:
        return math.dist(self.center, point) <= self.radius


@dataclass(frozen=True)
class Trigger:
    kind: str = "time_window"
    window: tuple[float, float] = (0.0, math.inf)
    region: Optional[Region] = None
    op: str = "AND"
    children: tuple["Trigger", ...] = ()

    def __post_init__(self):
        if self.kind not in ("manual", "time_window", "region", "composite"):
            raise ValidationError(f"unknown trigger kind {self.kind!r}", "/kind")
        if self.kind == "time_window" and not self.window[0] < self.window[1]:
            raise ValidationError("window needs t_start < t_end", "/window")
        if self.kind == "region" and self.region is None:
            raise ValidationError("region trigger needs a region", "/region")
        if self.kind == "composite":
            if self.op not in ("AND", "OR"):
                raise ValidationError(f"unknown composite op {self.op!r}", "/op")
            if len(self.children) < 2:
                raise ValidationError("composite trigger needs at least 2 children", "/children")

    def fires(self, sim_time: float, position: Sequence[float], armed: bool) -> bool:
        if self.kind == "manual":
            return armed
        if self.kind == "time_window":
            return self.window[0] <= sim_time < self.window[1]
        if self.kind == "region":
            return self.region.contains(position)
        results = (c.fires(sim_time, position, armed) for c in self.children)
        return all(results) if self.op == "AND" else any(results)

    def uses_manual(self) -> bool:
        return self.kind == "manual" or any(c.uses_manual() for c in self.children)


@dataclass(frozen=True)
class AttackSpec:
    """Declarative description of one attack.

    ``targets`` is a tuple of UAV ids, a :class:`Region` (every UAV inside is
    attacked), or empty for all UAVs. ``magnitude`` means a position offset
    (gps), accelerometer offset (imu) or, for ``effect="degrade"``, the
    throttled minimum delivery interval in seconds as ``magnitude[0]``.
    """

    id: str
    surface: str
    trigger: Trigger = field(default_factory=Trigger)
    magnitude: tuple[float, ...] = ()
    bound: float = math.inf
    duty_cycle: float = 1.0
    period: float = 1.0
    targets: Union[tuple[str, ...], Region] = ()
    effect: str = ""
    link: str = ""
    phantom: Optional[Obstacle] = None

    def __post_init__(self):
        if self.surface not in SURFACES:
            raise ValidationError(f"unknown surface {self.surface!r}", "/surface")
        if not self.effect:
            object.__setattr__(self, "effect", _DEFAULT_EFFECT[self.surface])
        if self.effect not in _ALLOWED[self.surface]:
            raise ValidationError(f"effect {self.effect!r} not valid for surface {self.surface!r}", "/effect")
        object.__setattr__(self, "magnitude", tuple(float(m) for m in self.magnitude))
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ValidationError("duty_cycle must lie in [0, 1]", "/duty_cycle")
        if not self.bound >= 0:
            raise ValidationError("bound must be nonnegative", "/bound")
        if self.duty_cycle < 1.0 and not self.period > 0:
            raise ValidationError("period must be positive when duty_cycle < 1", "/period")
        if self.effect == "offset" and len(self.magnitude) != 3:
            raise ValidationError("offset attacks need a 3-component magnitude", "/magnitude")
        if self.effect == "degrade" and (not self.magnitude or self.magnitude[0] <= 0):
            raise ValidationError("degrade attacks need magnitude[0] > 0 (seconds)", "/magnitude")
        if self.effect == "phantom" and self.phantom is None:
            raise ValidationError("obstacle attacks need phantom geometry", "/phantom")
        if not self.link:
            default = {"gps": "{uav}/gps", "imu": "{uav}/imu"}.get(self.surface, "")
            object.__setattr__(self, "link", default)
        if self.effect in ("jam", "degrade") and not self.link:
            raise ValidationError("jam attacks need a link topic", "/link")

    def targets_uav(self, uav_id: str, position: Sequence[float]) -> bool:
        if isinstance(self.targets, Region):
            return self.targets.contains(position)
        return not self.targets or uav_id in self.targets

    def link_topic(self, uav_id: str) -> str:
        return self.link.replace("{uav}", uav_id)


def duty_gate(spec: AttackSpec, sim_time: float) -> bool:
    """True iff the phase within the current period is below ``duty_cycle * period``.

    The phase is computed on ``sim_time / period`` with a small guard so
    tick-aligned period boundaries are not lost to floating-point rounding.
    """
    if spec.duty_cycle >= 1.0:
        return True
    if spec.duty_cycle <= 0.0:
        return False
    x = sim_time / spec.period
    frac = x - math.floor(x + 1e-9)
    if frac < 0.0:
        frac = 0.0
    return frac < spec.duty_cycle - 1e-9


def is_active(spec: AttackSpec, tick: int, sim_time: float, uav_position: Sequence[float],
              manual_state: Union[bool, Mapping[str, bool]] = False) -> bool:
    armed = manual_state.get(spec.id, False) if isinstance(manual_state, Mapping) else bool(manual_state)
    return spec.trigger.fires(sim_time, uav_position, armed) and duty_gate(spec, sim_time)


def clamp_offset(offset: Sequence[float], bound: float) -> np.ndarray:
    """Scale ``offset`` down to norm ``bound`` keeping its direction."""
    v = np.asarray(offset, dtype=float)
    n = float(np.linalg.norm(v))
    if n > bound:
        return v * (bound / n) if n > 0 else v
    return v


def applied_offset(spec: AttackSpec) -> np.ndarray:
    return clamp_offset(spec.magnitude, spec.bound)


def apply_imu(spec: AttackSpec, sample: ImuSample, active: bool = True) -> ImuSample:
    """Add the clamped offset to the accelerometer channels; gyro is untouched."""
    if not active or spec.bound == 0.0:
        return sample
    off = applied_offset(spec)
    accel = tuple(float(a + o) for a, o in zip(sample.accel, off))
    return ImuSample(accel, sample.gyro, sample.stamp)


def apply_gps(spec: AttackSpec, fix: GpsFix, active: bool = True) -> GpsFix:
    """Add the clamped position offset. With ``bound == 0`` fixes pass through."""
    if not active or spec.bound == 0.0:
        return fix
    off = applied_offset(spec)
    pos = tuple(float(p + o) for p, o in zip(fix.position, off))
    return GpsFix(pos, fix.stamp)


class Jammer:
    """Degrades or disables a set of subscriptions while active, then restores them."""

    def __init__(self, spec: AttackSpec, bus: Bus, links: Iterable[Subscription]):
        self.spec = spec
        self.bus = bus
        self.links = list(links)
        if not self.links:
            raise ValidationError(f"attack {spec.id!r}: no subscriptions on link {spec.link!r}", "/link")
        self._saved: dict[str, QosPolicy] = {}

    def jam_policy(self, prior: QosPolicy) -> QosPolicy:
        if self.spec.effect == "degrade":
            return QosPolicy(max(prior.min_interval, self.spec.magnitude[0]),
                             prior.drop_probability, prior.enabled)
        return QosPolicy(prior.min_interval, prior.drop_probability, False)

    @property
    def engaged(self) -> bool:
        return bool(self._saved)

    def update(self, active: bool) -> None:
        if active and not self._saved:
            for sub in self.links:
                self._saved[sub.id] = sub.qos
                self.bus.set_qos(sub, self.jam_policy(sub.qos))
        elif not active and self._saved:
            for sub in self.links:
                self.bus.set_qos(sub, self._saved[sub.id])
            self._saved = {}


def apply_jam(spec: AttackSpec, bus: Bus, links: Iterable[Subscription], active: bool = True) -> Jammer:
    """One-shot form of :class:`Jammer` for scripts and tests."""
    j = Jammer(spec, bus, links)
    j.update(active)
    return j


def inject_phantom(spec: AttackSpec, registry: ObstacleRegistry, active: bool) -> None:
    """Ensure the phantom obstacle is present iff ``active``."""
    ob = spec.phantom
    present = ob.id in registry
    if active and not present:
        registry.add(Obstacle(ob.id, ob.center, ob.radius, ob.velocity, phantom=True))
    elif not active and present:
        registry.remove(ob.id)


def duplicate_phantom_check(specs: Iterable[AttackSpec], registry: ObstacleRegistry) -> None:
    seen = set()
    for spec in specs:
        if spec.effect != "phantom":
            continue
        pid = spec.phantom.id
        if pid in seen or pid in registry:
            raise ValidationError(f"duplicate phantom id {pid!r}")
        seen.add(pid)
