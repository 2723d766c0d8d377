"""Deterministic in-process message bus.

Topics carry typed messages; every subscription has its own QoS policy. A
message published during tick N is delivered at the start of tick N+1, in
global publish order, so node execution order inside a tick never changes
results. Services run synchronously; actions produce feedback on later
ticks and exactly one result. Everything is optionally recorded to a JSONL
bag that replays bit-exactly.
"""

from __future__ import annotations

import functools
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional

import numpy as np

from . import messages
from .errors import (ActionError, BagFormatError, BusError, KindMismatchError, StorageError,
                     ServiceError, UavSimError)

log = logging.getLogger(__name__)

BAG_FORMAT_VERSION = 1
RECORD_KINDS = ("topic", "service_req", "service_resp",
                "action_goal", "action_feedback", "action_result")


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """Independent generator keyed by the scenario seed and string labels."""
    h = hashlib.sha256(repr((int(seed),) + labels).encode()).digest()
    words = [int.from_bytes(h[i:i + 4], "little") for i in range(0, 32, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


@dataclass(frozen=True)
class QosPolicy:
    min_interval: float = 0.0
    drop_probability: float = 0.0
    enabled: bool = True

    def __post_init__(self):
        if not self.min_interval >= 0:
            raise BusError("min_interval must be >= 0")
        if not 0.0 <= self.drop_probability <= 1.0:
            raise BusError("drop_probability must lie in [0, 1]")


LOSSLESS = QosPolicy()


@dataclass(frozen=True)
class Envelope:
    topic: str
    seq: int
    tick: int
    sim_time: float
    payload: Any
    payload_json: str = field(default="", compare=False, repr=False)


class Topic:
    def __init__(self, name: str, kind: type):
        self.name = name
        self.kind = kind
        self.next_seq = 0
        self.subscriptions: list[Subscription] = []
        self._last = (None, "")  # (payload, json): republishing the same object skips encoding

    def __repr__(self):
        return f"Topic({self.name!r}, {self.kind.__name__})"


class Subscription:
    def __init__(self, topic: Topic, owner: str, sub_id: str, qos: QosPolicy,
                 callback: Optional[Callable[[Envelope], None]], rng: np.random.Generator):
        self.topic = topic
        self.owner = owner
        self.id = sub_id
        self.qos = qos
        self.callback = callback
        self.rng = rng
        self.last_delivery: Optional[float] = None
        self.delivered = 0
        self.inbox: list[Envelope] = []
        self.active = True

    def admit(self, env: Envelope) -> bool:
        q = self.qos
        if not q.enabled:
            return False
        if q.min_interval > 0.0 and self.last_delivery is not None \
                and env.sim_time - self.last_delivery < q.min_interval - 1e-9:
            return False
        if q.drop_probability > 0.0 and self.rng.random() < q.drop_probability:
            return False
        self.last_delivery = env.sim_time
        return True

    def take(self) -> list[Envelope]:
        """Drain envelopes buffered for subscribers without a callback."""
        out, self.inbox = self.inbox, []
        return out

    def __repr__(self):
        return f"Subscription({self.topic.name!r}, {self.id!r})"


class ActionServer:
    """Base class for action servers driven by the bus once per tick.

    ``step`` returns ``(feedback_messages, result_or_None)``.
    """

    def accept(self, goal, tick: int) -> None:
        pass

    def step(self, tick: int) -> tuple[list, Any]:
        raise NotImplementedError

    def cancel(self, tick: int):
        raise NotImplementedError


@dataclass
class ActionHandle:
    name: str
    goal: Any
    goal_seq: int
    start_tick: int
    feedback: list = field(default_factory=list)
    result: Any = None
    status: str = "active"
    cancel_requested: bool = False

    @property
    def done(self) -> bool:
        return self.status != "active"


@functools.lru_cache(maxsize=None)
def _quoted(name: str) -> str:
    return json.dumps(name)


def _line(tick: int, sim_time: float, kind: str, name: str, seq: int, payload_json: str) -> str:
    return ('{"tick":%d,"sim_time":%r,"kind":"%s","topic_or_name":%s,"seq":%d,"payload":%s}'
            % (tick, float(sim_time), kind, _quoted(name), seq, payload_json))


class BagWriter:
    """Single-writer JSONL bag. The header line is emitted lazily so that it
    lists every topic created before the first recorded event."""

    def __init__(self, target, header: dict, topics_fn: Callable[[], dict]):
        self._own = isinstance(target, (str, os.PathLike))
        try:
            self._fh = open(target, "w", encoding="utf-8", newline="\n") if self._own else target
        except OSError as exc:
            raise StorageError(f"cannot write bag {target}: {exc}") from exc
        self._header = header
        self._topics_fn = topics_fn
        self._started = False

    def _start(self):
        if not self._started:
            h = dict(self._header)
            h["topics"] = self._topics_fn()
            self._fh.write(messages.dumps(h) + "\n")
            self._started = True

    def write(self, line: str) -> None:
        self._start()
        self._fh.write(line + "\n")

    def close(self) -> None:
        self._start()
        if self._own:
            self._fh.close()
        else:
            self._fh.flush()


class Bus:
    def __init__(self, dt: float = 0.01, seed: int = 0, scenario_hash: str = ""):
        self.dt = dt
        self.seed = seed
        self.scenario_hash = scenario_hash
        self.tick = 0
        self._last_publish_tick = 0
        self._topics: dict[str, Topic] = {}
        self._subs: dict[str, Subscription] = {}
        self._pending: list[Envelope] = []
        self._services: dict[str, Callable] = {}
        self._service_seq: dict[str, int] = {}
        self._actions: dict[str, ActionServer] = {}
        self._action_seq: dict[str, int] = {}
        self._active_actions: dict[str, ActionHandle] = {}
        self._writers: list[BagWriter] = []
        self.taps: list[Callable[[dict], None]] = []

    @classmethod
    def for_bag(cls, bag: "Bag") -> "Bus":
        h = bag.header
        return cls(dt=h["dt"], seed=h["seed"], scenario_hash=h.get("scenario_hash", ""))

    # -- topics ------------------------------------------------------------

    def create_topic(self, name: str, kind) -> Topic:
        if name in self._topics:
            raise BusError(f"duplicate topic name {name!r}")
        topic = Topic(name, messages.kind_of(kind))
        self._topics[name] = topic
        return topic

    def topic(self, name: str) -> Topic:
        try:
            return self._topics[name]
        except KeyError:
            raise BusError(f"unknown topic {name!r}") from None

    def has_topic(self, name: str) -> bool:
        return name in self._topics

    def ensure_topic(self, name: str, kind) -> Topic:
        t = self._topics.get(name)
        return t if t is not None else self.create_topic(name, kind)

    @property
    def topics(self) -> dict[str, Topic]:
        return dict(self._topics)

    def sim_time(self, tick: int) -> float:
        return tick * self.dt

    def _resolve(self, topic) -> Topic:
        if isinstance(topic, Topic):
            if self._topics.get(topic.name) is not topic:
                raise BusError(f"unknown topic {topic.name!r}")
            return topic
        return self.topic(topic)

    def publish(self, topic, payload, tick: Optional[int] = None) -> int:
        t = self._resolve(topic)
        if type(payload) is not t.kind:
            raise KindMismatchError(
                f"topic {t.name!r} carries {t.kind.__name__}, got {type(payload).__name__}")
        tick = self.tick if tick is None else tick
        if tick < self._last_publish_tick:
            raise BusError(f"publish at tick {tick} after tick {self._last_publish_tick}")
        self._last_publish_tick = tick
        seq = t.next_seq
        t.next_seq += 1
        if t._last[0] is payload:
            pj = t._last[1]
        else:
            pj = messages.encode_payload(payload)
            t._last = (payload, pj)
        env = Envelope(t.name, seq, tick, tick * self.dt, payload, pj)
        self._pending.append(env)
        self._emit(tick, env.sim_time, "topic", t.name, seq, pj, payload)
        return seq

    def subscribe(self, topic, qos: QosPolicy = LOSSLESS, owner: str = "",
                  callback: Optional[Callable[[Envelope], None]] = None) -> Subscription:
        t = self._resolve(topic)
        n = sum(1 for s in t.subscriptions if s.owner == owner)
        sub_id = f"{t.name}|{owner}#{n}"
        rng = derive_rng(self.seed, "qos", t.name, f"{owner}#{n}")
        sub = Subscription(t, owner, sub_id, qos, callback, rng)
        t.subscriptions.append(sub)
        self._subs[sub_id] = sub
        return sub

    def subscriptions(self, topic=None) -> list[Subscription]:
        if topic is None:
            return list(self._subs.values())
        return list(self._resolve(topic).subscriptions)

    def set_qos(self, subscription, qos: QosPolicy) -> None:
        sub_id = subscription.id if isinstance(subscription, Subscription) else subscription
        sub = self._subs.get(sub_id)
        if sub is None or (isinstance(subscription, Subscription) and sub is not subscription):
            raise BusError(f"unknown subscription {sub_id!r}")
        sub.qos = qos

    def deliver(self, tick: int) -> int:
        """Dispatch everything published before ``tick``; returns delivery count."""
        self.tick = tick
        pending, self._pending = self._pending, []
        n = 0
        for env in pending:
            for sub in self._topics[env.topic].subscriptions:
                if sub.admit(env):
                    sub.delivered += 1
                    n += 1
                    if sub.callback is not None:
                        sub.callback(env)
                    else:
                        sub.inbox.append(env)
        return n

    def pending(self) -> list[Envelope]:
        return list(self._pending)

    # -- services ----------------------------------------------------------

    def register_service(self, name: str, handler: Callable[[Any], Any]) -> None:
        if name in self._services:
            raise ServiceError(f"duplicate service {name!r}")
        self._services[name] = handler
        self._service_seq[name] = 0

    def call_service(self, name: str, request, tick: Optional[int] = None):
        handler = self._services.get(name)
        if handler is None:
            raise ServiceError(f"no handler registered for service {name!r}")
        tick = self.tick if tick is None else tick
        seq = self._service_seq[name]
        self._service_seq[name] = seq + 1
        st = tick * self.dt
        self._emit(tick, st, "service_req", name, seq, messages.encode_payload(request), request)
        try:
            response = handler(request)
        except Exception as exc:
            fault = messages.ServiceFault(type(exc).__name__, str(exc))
            self._emit(tick, st, "service_resp", name, seq, messages.encode_payload(fault), fault)
            raise
        self._emit(tick, st, "service_resp", name, seq, messages.encode_payload(response), response)
        return response

    # -- actions -----------------------------------------------------------

    def register_action(self, name: str, server: ActionServer) -> None:
        if name in self._actions:
            raise ActionError(f"duplicate action server {name!r}")
        self._actions[name] = server
        self._action_seq[name] = 0

    def start_action(self, name: str, goal, tick: Optional[int] = None) -> ActionHandle:
        server = self._actions.get(name)
        if server is None:
            raise ActionError(f"unknown action {name!r}")
        if name in self._active_actions:
            raise ActionError(f"action {name!r} already has an active goal; rejected")
        tick = self.tick if tick is None else tick
        server.accept(goal, tick)
        seq = self._action_seq[name]
        self._action_seq[name] = seq + 1
        self._emit(tick, tick * self.dt, "action_goal", name, seq, messages.encode_payload(goal), goal)
        handle = ActionHandle(name, goal, seq, tick)
        self._active_actions[name] = handle
        return handle

    def cancel_action(self, handle: ActionHandle) -> bool:
        """Request cancellation; honored at the next tick boundary. False if already done."""
        if handle.done:
            return False
        handle.cancel_requested = True
        return True

    def step_actions(self, tick: int) -> None:
        for name in list(self._active_actions):
            handle = self._active_actions[name]
            if tick <= handle.start_tick:
                continue
            server = self._actions[name]
            st = tick * self.dt
            if handle.cancel_requested:
                result = server.cancel(tick)
                handle.status = "cancelled"
            else:
                feedback, result = server.step(tick)
                for fb in feedback:
                    handle.feedback.append(fb)
                    self._emit(tick, st, "action_feedback", name, handle.goal_seq,
                               messages.encode_payload(fb), fb)
                if result is None:
                    continue
                handle.status = "succeeded"
            handle.result = result
            self._emit(tick, st, "action_result", name, handle.goal_seq,
                       messages.encode_payload(result), result)
            del self._active_actions[name]

    # -- ticking -------------------------------------------------------------

    def advance(self, tick: int) -> None:
        """Start-of-tick work: deliveries, then action progress."""
        self.deliver(tick)
        self.step_actions(tick)

    # -- recording -----------------------------------------------------------

    def header(self) -> dict:
        return {"format_version": BAG_FORMAT_VERSION, "scenario_hash": self.scenario_hash,
                "seed": self.seed, "dt": self.dt}

    def record(self, target) -> BagWriter:
        w = BagWriter(target, self.header(),
                      lambda: {n: t.kind.__name__ for n, t in self._topics.items()})
        self._writers.append(w)
        return w

    def close(self) -> None:
        for w in self._writers:
            w.close()
        self._writers = []

    def _emit(self, tick, sim_time, kind, name, seq, payload_json, payload) -> None:
        if self._writers:
            line = _line(tick, sim_time, kind, name, seq, payload_json)
            for w in self._writers:
                w.write(line)
        if self.taps:
            rec = BagRecord(tick, sim_time, kind, name, seq, payload, payload_json)
            for tap in self.taps:
                tap(rec)

    def emit_raw(self, rec: "BagRecord") -> None:
        """Re-emit a non-topic record verbatim (replay of service/action traffic)."""
        self._emit(rec.tick, rec.sim_time, rec.kind, rec.name, rec.seq, rec.payload_json, rec.payload)

    def replay(self, records: "Bag | str", until_tick: Optional[int] = None) -> int:
        """Republish a bag on this bus at the original ticks; returns records replayed."""
        bag = records if isinstance(records, Bag) else read_bag(records)
        for name, kind in bag.header.get("topics", {}).items():
            self.ensure_topic(name, kind)
        n = 0
        current = None
        for rec in bag.records:
            if until_tick is not None and rec.tick > until_tick:
                break
            if rec.tick != current:
                current = rec.tick
                self.advance(rec.tick)
            if rec.kind == "topic":
                t = self.ensure_topic(rec.name, type(rec.payload))
                seq = self.publish(t, rec.payload, rec.tick)
                if seq != rec.seq:
                    raise BagFormatError(f"seq {rec.seq} on {rec.name!r} replayed as {seq}", rec.line)
            else:
                self.emit_raw(rec)
            n += 1
        return n


@dataclass(frozen=True)
class BagRecord:
    tick: int
    sim_time: float
    kind: str
    name: str
    seq: int
    payload: Any
    payload_json: str = field(default="", compare=False, repr=False)
    line: int = field(default=0, compare=False)

    def envelope(self) -> Envelope:
        return Envelope(self.name, self.seq, self.tick, self.sim_time, self.payload, self.payload_json)


@dataclass
class Bag:
    header: dict
    records: list[BagRecord]

    def topic_records(self, topic: Optional[str] = None) -> list[BagRecord]:
        return [r for r in self.records if r.kind == "topic" and (topic is None or r.name == topic)]

    def __iter__(self) -> Iterator[BagRecord]:
        return iter(self.records)


_REQUIRED = ("tick", "sim_time", "kind", "topic_or_name", "seq", "payload")


def parse_bag(text_lines, decode: bool = True) -> Bag:
    header = None
    records = []
    last_tick = None
    for lineno, raw in enumerate(text_lines, start=1):
        raw = raw.rstrip("\n")
        if not raw.strip():
            raise BagFormatError("empty line", lineno)
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise BagFormatError(f"malformed JSON ({exc.msg})", lineno) from None
        if header is None:
            if not isinstance(obj, dict) or "format_version" not in obj:
                raise BagFormatError("missing bag header", lineno)
            if obj["format_version"] != BAG_FORMAT_VERSION:
                raise BagFormatError(f"unsupported format_version {obj['format_version']}", lineno)
            header = obj
            continue
        if not isinstance(obj, dict) or any(k not in obj for k in _REQUIRED):
            raise BagFormatError("record lacks required fields", lineno)
        if obj["kind"] not in RECORD_KINDS:
            raise BagFormatError(f"unknown record kind {obj['kind']!r}", lineno)
        if last_tick is not None and obj["tick"] < last_tick:
            raise BagFormatError("ticks out of order", lineno)
        last_tick = obj["tick"]
        payload = obj["payload"]
        try:
            msg = messages.from_payload(payload) if decode else payload
        except (UavSimError, TypeError, KeyError, ValueError) as exc:
            raise BagFormatError(f"bad payload: {exc}", lineno) from None
        records.append(BagRecord(obj["tick"], float(obj["sim_time"]), obj["kind"],
                                 obj["topic_or_name"], obj["seq"], msg,
                                 messages.dumps(payload), lineno))
    if header is None:
        raise BagFormatError("empty bag", 1)
    return Bag(header, records)


def read_bag(path, decode: bool = True) -> Bag:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_bag(fh, decode)
    except OSError as exc:
        raise StorageError(f"cannot read bag {path}: {exc}") from exc


def replay(path) -> Iterator[Envelope]:
    """Stream the topic envelopes of a bag in recorded order."""
    for rec in read_bag(path).records:
        if rec.kind == "topic":
            yield rec.envelope()


def bag_text(bus_fn: Callable[[Bus], None], **bus_kwargs) -> str:
    """Run ``bus_fn`` on a fresh recorded bus and return the bag contents."""
    buf = io.StringIO()
    bus = Bus(**bus_kwargs)
    bus.record(buf)
    bus_fn(bus)
    bus.close()
    return buf.getvalue()
