"""CSV trace export from bags.

One CSV per topic (``/`` in the name becomes ``__``) with a column layout
fixed by the topic's message kind, so a topic that never carried a message
still gets its header row. Variable-length fields (obstacle lists, path
samples) are stored as a JSON cell. Floats are written with ``repr``, the
shortest decimal that parses back to the same double.

Each vehicle additionally gets ``<uav>_trace.csv``, a per-tick join of truth,
estimate, reference, input and error norms. ``CONVENTIONS.txt`` records the
frame and units so the CSVs can be plotted without reading the code.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import types
import typing
from pathlib import Path as FsPath
from typing import Union

from .. import messages
from ..bus import Bag, read_bag
from ..errors import StorageError
from ..vehicle import STATE_FIELDS

_XYZ = ("x", "y", "z")

CONVENTIONS = """Frame: local NED. x points north, y east, z down (z-down convention).
Altitude is -z, so a vehicle 10 m above the origin has z = -10.
Gravity acts along +z. Positions are in m, velocities in m/s, accelerations in m/s^2.
Angles (phi, theta, psi) are roll, pitch and yaw in rad, wrapped to (-pi, pi].
p_rate, q_rate and r_rate are body angular rates in rad/s. ft is total thrust in N.
tau_x, tau_y and tau_z are body torques in N m.
IMU accel is specific force in the body frame, so level hover reads (0, 0, -g).
tick is the step index. sim_time = tick * dt in s. A message published on tick N is delivered on tick N + 1.
Floats are written as the shortest decimal that parses back to the same double.
Cells holding lists (obstacles, path samples) are JSON.
"""


def _layout(hint, prefix: str) -> list[tuple[str, tuple, bool]]:
    """Columns as (name, path into the JSON payload, is_json_cell)."""
    if hint in (float, int, bool, str):
        return [(prefix, (), False)]
    if dataclasses.is_dataclass(hint):
        cols = []
        for name, h in messages._fields(hint):
            for col, path, js in _layout(h, f"{prefix}.{name}" if prefix else name):
                cols.append((col, (name,) + path, js))
        return cols
    origin = typing.get_origin(hint)
    if origin is tuple:
        args = typing.get_args(hint)
        if not (len(args) == 2 and args[1] is Ellipsis):
            labels = _XYZ if len(args) == 3 else [str(i) for i in range(len(args))]
            cols = []
            for i, (lab, h) in enumerate(zip(labels, args)):
                for col, path, js in _layout(h, f"{prefix}_{lab}"):
                    cols.append((col, (i,) + path, js))
            return cols
    if origin in (Union, types.UnionType) and len(typing.get_args(hint)) == 2:
        inner = [a for a in typing.get_args(hint) if a is not type(None)][0]
        if not dataclasses.is_dataclass(inner):
            return _layout(inner, prefix)
    return [(prefix, (), True)]


def columns(kind: str) -> list[str]:
    return ["tick", "sim_time", "seq"] + [c for c, _, _ in _layout(messages.kind_of(kind), "")]


def _cell(value, as_json: bool) -> str:
    if as_json:
        return messages.dumps(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _dig(obj, path):
    for p in path:
        if obj is None:
            return None
        obj = obj[p]
    return obj


def _payload_dict(rec) -> dict:
    return json.loads(rec.payload_json)


def topic_filename(topic: str) -> str:
    return topic.replace("/", "__") + ".csv"


def _write(path: FsPath, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def export_bag(bag: Union[Bag, str, FsPath], out_dir) -> list[FsPath]:
    """Write every topic CSV plus per-vehicle traces; returns the files written."""
    if not isinstance(bag, Bag):
        bag = read_bag(bag)
    out = FsPath(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create export directory {out}: {exc}") from exc
    topics = dict(bag.header.get("topics", {}))
    by_topic: dict[str, list] = {name: [] for name in topics}
    for rec in bag.records:
        if rec.kind == "topic":
            by_topic.setdefault(rec.name, []).append(rec)
            topics.setdefault(rec.name, type(rec.payload).__name__)
    written = []
    try:
        for name in sorted(by_topic):
            layout = _layout(messages.kind_of(topics[name]), "")
            rows = []
            for rec in by_topic[name]:
                d = _payload_dict(rec)
                rows.append([str(rec.tick), repr(rec.sim_time), str(rec.seq)]
                            + [_cell(_dig(d, path), js) for _, path, js in layout])
            p = out / topic_filename(name)
            _write(p, columns(topics[name]), rows)
            written.append(p)
        for uav in _vehicles(topics):
            p = out / f"{uav}_trace.csv"
            _write(p, TRACE_COLUMNS, _trace_rows(uav, by_topic))
            written.append(p)
        p = out / "CONVENTIONS.txt"
        p.write_text(CONVENTIONS, encoding="utf-8")
        written.append(p)
    except OSError as exc:
        raise StorageError(f"cannot write export to {out}: {exc}") from exc
    return written


def _vehicles(topics) -> list[str]:
    return sorted(name.split("/")[0] for name, kind in topics.items()
                  if name.endswith("/truth") and kind == "UavState")


TRACE_COLUMNS = (["tick", "sim_time"] + [f"truth_{f}" for f in STATE_FIELDS]
                 + [f"est_{f}" for f in STATE_FIELDS]
                 + ["ref_x", "ref_y", "ref_z", "ref_vx", "ref_vy", "ref_vz", "ref_yaw"]
                 + ["ft", "tau_x", "tau_y", "tau_z", "error_norm", "position_error"])


def _trace_rows(uav: str, by_topic: dict) -> list[list[str]]:
    def index(topic):
        return {rec.tick: _payload_dict(rec) for rec in by_topic.get(f"{uav}/{topic}", [])}

    truth, est, trk, cmd = index("truth"), index("state_est"), index("tracking"), index("cmd")
    rows = []
    for rec in by_topic.get(f"{uav}/truth", []):
        k = rec.tick
        row = [str(k), repr(rec.sim_time)]
        row += [_cell(truth[k][f], False) for f in STATE_FIELDS]
        e = est.get(k)
        row += [_cell(e[f], False) if e else "" for f in STATE_FIELDS]
        t = trk.get(k)
        if t:
            row += [_cell(v, False) for v in t["reference_position"] + t["reference_velocity"]]
            row.append(_cell(t["reference_yaw"], False))
        else:
            row += [""] * 7
        c = cmd.get(k)
        row += [_cell(c[f], False) if c else "" for f in ("ft", "tau_x", "tau_y", "tau_z")]
        row += [_cell(t[f], False) if t else "" for f in ("error_norm", "position_error")]
        rows.append(row)
    return rows


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
