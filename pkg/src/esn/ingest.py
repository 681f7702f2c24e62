"""Compile multi-domain JSONL scenario logs into ESN facts.

A log file holds one JSON object per line.  The first line has
``"type": "meta"``; every other line is a trajectory, cockpit, roadside,
vehicle_state, map or landmark record.  Timestamps become integer
deciseconds from ``meta.start_time`` so that rule arithmetic on time is
exact.
"""

from __future__ import annotations

import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Optional, Union

from .datamodel import Compound, FactBase, Symbol, Text
from .errors import GridError, MissingGridError, NonMonotonicTimeError, SchemaError
from .numeric import Numeric, _round_half_away

DECI = 100  # scaled units of Numeric per decisecond
TTC_MAX = 999

_IDENT_RE = re.compile(r"^[a-z][A-Za-z0-9_]*$")

TRAJECTORY_FIELDS = ("t", "object_id", "class", "x", "y", "z", "vx", "vy", "vz", "heading")
MAP_FIELDS = ("lane_id", "y_min", "y_max", "x_start", "x_end", "speed_limit")
COCKPIT_KINDS = ("driver_state", "voice_command", "touch_event", "brake_pedal_pressed")
ROADSIDE_KINDS = ("traffic_light_state", "v2x_warning", "spat")
VEHICLE_KINDS = ("abs_status", "turn_signal", "brake_light_on")
STREAMS = ("trajectory", "cockpit", "roadside", "vehicle_state", "map", "landmark")


@dataclass
class ScenarioLog:
    meta: dict = field(default_factory=dict)
    trajectory: list = field(default_factory=list)
    cockpit: list = field(default_factory=list)
    roadside: list = field(default_factory=list)
    vehicle_state: list = field(default_factory=list)
    map: list = field(default_factory=list)
    landmark: list = field(default_factory=list)

    def records(self):
        """All non-meta records as ``(stream, record)`` in stream order."""
        for stream in STREAMS:
            for rec in getattr(self, stream):
                yield stream, rec


@dataclass
class IngestReport:
    facts_emitted: Counter = field(default_factory=Counter)
    records_dropped: list = field(default_factory=list)
    derived: Counter = field(default_factory=Counter)

    @property
    def total(self) -> int:
        return sum(self.facts_emitted.values())

    def to_dict(self) -> dict:
        return {
            "facts_emitted": dict(sorted(self.facts_emitted.items())),
            "records_dropped": list(self.records_dropped),
            "derived": dict(sorted(self.derived.items())),
            "total": self.total + sum(self.derived.values()),
        }


# -- JSONL io ------------------------------------------------------------

def _dump(value) -> str:
    """Deterministic JSON with numbers written in canonical decimal form."""
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, Numeric):
        return str(value)
    if isinstance(value, (int, Decimal)):
        return str(Numeric.of(value)) if isinstance(value, Decimal) else str(value)
    if isinstance(value, float):
        return str(Numeric.of(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_dump(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_dump(v) for v in value) + "]"
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps_log(log: ScenarioLog) -> str:
    lines = [_dump({"type": "meta", **log.meta})]
    for stream, rec in log.records():
        lines.append(_dump({"type": stream, **_public(rec)}))
    return "\n".join(lines) + "\n"


def write_log(log: ScenarioLog, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps_log(log), encoding="utf-8")


def loads_log(text: str) -> ScenarioLog:
    log = ScenarioLog()
    seen_meta = False
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            raise SchemaError({"line": lineno}, "json", str(exc), lineno) from None
        if not isinstance(obj, dict):
            raise SchemaError({"line": lineno}, "type", "each line must be a JSON object", lineno)
        kind = obj.pop("type", None)
        if kind == "meta":
            if seen_meta:
                raise SchemaError({"line": lineno}, "type", "duplicate meta line", lineno)
            log.meta = obj
            seen_meta = True
        elif not seen_meta:
            raise SchemaError({"line": lineno}, "type", "first line must be the meta record", lineno)
        elif kind in STREAMS:
            obj["_line"] = lineno
            getattr(log, kind).append(obj)
        else:
            raise SchemaError({"line": lineno, **obj}, "type", f"unknown record type {kind!r}", lineno)
    if not seen_meta and text.strip():
        raise SchemaError({}, "type", "missing meta record")
    return log


def read_log(path: Union[str, Path]) -> ScenarioLog:
    return loads_log(Path(path).read_text(encoding="utf-8"))


# -- field access --------------------------------------------------------

def _public(rec: dict) -> dict:
    return {k: v for k, v in rec.items() if not k.startswith("_")}


def _fail(rec: dict, name: str, message: str) -> SchemaError:
    return SchemaError(_public(rec), name, message, rec.get("_line", 0))


def _require(rec: dict, name: str):
    if name not in rec:
        raise _fail(rec, name, "missing field")
    return rec[name]


def _number(rec: dict, name: str, value=None) -> Numeric:
    value = _require(rec, name) if value is None else value
    if isinstance(value, bool) or not isinstance(value, (int, float, Decimal, Numeric)):
        raise _fail(rec, name, "expected a number")
    try:
        return Numeric.of(value)
    except (ValueError, ArithmeticError) as exc:
        raise _fail(rec, name, str(exc)) from None


def _ident(rec: dict, name: str, value=None):
    value = _require(rec, name) if value is None else value
    if isinstance(value, str) and value:
        return Symbol(value) if _IDENT_RE.match(value) else Text(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return Numeric.of(value)
    raise _fail(rec, name, "expected an identifier")


def _payload_field(rec: dict, name: str):
    payload = rec.get("payload") or {}
    if not isinstance(payload, dict):
        raise _fail(rec, "payload", "expected an object")
    if name in rec:
        return rec[name]
    if name in payload:
        return payload[name]
    raise _fail(rec, f"payload.{name}", "missing field")


class _Clock:
    """Converts record times to deciseconds and checks grid alignment."""

    def __init__(self, meta: dict):
        rec = {"type": "meta", **meta}
        self.start = _number(rec, "start_time", meta.get("start_time", 0))
        step = _number(rec, "time_step", meta.get("time_step", Decimal("0.1")))
        if step.scaled <= 0 or step.scaled % DECI:
            raise SchemaError(rec, "time_step", "must be a positive multiple of 0.1 s")
        self.step = step
        self.step_deci = step.scaled // DECI

    def deci(self, rec: dict, on_grid: bool = False) -> Numeric:
        t = _number(rec, "t")
        offset = t.scaled - self.start.scaled
        if offset < 0:
            raise GridError(f"record at t={t} precedes scenario start {self.start}: {_public(rec)}")
        if offset % DECI:
            raise GridError(f"t={t} is not a whole number of deciseconds: {_public(rec)}")
        d = offset // DECI
        if on_grid and d % self.step_deci:
            raise GridError(f"t={t} is off the {self.step} s grid: {_public(rec)}")
        return Numeric.of(d)


def _label(f: Compound) -> str:
    if f.functor in ("holds", "occurs") and isinstance(f.args[0], Compound):
        return f"{f.functor}/{f.args[0].functor}"
    return f.functor


# -- ASP-ification -------------------------------------------------------

def asp_ify(log: ScenarioLog, fb: Optional[FactBase] = None) -> tuple[FactBase, IngestReport]:
    """Translate ``log`` into facts, inserting into ``fb`` (a new base by default)."""
    fb = FactBase() if fb is None else fb
    report = IngestReport()

    def emit(f: Compound) -> None:
        if fb.insert(f):
            report.facts_emitted[_label(f)] += 1

    if not log.meta and not any(True for _ in log.records()):
        return fb, report
    clock = _Clock(log.meta)
    meta_rec = {"type": "meta", **log.meta}
    if log.meta.get("ego") is not None:
        emit(Compound("object_property", (_ident(meta_rec, "ego"), Symbol("role"), Symbol("ego"))))
    for obj, role in (log.meta.get("roles") or {}).items():
        emit(Compound("object_property", (_ident(meta_rec, "roles", obj),
                                          Symbol("role"), _ident(meta_rec, "roles", role))))

    last: dict = {}

    def monotone(key, t: Numeric, rec: dict) -> None:
        prev = last.get(key)
        if prev is not None and t <= prev:
            raise NonMonotonicTimeError(
                f"timestamp {t} does not follow {prev} for {key[1]!s}: {_public(rec)}")
        last[key] = t

    for rec in log.map:
        lane = _ident(rec, "lane_id")
        emit(Compound("map_lane", (lane, *(_number(rec, k) for k in MAP_FIELDS[1:]))))
        if "stop_line_x" in rec:
            emit(Compound("stop_line", (lane, _number(rec, "stop_line_x"))))

    for rec in log.landmark:
        emit(Compound("landmark", (_ident(rec, "name"), _number(rec, "x"), _number(rec, "y"))))

    for rec in log.trajectory:
        for name in TRAJECTORY_FIELDS:
            _require(rec, name)
        T = clock.deci(rec, on_grid=True)
        oid = _ident(rec, "object_id")
        monotone(("trajectory", oid), T, rec)
        x, y, z = (_number(rec, k) for k in ("x", "y", "z"))
        vx, vy, vz = (_number(rec, k) for k in ("vx", "vy", "vz"))
        emit(Compound("holds", (Compound("position", (oid, x, y, z)), T)))
        emit(Compound("holds", (Compound("velocity", (oid, vx, vy, vz)), T)))
        emit(Compound("holds", (Compound("heading", (oid, _number(rec, "heading"))), T)))
        emit(Compound("object_property", (oid, Symbol("class"), _ident(rec, "class"))))
        if all(k in rec for k in ("length", "width", "height")):
            emit(Compound("object_property", (oid, Symbol("dimension"),
                                              *(_number(rec, k) for k in ("length", "width", "height")))))

    for index, rec in enumerate(log.cockpit):
        kind = _require(rec, "kind")
        if kind not in COCKPIT_KINDS:
            report.records_dropped.append(
                {"stream": "cockpit", "index": index, "reason": f"unknown kind {kind!r}"})
            continue
        T = clock.deci(rec)
        if kind == "voice_command":
            text = _payload_field(rec, "text")
            if not isinstance(text, str):
                raise _fail(rec, "payload.text", "expected a string")
            monotone(("cockpit", kind), T, rec)
            emit(Compound("occurs", (Compound("voice_command", (Text(text),)), T)))
            continue
        if kind == "touch_event":
            target = _ident(rec, "payload.target", _payload_field(rec, "target"))
            monotone(("cockpit", kind), T, rec)
            emit(Compound("occurs", (Compound("touch_event", (target,)), T)))
            continue
        oid = _ident(rec, "id", _payload_field(rec, "id"))
        monotone(("cockpit", kind, oid), T, rec)
        if kind == "driver_state":
            state = _ident(rec, "payload.state", _payload_field(rec, "state"))
            emit(Compound("holds", (Compound("driver_state", (oid, state)), T)))
        else:
            emit(Compound("occurs", (Compound("brake_pedal_pressed", (oid,)), T)))

    for index, rec in enumerate(log.roadside):
        kind = _require(rec, "kind")
        if kind not in ROADSIDE_KINDS:
            report.records_dropped.append(
                {"stream": "roadside", "index": index, "reason": f"unknown kind {kind!r}"})
            continue
        T = clock.deci(rec)
        if kind == "v2x_warning":
            warning = _ident(rec, "payload.warning", _payload_field(rec, "warning"))
            monotone(("roadside", kind, warning), T, rec)
            emit(Compound("occurs", (Compound("v2x_warning", (warning,)), T)))
            continue
        signal = _ident(rec, "payload.signal", _payload_field(rec, "signal"))
        state = _ident(rec, "payload.state", _payload_field(rec, "state"))
        monotone(("roadside", kind, signal), T, rec)
        emit(Compound("holds", (Compound("traffic_light_state", (signal, state)), T)))
        if kind == "spat" and "time_to_change" in (rec.get("payload") or {}):
            remaining = _number(rec, "payload.time_to_change", rec["payload"]["time_to_change"])
            emit(Compound("holds", (Compound("time_to_change", (signal, remaining)), T)))

    for index, rec in enumerate(log.vehicle_state):
        kind = _require(rec, "kind")
        if kind not in VEHICLE_KINDS:
            report.records_dropped.append(
                {"stream": "vehicle_state", "index": index, "reason": f"unknown kind {kind!r}"})
            continue
        T = clock.deci(rec)
        oid = _ident(rec, "id", _payload_field(rec, "id"))
        monotone(("vehicle_state", kind, oid), T, rec)
        if kind == "brake_light_on":
            emit(Compound("occurs", (Compound("brake_light_on", (oid,)), T)))
        else:
            state = _ident(rec, "payload.state", _payload_field(rec, "state"))
            emit(Compound("holds", (Compound(kind, (oid, state)), T)))

    return fb, report


# -- derived kinematics --------------------------------------------------

def _series(fb: FactBase, name: str) -> dict:
    """``{object: {T: fluent args}}`` for ``holds(name(Obj, ...), T)`` facts."""
    out: dict = defaultdict(dict)
    for f in fb.bucket("holds", 2, (name, 4 if name in ("position", "velocity") else 2)):
        inner, T = f.args
        out[inner.args[0]][T.scaled // 1000] = inner.args[1:]
    return out


def _check_grid(obj, times: list, step: int) -> None:
    for a, b in zip(times, times[1:]):
        if b - a != step:
            raise MissingGridError(f"samples of {obj} jump from T={a} to T={b} (step {step})")


def _lanes(fb: FactBase) -> list:
    lanes = []
    for f in sorted(fb.bucket("map_lane", 6), key=lambda f: str(f.args[0])):
        lane, ymin, ymax, xs, xe, _ = f.args
        lanes.append((lane, ymin.scaled, ymax.scaled, xs.scaled, xe.scaled))
    return lanes


def _lane_key(lanes: list, x: Numeric, y: Numeric, z: Numeric):
    if not lanes:
        return (y.scaled, z.scaled)
    for lane, ymin, ymax, xs, xe in lanes:
        if ymin <= y.scaled < ymax and xs <= x.scaled <= xe:
            return lane
    return None


def ttc_deci(gap: Numeric, closing: Numeric) -> Optional[Numeric]:
    """Time to collision in deciseconds, or ``None`` when not closing."""
    if closing.scaled <= 0:
        return None
    value = _round_half_away(gap.scaled * 10, closing.scaled)
    return Numeric.of(min(max(value, 0), TTC_MAX))


def derive_kinematics(fb: FactBase, time_step) -> FactBase:
    """Return the acceleration, jerk and ttc_deci facts implied by ``fb``.

    Acceleration and jerk use forward differences of vx, so the last one
    (acceleration) or two (jerk) samples of each object carry no value.
    The input base is not modified.
    """
    dt = Numeric.of(time_step)
    if dt.scaled <= 0 or dt.scaled % DECI:
        raise GridError(f"time step {dt} is not a positive multiple of 0.1 s")
    step = dt.scaled // DECI
    out = FactBase()
    velocities = _series(fb, "velocity")

    for obj in sorted(velocities, key=str):
        series = velocities[obj]
        times = sorted(series)
        _check_grid(obj, times, step)
        accel = {}
        for a, b in zip(times, times[1:]):
            accel[a] = (series[b][0] - series[a][0]) / dt
            out.insert(Compound("holds", (Compound("acceleration", (obj, accel[a])), Numeric.of(a))))
        for a in times:
            b = a + step
            if a in accel and b in accel:
                jerk = (accel[b] - accel[a]) / dt
                out.insert(Compound("holds", (Compound("jerk", (obj, jerk)), Numeric.of(a))))

    lanes = _lanes(fb)
    positions = _series(fb, "position")
    by_time: dict = defaultdict(list)
    for obj, series in positions.items():
        for T, (x, y, z) in series.items():
            v = velocities.get(obj, {}).get(T)
            if v is None:
                continue
            key = _lane_key(lanes, x, y, z)
            if key is not None:
                by_time[T].append((key, x, v[0], obj))
    for T in sorted(by_time):
        groups: dict = defaultdict(list)
        for key, x, vx, obj in by_time[T]:
            groups[key].append((x, vx, obj))
        for members in groups.values():
            members.sort(key=lambda m: (m[0].scaled, str(m[2])))
            for i, (xa, va, a) in enumerate(members):
                for xb, vb, b in members[i + 1:]:
                    if xb <= xa:
                        continue
                    ttc = ttc_deci(xb - xa, va - vb)
                    if ttc is not None:
                        out.insert(Compound("holds", (Compound("ttc_deci", (a, b, ttc)),
                                                      Numeric.of(T))))
    return out


def ingest(log: ScenarioLog, fb: Optional[FactBase] = None) -> tuple[FactBase, IngestReport]:
    """``asp_ify`` followed by ``derive_kinematics``; derived facts are added to the base."""
    fb, report = asp_ify(log, fb)
    if len(fb) == 0:
        return fb, report
    derived = derive_kinematics(fb, _Clock(log.meta).step)
    for f in derived:
        if fb.insert(f):
            report.derived[f.args[0].functor] += 1
    return fb, report


def generate_scenario(scenario_id: str, variant: str, seed: int) -> ScenarioLog:
    from .scenarios import generate_scenario as _generate

    return _generate(scenario_id, variant, seed)
