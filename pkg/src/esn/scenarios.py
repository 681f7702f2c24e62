"""Synthetic desk-scale scenarios with seeded ground truth.

Every generator draws its parameters from ``random.Random(f"{id}:{seed}")``
so the compliant and violating variants of one seed share geometry and
differ only in the ego's behaviour.  Lengths are built in millimetres and
speeds in mm/s; the resulting log carries three-decimal values.

Scenario            target query  what the violating variant does
SC-01 left turn     Q-06          turns with an oncoming car < 5 s from the conflict point
SC-02 pedestrian    Q-08          keeps speed until TTC to the pedestrian is <= 4 s
SC-04 red runner    Q-02          accelerates past the 30 mph limit after the light turns green
SC-12 cut-in        Q-04          lets the cut-in happen at a headway below 1.5 s
SC-13 lead braking  Q-F3          no brake pedal within 0.5 s of the lead's brake light
SC-20 platoon       Q-04          reacts to the leader's braking 2 s or more late
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .errors import UnknownScenarioId
from .ingest import ScenarioLog
from .numeric import Numeric, _round_half_away

SCENARIOS = {
    "SC-01": "Q-06",
    "SC-02": "Q-08",
    "SC-04": "Q-02",
    "SC-12": "Q-04",
    "SC-13": "Q-F3",
    "SC-20": "Q-04",
}
VARIANTS = ("compliant", "violating")
EPOCH_OFFSET = "1622541987.0"

LANE_W = 3500
LANE_0 = -LANE_W // 2          # parking strip centre
LANE_1 = LANE_W // 2
LANE_2 = LANE_W + LANE_W // 2


def _milli(v) -> Numeric:
    """Millimetre-scaled int or Fraction to a Numeric in metres."""
    if isinstance(v, Fraction):
        return Numeric(_round_half_away(v.numerator, v.denominator))
    return Numeric(int(v))


@dataclass
class Sample:
    step: int
    x: object
    y: object
    vx: int
    vy: int
    heading: object  # milli-degrees


@dataclass
class Track:
    object_id: str
    cls: str
    samples: list = field(default_factory=list)

    def at(self, step: int) -> Sample:
        return self.samples[step - self.samples[0].step]

    def records(self, start=0) -> list:
        out = []
        for s in self.samples:
            out.append({
                "t": Numeric(start + s.step * 100), "object_id": self.object_id, "class": self.cls,
                "x": _milli(s.x), "y": _milli(s.y), "z": Numeric(0),
                "vx": Numeric(s.vx), "vy": Numeric(s.vy), "vz": Numeric(0),
                "heading": _milli(s.heading),
            })
        return out


def longitudinal(x0, v0: int, steps: int, accel: Callable[[int, int], int],
                 vmax: Optional[int] = None) -> list:
    """Integrate a 1-D profile with per-step constant acceleration.

    ``accel(k, v)`` returns mm/s^2 for the step from k to k+1.  Speed is
    clamped to ``[0, vmax]``; the step that reaches a bound uses the exact
    acceleration that lands on it.  Returns ``[(x, v)]`` for k = 0..steps-1.
    """
    x, v = Fraction(x0), v0
    out = []
    for k in range(steps):
        out.append((x, v))
        a = accel(k, v)
        v_next = v + Fraction(a, 10)
        if v_next < 0:
            v_next = Fraction(0)
        if vmax is not None and v_next > vmax:
            v_next = Fraction(vmax)
        x += (v + v_next) / 20      # trapezoid == exact for constant acceleration
        v = int(v_next) if v_next.denominator == 1 else v_next
    return [(x, int(round(v))) for x, v in out]


def straight_track(object_id: str, cls: str, profile: list, lateral: int,
                   heading_deg: int = 0, first_step: int = 0) -> Track:
    """Track along +x (heading 0) or -x (heading 180) from a longitudinal profile."""
    sign = -1 if heading_deg == 180 else 1
    t = Track(object_id, cls)
    for k, (x, v) in enumerate(profile):
        t.samples.append(Sample(first_step + k, sign * x, lateral, sign * v, 0, heading_deg * 1000))
    return t


def stationary_track(object_id: str, cls: str, x: int, y: int, steps: int,
                     heading_deg: int = 0) -> Track:
    t = Track(object_id, cls)
    for k in range(steps):
        t.samples.append(Sample(k, x, y, 0, 0, heading_deg * 1000))
    return t


def arc_track(object_id: str, cls: str, x0: int, y0: int, speed: int, radius: int,
              steps: int, turn_step: int) -> Track:
    """Drive +x at ``speed``, then turn left on a circle of ``radius``, then drive +y.

    The turn starts at ``turn_step`` at (x0 + speed*turn_step/10, y0).
    Heading changes by ``speed / radius`` radians per second during the arc.
    """
    t = Track(object_id, cls)
    xa = x0 + speed * turn_step / 10
    omega = speed / radius / 10          # radians per step
    quarter = math.pi / 2
    exit_k = quarter / omega
    for k in range(steps):
        if k <= turn_step:
            x, y, th = x0 + speed * k / 10, y0, 0.0
        elif k - turn_step < exit_k:
            th = (k - turn_step) * omega
            x = xa + radius * math.sin(th)
            y = y0 + radius * (1 - math.cos(th))
        else:
            th = quarter
            x = xa + radius
            y = y0 + radius + speed * (k - turn_step - exit_k) / 10
        t.samples.append(Sample(
            k, Fraction(round(x)), Fraction(round(y)),
            round(speed * math.cos(th)), round(speed * math.sin(th)),
            Fraction(round(math.degrees(th) * 1000)),
        ))
    return t


def arc_conflict_x(x0: int, speed: int, radius: int, turn_step: int, y0: int, y_cross: int) -> int:
    """x (mm) where the arc of :func:`arc_track` crosses the line y = y_cross."""
    xa = x0 + speed * turn_step / 10
    th = math.acos(1 - (y_cross - y0) / radius)
    return round(xa + radius * math.sin(th))


def _lane(lane_id: str, y_min: int, y_max: int, x_start=-300000, x_end=700000,
          limit=13411, **extra) -> dict:
    rec = {"lane_id": lane_id, "y_min": Numeric(y_min), "y_max": Numeric(y_max),
           "x_start": Numeric(x_start), "x_end": Numeric(x_end), "speed_limit": Numeric(limit)}
    rec.update({k: Numeric(v) for k, v in extra.items()})
    return rec


def _urban_map(**lane1_extra) -> list:
    return [
        _lane("lane_0", -LANE_W, 0),
        _lane("lane_1", 0, LANE_W, **lane1_extra),
        _lane("lane_2", LANE_W, 2 * LANE_W),
    ]


def _event(step: int, kind: str, **payload) -> dict:
    return {"t": Numeric(step * 100), "kind": kind, "payload": payload}


class _Builder:
    def __init__(self, scenario_id: str, variant: str, seed: int, steps: int):
        self.log = ScenarioLog()
        self.steps = steps
        self.log.meta = {
            "scenario_id": scenario_id, "variant": variant, "seed": seed,
            "time_step": Numeric(100), "start_time": Numeric(0),
            "epoch_offset": Numeric.parse(EPOCH_OFFSET), "ego": "ego", "roles": {},
            "labels": {SCENARIOS[scenario_id]: "violated" if variant == "violating" else "pass"},
        }

    def track(self, track: Track, role: Optional[str] = None) -> None:
        self.log.trajectory.extend(track.records())
        if role:
            self.log.meta["roles"][track.object_id] = role

    def finish(self) -> ScenarioLog:
        self.log.trajectory.sort(key=lambda r: (r["t"], r["object_id"]))
        for stream in ("cockpit", "roadside", "vehicle_state"):
            getattr(self.log, stream).sort(key=lambda r: r["t"])
        return self.log


def _hold(v_target: int, rate: int):
    """Controller approaching ``v_target`` at ``rate`` mm/s^2."""
    def accel(k, v):
        if v < v_target:
            return min(rate, (v_target - v) * 10)
        if v > v_target:
            return -min(rate, (v - v_target) * 10)
        return 0
    return accel


# -- SC-13 -----------------------------------------------------------------

def _sc13(rng: random.Random, violating: bool, b: _Builder) -> None:
    v_ego = rng.randint(180, 240) * 100
    closing = rng.randint(70, 100) * 100
    v_lead = v_ego - closing
    ttc = rng.randint(18, 27)
    t_brake_light = rng.randint(15, 25)
    react = rng.randint(7, 10) if violating else 3
    t_pedal = t_brake_light + react
    steps = t_brake_light + 35
    b.steps = steps
    gap = closing * ttc // 10
    x_lead0 = v_ego * t_brake_light // 10 + gap - v_lead * t_brake_light // 10
    spacing = rng.randint(60, 70) * 1000

    ego = longitudinal(0, v_ego, steps, lambda k, v: -9000 if k >= t_pedal else 0)
    lead = longitudinal(x_lead0, v_lead, steps, lambda k, v: -4000 if k >= t_brake_light else 0)
    lead2 = longitudinal(x_lead0 + spacing, v_lead, steps, lambda k, v: 0)
    lead3 = longitudinal(x_lead0 + 2 * spacing, v_lead, steps, lambda k, v: 0)
    b.track(straight_track("ego", "car", ego, LANE_1))
    b.track(straight_track("lead_1", "car", lead, LANE_1), "lead")
    b.track(straight_track("lead_2", "car", lead2, LANE_1), "lead")
    b.track(straight_track("lead_3", "truck", lead3, LANE_2), "lead")
    b.log.map = _urban_map()
    b.log.vehicle_state.append({**_event(t_brake_light, "brake_light_on"), "id": "lead_1"})
    b.log.vehicle_state.append({**_event(t_pedal, "brake_light_on"), "id": "ego"})
    b.log.cockpit.append({**_event(t_pedal, "brake_pedal_pressed"), "id": "ego"})
    b.log.cockpit.append({**_event(0, "driver_state", state="attentive"), "id": "ego"})


# -- SC-12 -----------------------------------------------------------------

def _sc12(rng: random.Random, violating: bool, b: _Builder) -> None:
    v_ego = rng.randint(220, 260) * 100
    closing = rng.randint(40, 60) * 100
    v_npc = v_ego - closing
    t_cut = rng.randint(20, 30)
    lateral_steps = 10
    t_enter = t_cut + 6                  # first step with y below the lane boundary
    steps = t_enter + 40
    if violating:
        ego = longitudinal(0, v_ego, steps, lambda k, v: _hold(v_npc, 6000)(k, v) if k >= t_enter + 2 else 0)
        gap = closing * rng.randint(8, 12) // 10
    else:
        ego = longitudinal(0, v_ego, steps, lambda k, v: _hold(v_npc, 4000)(k, v) if k >= t_cut else 0)
        gap = rng.randint(15, 20) * 1000
    x_enter = ego[t_enter][0] + gap
    x0 = x_enter - Fraction(v_npc * t_enter, 10)
    npc = Track("npc_1", "car")
    vy = -LANE_W // lateral_steps * 10   # mm/s, crosses one lane in 1 s
    y = LANE_2
    for k in range(steps):
        moving = t_cut <= k < t_cut + lateral_steps
        heading = Fraction(round(math.degrees(math.atan2(vy, v_npc)) * 1000)) if moving else 0
        npc.samples.append(Sample(k, x0 + Fraction(v_npc * k, 10), y, v_npc, vy if moving else 0, heading))
        if moving:
            y += vy // 10
    b.track(straight_track("ego", "car", ego, LANE_1))
    b.track(npc, "cut_in")
    b.log.map = _urban_map()
    b.log.vehicle_state.append({**_event(t_cut, "turn_signal", state="right"), "id": "npc_1"})


# -- SC-20 -----------------------------------------------------------------

def _sc20(rng: random.Random, violating: bool, b: _Builder) -> None:
    v_cruise = rng.randint(100, 140) * 100
    v_slow = rng.randint(20, 40) * 100
    dv = v_cruise - v_slow
    t_slow = rng.randint(10, 20)
    decel, accel = 2000, 2000
    brake_steps = dv * 10 // decel
    hold_steps = 15
    accel_steps = dv * 10 // accel

    def schedule(delay):
        start = t_slow + delay
        def f(k, v):
            if start <= k < start + brake_steps:
                return -decel
            if start + brake_steps + hold_steps <= k < start + brake_steps + hold_steps + accel_steps:
                return accel
            return 0
        return f

    # delays count from the leader; lead_1 lags it by 3 steps
    d_ego = rng.randint(20, 25) if violating else 3
    if violating:
        # the ego's gap shrinks by delay * dv; leave a small margin so TTC dips below 1.5 s
        margin = rng.randint(100, 180) * 10
        gap_ego = d_ego * dv // 10 + margin
    else:
        gap_ego = rng.randint(12, 18) * 1000
    steps = t_slow + d_ego + 6 + brake_steps + hold_steps + accel_steps + 20
    spacing = 15000
    x_ego = 0
    x_lead1 = x_ego + gap_ego
    x_lead2 = x_lead1 + spacing
    x_rear = x_ego - spacing
    tracks = [
        ("lead_2", x_lead2, schedule(0), "lead"),
        ("lead_1", x_lead1, schedule(3), "lead"),
        ("ego", x_ego, schedule(3 + d_ego), None),
        ("rear_1", x_rear, schedule(6 + d_ego), "rear"),
    ]
    for name, x0, sched, role in tracks:
        prof = longitudinal(x0, v_cruise, steps, sched)
        b.track(straight_track(name, "car", prof, LANE_1), role)
    b.log.map = _urban_map()


# -- SC-01 -----------------------------------------------------------------

def _sc01(rng: random.Random, violating: bool, b: _Builder) -> None:
    speed = 5000
    radius = 10000
    turn_step = rng.randint(20, 30)
    x_turn = -3000
    x0 = x_turn - speed * turn_step // 10
    steps = turn_step + 60
    ego = arc_track("ego", "car", x0, LANE_1, speed, radius, steps, turn_step)
    xc = arc_conflict_x(x0, speed, radius, turn_step, LANE_1, LANE_2)
    v_onc = rng.randint(100, 130) * 100
    if violating:
        gap1 = rng.randint(25, 40)                       # deciseconds to the conflict point
        x1 = xc + v_onc * gap1 // 10
    else:
        x1 = xc - rng.randint(5, 15) * 1000              # already through
    x2 = x1 + 60000 if violating else xc + v_onc * rng.randint(65, 90) // 10
    for name, x_at_turn in (("onc_1", x1), ("onc_2", x2)):
        x_start = x_at_turn + v_onc * turn_step // 10    # moving -x
        prof = longitudinal(-x_start, v_onc, steps, lambda k, v: 0)
        b.track(straight_track(name, "car", prof, LANE_2, heading_deg=180), "oncoming")
    b.track(stationary_track("truck_1", "truck", xc + 25000, LANE_0, steps, 180), "occluder")
    b.track(ego)
    b.log.map = _urban_map()
    b.log.landmark.append({"name": "conflict_point", "x": Numeric(xc), "y": Numeric(LANE_2)})
    for k in range(0, steps, 10):
        b.log.roadside.append(_event(k, "traffic_light_state", signal="tl_ego", state="green"))


# -- SC-02 -----------------------------------------------------------------

def _sc02(rng: random.Random, violating: bool, b: _Builder) -> None:
    v_ego = rng.randint(90, 120) * 100
    x_ped = 80000
    t_walk = rng.randint(40, 50)
    walk = 1500                                       # mm/s
    y_ped0 = -1500
    t_enter = t_walk + 10                             # y reaches the lane edge
    t_leave = t_walk + 34                             # y passes 3.5 m
    steps = t_leave + 40
    if violating:
        ttc = rng.randint(20, 35)
        x_enter = x_ped - v_ego * ttc // 10
        react = rng.randint(2, 4)
        x0 = x_enter - v_ego * t_enter // 10
        def accel(k, v):
            if k < t_enter + react:
                return 0
            if k < t_leave + 2:
                return -8000
            return 2000
        ego = longitudinal(x0, v_ego, steps, accel, vmax=v_ego)
    else:
        decel = 3000
        stop_gap = rng.randint(10, 15) * 1000
        brake_steps = math.ceil(v_ego * 10 / decel)
        t_brake = t_enter - brake_steps - rng.randint(2, 6)
        def accel(k, v):
            if k < t_brake:
                return 0
            if k < t_leave + 2:
                return -decel
            return 2000
        probe = longitudinal(0, v_ego, steps, accel, vmax=v_ego)
        stop_x = probe[t_leave][0]
        x0 = x_ped - stop_gap - stop_x
        ego = longitudinal(x0, v_ego, steps, accel, vmax=v_ego)
    ped = Track("ped_1", "pedestrian")
    y = y_ped0
    for k in range(steps):
        moving = t_walk <= k and y < 2 * LANE_W + 1000
        ped.samples.append(Sample(k, x_ped, y, 0, walk if moving else 0, 90000))
        if moving:
            y += walk // 10
    b.track(straight_track("ego", "car", ego, LANE_1))
    b.track(ped, "pedestrian")
    b.track(stationary_track("van_1", "van", x_ped - 4000, LANE_0, steps), "occluder")
    b.log.map = _urban_map()


# -- SC-04 -----------------------------------------------------------------

def _sc04(rng: random.Random, violating: bool, b: _Builder) -> None:
    stop_x = -5000
    t_green = rng.randint(20, 30)
    v_cruise = rng.randint(150, 170) * 100 if violating else rng.randint(100, 130) * 100
    steps = t_green + 2 + v_cruise * 10 // 2000 + 30
    ego = longitudinal(stop_x - 2000, 0, steps,
                       lambda k, v: 2000 if k >= t_green + 2 else 0, vmax=v_cruise)
    b.track(straight_track("ego", "car", ego, LANE_1))
    # the runner crosses x = 20 m northbound while its own light is red
    x_cross = 20000
    v_run = rng.randint(130, 160) * 100
    t_cross = t_green + rng.randint(3, 8)
    runner = Track("runner_1", "car")
    for k in range(steps):
        y = LANE_1 + Fraction(v_run * (k - t_cross), 10)
        runner.samples.append(Sample(k, x_cross, y, 0, v_run, 90000))
    b.track(runner, "red_light_runner")
    b.log.map = _urban_map(stop_line_x=stop_x)
    for k in range(steps):
        ego_state = "green" if k >= t_green else "red"
        cross_state = "red" if k >= t_green - 5 else "green"
        b.log.roadside.append(_event(k, "traffic_light_state", signal="tl_ego", state=ego_state))
        b.log.roadside.append(_event(k, "traffic_light_state", signal="tl_cross", state=cross_state))
    b.log.roadside.append(_event(t_cross - 10, "v2x_warning", warning="red_light_violation"))


_GENERATORS = {
    "SC-01": _sc01, "SC-02": _sc02, "SC-04": _sc04,
    "SC-12": _sc12, "SC-13": _sc13, "SC-20": _sc20,
}


def generate_scenario(scenario_id: str, variant: str, seed: int) -> ScenarioLog:
    """Build a scenario log; ``variant`` is ``compliant`` or ``violating``."""
    if scenario_id not in _GENERATORS:
        raise UnknownScenarioId(
            f"unknown scenario {scenario_id!r}; available: {', '.join(sorted(_GENERATORS))}")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    rng = random.Random(f"{scenario_id}:{seed}")
    b = _Builder(scenario_id, variant, seed, 0)
    _GENERATORS[scenario_id](rng, variant == "violating", b)
    return b.finish()


def target_query(scenario_id: str) -> str:
    if scenario_id not in SCENARIOS:
        raise UnknownScenarioId(scenario_id)
    return SCENARIOS[scenario_id]
