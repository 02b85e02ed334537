"""Synthetic application and workload scripts for simulated runs.

The fixture app is deterministic: loaded onto two clients it produces
identical trees, IDs and tables, so any divergence a workload exposes is
the protocol's fault. The workload script format (one interaction per
line) is documented in workloads.md at the repository root.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any

from .protocol import TimerKind
from .simclient import Client, Closure, Element

STATIC_CLICK_TARGETS = ["save_button", "cancel_button", "sid-2", "sid-3", "panel", "sid-1"]
TEXT_TARGET = "note_input"
CHECK_TARGET = "opt_in"
SELECT_TARGET = "sid-5"
CREATE_TARGET = "panel"
FIXTURE_STATIC_NODES = 5  # unauthored nodes in the fixture tree: sid-1 .. sid-5


class WorkloadError(ValueError):
    """A workload line does not parse or is illegal for the scenario."""


class FixtureApp:
    """Buttons, a form, timers, randomness and a creation path — one of
    everything the capture layer must reproduce."""

    def __init__(self):
        self.client: Client | None = None

    def build_tree(self) -> Element:
        root = Element()
        panel = root.add_child(Element(authored_id="panel"))
        panel.add_child(Element(authored_id="save_button"))
        panel.add_child(Element(authored_id="cancel_button"))
        panel.add_child(Element())  # sid-2: draws two randoms per click
        panel.add_child(Element())  # sid-3: arms a one-shot timer per click
        form = root.add_child(Element())  # sid-4
        form.add_child(Element(authored_id="note_input"))
        form.add_child(Element(authored_id="opt_in"))
        form.add_child(Element())  # sid-5: selection target
        # DOM0 inline handlers, picked up by the zero-delay sweep
        root.set_dom0("onclick", Closure("function(ev){root_clicks++}", self._count("root_clicks")))
        panel.set_dom0("oncreate", Closure("function(ev){spawn(this)}", self._spawn))
        return root

    def setup(self, client: Client) -> None:
        self.client = client
        client.app_state.update(
            root_clicks=0, panel_clicks=0, saves=0, cancels=0, toggles=0,
            ticks=0, later_fires=0, dyn_clicks=0,
        )
        reg = client.register_handler
        reg("panel", "onclick", Closure("function(ev){panel_clicks++}", self._count("panel_clicks")))
        reg("save_button", "onclick", Closure("function(ev){save()}", self._save))
        reg("cancel_button", "onclick", Closure("function(ev){cancels++}", self._count("cancels")))
        reg("sid-2", "onclick", Closure("function(ev){lucky()}", self._lucky))
        reg("sid-3", "onclick", Closure("function(ev){armLater()}", self._arm_later))
        reg("note_input", "onchange", Closure("function(ev){noteChanged(ev)}", self._note_changed))
        reg("opt_in", "onchange", Closure("function(ev){toggles++}", self._count("toggles")))
        client.set_timer(50, TimerKind.REPEATING, Closure("function(){tick()}", self._tick))
        client.set_timer(120, TimerKind.ONE_SHOT, Closure("function(){warmup()}", self._warmup))

    # handlers -------------------------------------------------------------

    def _count(self, key: str):
        def handler(el, ev):
            self.client.app_state[key] += 1

        return handler

    def _save(self, el, ev) -> None:
        self.client.app_state["saves"] += 1
        self.client.app_state["lucky"] = self.client.random()

    def _lucky(self, el, ev) -> None:
        self.client.app_state["lucky2"] = self.client.random() + self.client.random()

    def _arm_later(self, el, ev) -> None:
        self.client.set_timer(70, TimerKind.ONE_SHOT, Closure("function(){later()}", self._later))

    def _later(self) -> None:
        self.client.app_state["later_fires"] += 1
        self.client.app_state["later_val"] = self.client.random()

    def _note_changed(self, el, ev) -> None:
        self.client.app_state["note_len"] = len(str(ev.get("value", "")))

    def _tick(self) -> None:
        self.client.app_state["ticks"] += 1
        self.client.app_state["tick_val"] = self.client.random()

    def _warmup(self) -> None:
        self.client.app_state["warm"] = True

    def _spawn(self, el, ev) -> None:
        node = self.client.create_element(el)
        node.set_dom0("onclick", Closure("function(ev){dyn_clicks++}", self._count("dyn_clicks")))
        node.set_dom0("oncreate", Closure("function(ev){spawn(this)}", self._spawn))


def make_fixture_client(**kwargs) -> Client:
    app = FixtureApp()
    return Client(tree=app.build_tree(), setup=app.setup, **kwargs)


# -- workload scripts ---------------------------------------------------


@dataclass
class Step:
    op: str
    element_id: str = ""
    event_type: str = ""
    payload: dict = field(default_factory=dict)
    ms: int = 0
    field_name: str = ""
    value: Any = None
    start: int = 0
    span: int = 0


def format_step(step: Step) -> str:
    if step.op == "event":
        return f"event {step.element_id} {step.event_type} {json.dumps(step.payload, separators=(',', ':'))}"
    if step.op == "timer-advance":
        return f"timer-advance {step.ms}"
    if step.op == "create":
        return f"create {step.element_id}"
    if step.op == "set":
        return f"set {step.element_id} {step.field_name} {json.dumps(step.value, separators=(',', ':'))}"
    if step.op == "select":
        return f"select {step.element_id} {step.start} {step.span}"
    if step.op == "promote":
        return "promote"
    raise WorkloadError(f"unknown step op {step.op!r}")


def format_workload(steps: list[Step]) -> str:
    return "".join(format_step(s) + "\n" for s in steps)


def parse_workload(text: str) -> list[Step]:
    steps = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            steps.append(_parse_line(line))
        except (WorkloadError, ValueError, json.JSONDecodeError) as exc:
            raise WorkloadError(f"line {line_no}: {exc}") from exc
    return steps


def _parse_line(line: str) -> Step:
    op, _, rest = line.partition(" ")
    if op == "event":
        element_id, _, rest = rest.partition(" ")
        event_type, _, doc = rest.partition(" ")
        if not element_id or not event_type or not doc:
            raise WorkloadError("event needs <elementId> <eventType> <payload>")
        payload = json.loads(doc)
        if not isinstance(payload, dict):
            raise WorkloadError("event payload must be a JSON object")
        return Step(op="event", element_id=element_id, event_type=event_type, payload=payload)
    if op == "timer-advance":
        ms = int(rest)
        if ms <= 0:
            raise WorkloadError("timer-advance must be positive")
        return Step(op="timer-advance", ms=ms)
    if op == "create":
        if not rest:
            raise WorkloadError("create needs <parentId>")
        return Step(op="create", element_id=rest.strip())
    if op == "set":
        element_id, _, rest = rest.partition(" ")
        field_name, _, doc = rest.partition(" ")
        if not element_id or not field_name or not doc:
            raise WorkloadError("set needs <elementId> <field> <value>")
        return Step(op="set", element_id=element_id, field_name=field_name, value=json.loads(doc))
    if op == "select":
        parts = rest.split()
        if len(parts) != 3:
            raise WorkloadError("select needs <elementId> <start> <span>")
        return Step(op="select", element_id=parts[0], start=int(parts[1]), span=int(parts[2]))
    if op == "promote":
        if rest:
            raise WorkloadError("promote takes no arguments")
        return Step(op="promote")
    raise WorkloadError(f"unknown directive {op!r}")


def generate_workload(seed: int, approx_records: int = 1000) -> list[Step]:
    """Seeded interaction mix against the fixture app, sized so the session
    log lands near `approx_records`. Deterministic per seed."""
    rng = random.Random(seed)
    steps: list[Step] = []
    est = 1  # the initial random batch is logged as one record
    dyn_ids: list[str] = []
    next_dyn = FIXTURE_STATIC_NODES + 1
    # records each click produces: bubbled handler chain plus refills
    click_cost = {
        "save_button": 4, "cancel_button": 3, "sid-2": 5, "sid-3": 3,
        "panel": 2, "sid-1": 1,
    }
    while est < approx_records:
        roll = rng.random()
        if roll < 0.40:
            pool = STATIC_CLICK_TARGETS + dyn_ids
            target = rng.choice(pool)
            steps.append(Step(op="event", element_id=target, event_type="onclick",
                              payload={"clientX": rng.randint(0, 800), "clientY": rng.randint(0, 600)}))
            est += click_cost.get(target, 3)
        elif roll < 0.55:
            if rng.random() < 0.5:
                text = "".join(rng.choice("abcdefghij ") for _ in range(rng.randint(1, 14)))
                steps.append(Step(op="set", element_id=TEXT_TARGET, field_name="value", value=text))
            else:
                steps.append(Step(op="set", element_id=CHECK_TARGET, field_name="checked",
                                  value=rng.random() < 0.5))
            est += 2
        elif roll < 0.65:
            start = rng.randint(0, 40)
            steps.append(Step(op="select", element_id=SELECT_TARGET, start=start,
                              span=rng.randint(0, 20)))
            est += 1
        elif roll < 0.90:
            ms = rng.randint(20, 120)
            steps.append(Step(op="timer-advance", ms=ms))
            est += 2 * (ms // 50 + 1)  # tick firings plus their refills
        else:
            steps.append(Step(op="create", element_id=CREATE_TARGET))
            dyn_ids.append(f"sid-{next_dyn}")
            next_dyn += 1
            est += 1
    return steps


def nicedit_like_script() -> list[Step]:
    """A scripted rich-text-editing session: select text, click styling
    buttons, type into the note field. Sized to the smallest workload the
    fixture models (~74 log records)."""
    steps: list[Step] = []
    for i in range(8):
        steps.append(Step(op="select", element_id=SELECT_TARGET, start=4 * i, span=6))
        steps.append(Step(op="event", element_id="save_button", event_type="onclick",
                          payload={"clientX": 12, "clientY": 30}))
    for i in range(6):
        steps.append(Step(op="event", element_id="cancel_button", event_type="onclick",
                          payload={"clientX": 40, "clientY": 30}))
    for word in ("bold", "bold italic", "bold italic serif"):
        steps.append(Step(op="set", element_id=TEXT_TARGET, field_name="value", value=word))
    for i in range(2):
        steps.append(Step(op="event", element_id="panel", event_type="onclick",
                          payload={"clientX": 5, "clientY": 5}))
    steps.append(Step(op="set", element_id=CHECK_TARGET, field_name="checked", value=True))
    steps.append(Step(op="select", element_id=SELECT_TARGET, start=0, span=32))
    steps.append(Step(op="select", element_id=SELECT_TARGET, start=8, span=4))
    steps.append(Step(op="select", element_id=SELECT_TARGET, start=0, span=0))
    return steps
