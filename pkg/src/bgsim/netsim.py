"""Deterministic asynchronous network with seeded scheduling and fault injection.

Channels are reliable, authenticated and not FIFO. The scheduler picks
uniformly among enabled events (pending envelopes and local-step tokens of
simulators with runnable threads). An event left pending for more than
``max_age`` picks is forced next, which turns "finite but unbounded transit
time" into something a finite run can rely on.
"""
from __future__ import annotations

import hashlib
import json
import os
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Optional

from .messages import Message, _default, digest

MAX_AGE_FACTOR = 64

# trace event kinds carrying an envelope
SEND, DELIVER, DROP = "send", "deliver", "drop"
ENVELOPE_KINDS = frozenset({SEND, DELIVER, DROP})


class BudgetExceeded(RuntimeError):
    """Raised by :meth:`Network.run_until` when ``max_steps`` is reached."""

    def __init__(self, steps: int, outcome: "RunOutcome"):
        super().__init__(f"step budget of {steps} exhausted")
        self.outcome = outcome


class Halted(Exception):
    """Unwinds the handler of a simulator that crashes mid-event."""


class HarnessError(RuntimeError):
    pass


def default_max_age(n: int) -> Optional[int]:
    env = os.environ.get("BGSIM_MAX_AGE")
    if env is not None:
        return None if env.lower() in ("", "none", "off", "0") else int(env)
    return MAX_AGE_FACTOR * n


@dataclass(frozen=True)
class CrashSpec:
    """When a simulator halts.

    ``at_step``: before the first event with step >= at_step (if
    ``outside_propose`` is set, the first such boundary where the simulator
    has no propose in flight). ``after_sends``: after that many envelopes,
    counted from the start of the run or, with ``in_propose``, from the
    moment the simulator starts proposing on that object; the next send
    attempt halts it, possibly in the middle of a broadcast.
    """

    at_step: Optional[int] = None
    after_sends: Optional[int] = None
    in_propose: Optional[tuple] = None
    outside_propose: bool = False

    @classmethod
    def from_json(cls, d: Any) -> "CrashSpec":
        if isinstance(d, int):
            return cls(at_step=d)
        obj = d.get("in_propose")
        return cls(
            at_step=d.get("at_step"),
            after_sends=d.get("after_sends"),
            in_propose=tuple(obj) if obj is not None else None,
            outside_propose=bool(d.get("outside_propose", False)),
        )

    def to_json(self) -> dict:
        d: dict = {}
        if self.at_step is not None:
            d["at_step"] = self.at_step
        if self.after_sends is not None:
            d["after_sends"] = self.after_sends
        if self.in_propose is not None:
            d["in_propose"] = list(self.in_propose)
        if self.outside_propose:
            d["outside_propose"] = True
        return d


@dataclass
class FaultPlan:
    crashes: dict[int, CrashSpec] = field(default_factory=dict)
    byzantine: dict[int, str] = field(default_factory=dict)

    def faulty(self) -> set[int]:
        return set(self.crashes) | set(self.byzantine)

    def within(self, t: int) -> bool:
        return len(self.faulty()) <= t

    @classmethod
    def from_json(cls, d: Optional[dict]) -> "FaultPlan":
        d = d or {}
        crashes = {int(k): CrashSpec.from_json(v) for k, v in d.get("crashes", {}).items()}
        byz = {int(k): v for k, v in d.get("byzantine", {}).items()}
        return cls(crashes, byz)

    def to_json(self) -> dict:
        return {
            "crashes": {str(k): v.to_json() for k, v in sorted(self.crashes.items())},
            "byzantine": {str(k): v for k, v in sorted(self.byzantine.items())},
        }


class Trace:
    """Ordered event log: ``(step, kind, from, to, tag, object, data)`` tuples.

    Envelope events keep the :class:`Message` as data and serialize only its
    digest; protocol events serialize their data in full.
    """

    def __init__(self, record_envelopes: bool = True):
        self.record_envelopes = record_envelopes
        self.events: list[tuple] = []

    def add(self, step, kind, frm, to, tag, obj, data=None) -> None:
        self.events.append((step, kind, frm, to, tag, obj, data))

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    @staticmethod
    def line(ev: tuple) -> str:
        step, kind, frm, to, tag, obj, data = ev
        rec = {
            "step": step,
            "kind": kind,
            "from": frm,
            "to": to,
            "tag": tag,
            "object": obj,
            "payload_digest": digest(data),
        }
        if kind not in ENVELOPE_KINDS:
            rec["data"] = data
        # fixed key order, no sort: the field order is part of the format
        return json.dumps(rec, separators=(",", ":"), default=_default)

    def lines(self) -> Iterator[str]:
        return (self.line(ev) for ev in self.events)

    def hash(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        for ln in self.lines():
            h.update(ln.encode())
            h.update(b"\n")
        return h.hexdigest()

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for ln in self.lines():
                fh.write(ln)
                fh.write("\n")


@dataclass
class DeliveryRecord:
    step: int
    kind: str  # "deliver", "drop" or "local"
    frm: Optional[int]
    to: int
    msg: Optional[Message]


@dataclass
class RunOutcome:
    steps: int
    quiescent: bool
    trace: Trace
    states: dict
    crashed: set[int]
    envelopes: Counter


class Port:
    """A simulator's handle on the network; sends are stamped with its id."""

    __slots__ = ("net", "me", "n")

    def __init__(self, net: "Network", me: int):
        self.net = net
        self.me = me
        self.n = net.n

    def send(self, to: int, msg: Message) -> None:
        self.net.send(self.me, to, msg)

    def broadcast(self, msg: Message) -> None:
        self.net.broadcast(self.me, msg)

    def record(self, kind: str, obj, data=None, tag=None) -> None:
        net = self.net
        net.trace.add(net.step_count, kind, self.me, None, tag or kind, obj, data)


class Network:
    """Single-threaded event loop owning all simulators.

    ``nodes`` maps ids 1..n to objects with ``deliver(frm, msg)``,
    ``runnable()`` and ``local_step()``; they are attached with :meth:`attach`.
    """

    def __init__(
        self,
        n: int,
        seed: int = 0,
        max_age: Optional[int] = -1,
        faults: Optional[FaultPlan] = None,
        record_envelopes: bool = True,
    ):
        self.n = n
        self.seed = seed
        self.rng = random.Random(seed)
        self.max_age = default_max_age(n) if max_age == -1 else max_age
        self.faults = faults or FaultPlan()
        self.trace = Trace(record_envelopes)
        self.nodes: dict[int, Any] = {}
        self.crashed: set[int] = set()
        self.step_count = 0
        self.picks = 0
        self.envelopes: Counter = Counter()
        # pending items are lists: [frm, to, msg, enqueued_pick, index]; a
        # local-step token has msg None and frm None
        self._pending: list[list] = []
        self._fifo: deque = deque()
        self._token: dict[int, list] = {}
        self._send_budget: dict[int, int] = {}
        self._step_crashes = sorted(
            (spec.at_step, i) for i, spec in self.faults.crashes.items() if spec.at_step is not None
        )
        for i, spec in self.faults.crashes.items():
            if spec.after_sends is not None and spec.in_propose is None:
                self._send_budget[i] = spec.after_sends

    # -- wiring ---------------------------------------------------------
    def attach(self, i: int, node) -> None:
        self.nodes[i] = node

    def port(self, i: int) -> Port:
        return Port(self, i)

    def start(self) -> None:
        for i in sorted(self.nodes):
            node = self.nodes[i]
            try:
                node.start()
            except Halted:
                self._crash(i)
                continue
            self.wake(i)

    # -- sending --------------------------------------------------------
    def send(self, frm: int, to: int, msg: Message) -> None:
        if frm in self.crashed:
            raise HarnessError(f"crashed simulator {frm} attempted to send")
        budget = self._send_budget.get(frm)
        if budget is not None:
            if budget <= 0:
                self._crash(frm)
                raise Halted(frm)
            self._send_budget[frm] = budget - 1
        item = [frm, to, msg, self.picks, len(self._pending)]
        self._pending.append(item)
        self._fifo.append(item)
        self.envelopes[msg.tag] += 1
        if self.trace.record_envelopes:
            self.trace.add(self.step_count, SEND, frm, to, msg.tag.value, msg.obj, msg)

    def broadcast(self, frm: int, msg: Message) -> None:
        if frm in self._send_budget or self.trace.record_envelopes or frm in self.crashed:
            for to in range(1, self.n + 1):
                self.send(frm, to, msg)
            return
        # fast path, same effect as n calls to send()
        pending, fifo, picks = self._pending, self._fifo, self.picks
        for to in range(1, self.n + 1):
            item = [frm, to, msg, picks, len(pending)]
            pending.append(item)
            fifo.append(item)
        self.envelopes[msg.tag] += self.n

    def arm_propose_crash(self, i: int, obj) -> None:
        """Called by a host when simulator i starts proposing on ``obj``."""
        spec = self.faults.crashes.get(i)
        if spec is not None and spec.in_propose is not None and tuple(spec.in_propose) == tuple(obj):
            self._send_budget[i] = spec.after_sends or 0
            if not spec.after_sends:
                self._crash(i)
                raise Halted(i)

    # -- scheduling -----------------------------------------------------
    def wake(self, i: int) -> None:
        """Ensure a local-step token is pending iff node i has runnable threads."""
        if i in self.crashed or i in self._token:
            return
        node = self.nodes.get(i)
        if node is not None and node.runnable():
            item = [None, i, None, self.picks, len(self._pending)]
            self._pending.append(item)
            self._fifo.append(item)
            self._token[i] = item

    def _remove(self, item: list) -> None:
        pending = self._pending
        idx = item[4]
        last = pending.pop()
        if last is not item:
            pending[idx] = last
            last[4] = idx
        item[4] = -1

    def _pick(self) -> Optional[list]:
        pending = self._pending
        if not pending:
            return None
        self.picks += 1
        if self.max_age is not None:
            fifo = self._fifo
            while fifo and fifo[0][4] < 0:
                fifo.popleft()
            if fifo and self.picks - fifo[0][3] > self.max_age:
                item = fifo.popleft()
                self._remove(item)
                return item
        item = pending[self.rng.randrange(len(pending))]
        self._remove(item)
        return item

    def enabled(self) -> list[list]:
        return list(self._pending)

    def _apply_step_crashes(self) -> None:
        sc = self._step_crashes
        if not sc or sc[0][0] > self.step_count:
            return
        keep = []
        for at, i in sc:
            if at > self.step_count or i in self.crashed:
                if at > self.step_count:
                    keep.append((at, i))
                continue
            spec = self.faults.crashes[i]
            node = self.nodes.get(i)
            if spec.outside_propose and node is not None and getattr(node, "in_propose", lambda: False)():
                keep.append((at, i))
                continue
            self._crash(i)
        self._step_crashes = keep

    def _crash(self, i: int) -> None:
        if i in self.crashed:
            return
        self.crashed.add(i)
        self.trace.add(self.step_count, "crash", i, None, "crash", None, None)
        tok = self._token.pop(i, None)
        if tok is not None and tok[4] >= 0:
            self._remove(tok)

    def step(self, item: Optional[list] = None) -> Optional[DeliveryRecord]:
        """Run one event; returns None when nothing is enabled."""
        rec = self._step(item)
        return None if rec is None else DeliveryRecord(*rec)

    def _step(self, item: Optional[list]) -> Optional[tuple]:
        self._apply_step_crashes()
        if item is None:
            item = self._pick()
            if item is None:
                return None
        else:
            self.picks += 1
            self._remove(item)
        self.step_count += 1
        frm, to, msg = item[0], item[1], item[2]
        if msg is None:
            self._token.pop(to, None)
            if to in self.crashed:
                return (self.step_count, "drop", None, to, None)
            try:
                self.nodes[to].local_step()
            except Halted:
                self._crash(to)
                return (self.step_count, "local", None, to, None)
            self.wake(to)
            return (self.step_count, "local", None, to, None)
        if to in self.crashed:
            if self.trace.record_envelopes:
                self.trace.add(self.step_count, DROP, frm, to, msg.tag.value, msg.obj, msg)
            return (self.step_count, DROP, frm, to, msg)
        if self.trace.record_envelopes:
            self.trace.add(self.step_count, DELIVER, frm, to, msg.tag.value, msg.obj, msg)
        try:
            self.nodes[to].deliver(frm, msg)
        except Halted:
            self._crash(to)
            return (self.step_count, DELIVER, frm, to, msg)
        self.wake(to)
        return (self.step_count, DELIVER, frm, to, msg)

    def quiescent(self) -> bool:
        return not self._pending

    def outcome(self) -> RunOutcome:
        states = {i: node.summary() for i, node in self.nodes.items() if hasattr(node, "summary")}
        return RunOutcome(
            self.step_count, self.quiescent(), self.trace, states, set(self.crashed), Counter(self.envelopes)
        )

    def run_until(self, pred: Optional[Callable[["Network"], bool]] = None, max_steps: int = 10**7) -> RunOutcome:
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        done = 0
        while pred is None or not pred(self):
            if done >= max_steps:
                raise BudgetExceeded(max_steps, self.outcome())
            if self._step(None) is None:
                break
            done += 1
        return self.outcome()
