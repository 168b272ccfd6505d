"""Crash-tolerant safe agreement for majority-correct message passing.

One :class:`SafeAgreementCrash` instance exists per (simulator, object id).
``propose`` is a three-phase client (value reliable broadcast, per-simulator
read, view reliable broadcast); the decision is the minimum value of the
smallest closed set of published views.
"""
from __future__ import annotations

from collections import defaultdict
from enum import IntEnum
from typing import Any, Mapping, Optional, Sequence

from .messages import Message, Tag, order_key


class Phase(IntEnum):
    IDLE = 0
    AWAIT_VALUE_ACKS = 1
    READING = 2
    AWAIT_VIEW_ACKS = 3
    PROPOSE_DONE = 4


def majority(n: int) -> int:
    return n // 2 + 1


def view_members(view: Sequence) -> list[int]:
    """Simulator ids (1-based) with a non-bottom entry in ``view``."""
    return [z + 1 for z, v in enumerate(view) if v is not None]


def smallest_closed_set(all_views: Mapping[int, Sequence]) -> Optional[tuple[int, ...]]:
    """Smallest non-empty sigma such that every member has a known view and
    every id appearing non-bottom in a member's view is itself a member.

    Every minimum-size closed set is the reachability closure of one of its
    members, so it suffices to compute the closure of each known view.
    Ties on size are broken by the sorted member tuple.
    """
    best: Optional[tuple[int, ...]] = None
    for y in all_views:
        seen = {y}
        stack = [y]
        ok = True
        while stack:
            u = stack.pop()
            view = all_views.get(u)
            if view is None:
                ok = False
                break
            for z in view_members(view):
                if z not in seen:
                    seen.add(z)
                    stack.append(z)
        if not ok:
            continue
        cand = tuple(sorted(seen))
        if best is None or (len(cand), cand) < (len(best), best):
            best = cand
    return best


def compute_closure(
    all_views: Mapping[int, Sequence], values: Mapping[int, Any]
) -> Optional[tuple[frozenset, Any]]:
    """``(sigma, decided)`` or None while no closed set exists.

    Also None while the value of some member of sigma has not arrived yet
    (the view of y always carries y's own value, which reaches every correct
    simulator eventually).
    """
    sigma = smallest_closed_set(all_views)
    if sigma is None:
        return None
    vals = [values.get(y) for y in sigma]
    if any(v is None for v in vals):
        return None
    return frozenset(sigma), min(vals, key=order_key)


class SafeAgreementCrash:
    def __init__(self, host, obj, prefer_value: bool = True):
        self.host = host
        self.port = host.port
        self.me = host.port.me
        self.n = n = host.port.n
        self.obj = obj
        self.quorum = majority(n)
        self.prefer_value = prefer_value

        self.values: dict[int, Any] = {}
        self.my_view: list = [None] * n
        self.all_views: dict[int, tuple] = {}
        self.phase = Phase.IDLE
        self.reading = 0
        self.proposal = None
        self.sent_view: Optional[tuple] = None
        self.decision = None
        self.sigma: Optional[frozenset] = None

        self.value_senders: dict[tuple, set] = defaultdict(set)
        self.value_quorum: dict[int, Any] = {}
        self.read_bot: dict[int, set] = defaultdict(set)
        self.view_senders: dict[tuple, set] = defaultdict(set)
        self.seen_reads: set[tuple] = set()
        self._closure_dirty = False

    # -- client ---------------------------------------------------------
    @property
    def propose_done(self) -> bool:
        return self.phase == Phase.PROPOSE_DONE

    @property
    def in_propose(self) -> bool:
        return Phase.IDLE < self.phase < Phase.PROPOSE_DONE

    def propose(self, v) -> None:
        if v is None:
            raise ValueError("bottom cannot be proposed")
        if self.phase != Phase.IDLE:
            raise RuntimeError(f"simulator {self.me} proposed twice on {self.obj}")
        self.proposal = v
        self.phase = Phase.AWAIT_VALUE_ACKS
        self.port.record("propose_start", self.obj, v)
        self.port.broadcast(Message(Tag.VALUE, self.obj, (self.me, v)))
        self._progress()

    def read_phase_guard(self, x: int):
        """Outcome of the wait for entry x: ``(True, w)``, ``(True, None)`` or None."""
        has_value = x in self.value_quorum
        has_bot = len(self.read_bot[x]) >= self.quorum
        if self.prefer_value:
            if has_value:
                return (True, self.value_quorum[x])
            if has_bot:
                return (True, None)
        else:
            if has_bot:
                return (True, None)
            if has_value:
                return (True, self.value_quorum[x])
        return None

    def _progress(self) -> None:
        if self.phase == Phase.AWAIT_VALUE_ACKS:
            if len(self.value_senders[(self.me, self.proposal)]) < self.quorum:
                return
            self.phase = Phase.READING
            self.reading = 1
            for x in range(1, self.n + 1):
                self.port.broadcast(Message(Tag.READ, self.obj, (self.me, x)))
        if self.phase == Phase.READING:
            while self.reading <= self.n:
                got = self.read_phase_guard(self.reading)
                if got is None:
                    return
                self.my_view[self.reading - 1] = got[1]
                self.reading += 1
            self.phase = Phase.AWAIT_VIEW_ACKS
            self.sent_view = tuple(self.my_view)
            self.port.broadcast(Message(Tag.VIEW, self.obj, (self.me, self.sent_view)))
        if self.phase == Phase.AWAIT_VIEW_ACKS:
            if len(self.view_senders[(self.me, self.sent_view)]) < self.quorum:
                return
            self.phase = Phase.PROPOSE_DONE
            self.port.record("propose_done", self.obj, None)
            self._closure_dirty = True
        if self.phase == Phase.PROPOSE_DONE and self.decision is None and self._closure_dirty:
            self.try_decide()

    def try_decide(self):
        self._closure_dirty = False
        if self.decision is not None:
            return self.decision
        res = compute_closure(self.all_views, self.values)
        if res is None:
            return None
        self.sigma, self.decision = res
        self.port.record("decide", self.obj, self.decision)
        return self.decision

    # -- server ---------------------------------------------------------
    def handle(self, frm: int, msg: Message) -> None:
        tag = msg.tag
        if tag is Tag.VALUE:
            self.on_value(frm, *msg.body)
        elif tag is Tag.READ:
            self.on_read(frm, *msg.body)
        elif tag is Tag.READ_ANSWER:
            self.on_read_answer(frm, *msg.body)
        elif tag is Tag.VIEW:
            self.on_view(frm, *msg.body)
        self._progress()

    def on_value(self, frm: int, x: int, v) -> None:
        senders = self.value_senders[(x, v)]
        first = not senders
        senders.add(frm)
        if first:
            if x not in self.values:
                self.values[x] = v
                self.port.record("write", self.obj, ("values", x, v))
                self._closure_dirty = True
            self.port.broadcast(Message(Tag.VALUE, self.obj, (x, v)))
        if len(senders) == self.quorum:
            self.value_quorum.setdefault(x, v)

    def on_read(self, frm: int, j: int, x: int) -> None:
        if (j, x) in self.seen_reads:
            return
        self.seen_reads.add((j, x))
        self.port.send(j, Message(Tag.READ_ANSWER, self.obj, (j, x, self.values.get(x))))

    def on_read_answer(self, frm: int, j: int, x: int, v) -> None:
        if j == self.me and v is None:
            self.read_bot[x].add(frm)

    def on_view(self, frm: int, x: int, view: tuple) -> None:
        senders = self.view_senders[(x, view)]
        first = not senders
        senders.add(frm)
        if first:
            if x not in self.all_views:
                self.all_views[x] = view
                self.port.record("write", self.obj, ("all_views", x, view))
                self._closure_dirty = True
            self.port.broadcast(Message(Tag.VIEW, self.obj, (x, view)))

    def snapshot(self) -> tuple:
        def srt(items):
            return tuple(sorted(items, key=repr))

        return (
            int(self.phase),
            self.reading,
            srt(self.values.items()),
            srt(self.all_views.items()),
            srt((k, tuple(sorted(s))) for k, s in self.value_senders.items()),
            srt((k, tuple(sorted(s))) for k, s in self.read_bot.items() if s),
            srt((k, tuple(sorted(s))) for k, s in self.view_senders.items()),
            srt(self.seen_reads),
            self.decision,
        )
