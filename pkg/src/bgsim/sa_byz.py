"""Byzantine-tolerant safe agreement (n > 3t), signature free.

Values, read answers and views are disseminated through the witness
pattern: a witness message is re-broadcast once it has been received from
t+1 distinct simulators and its action runs once it has been received from
more than (n+t)/2 of them. Every guarded ``wait`` of the protocol is a
parked continuation re-examined when the state it depends on changes.

Objects at one simulator are not independent: a :class:`ValidityContext`
shared by all of them tracks, per remote proposer, whether its earlier
proposals were completed before it is allowed to start another one.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Any, Callable, Optional

from .messages import Message, Tag
from .sa_crash import Phase, compute_closure


def byz_quorum(n: int, t: int) -> int:
    """Smallest integer strictly greater than (n+t)/2."""
    return (n + t) // 2 + 1


class WitnessTracker:
    """Sender sets and once-only flags for one witness message family."""

    __slots__ = ("amplify", "quorum", "senders", "broadcast", "fired")

    def __init__(self, n: int, t: int):
        self.amplify = t + 1
        self.quorum = byz_quorum(n, t)
        self.senders: dict[Any, set] = defaultdict(set)
        self.broadcast: set = set()
        self.fired: set = set()

    def mark_broadcast(self, key) -> bool:
        """Set the never-broadcast flag; False if it was already set."""
        if key in self.broadcast:
            return False
        self.broadcast.add(key)
        return True


class ValidityContext:
    """Per-simulator registry of proposal obligations, shared by all objects.

    An obligation ``(j, obj)`` is created when VALUE(j, -) arrives from q_j on
    ``obj``, or when VALUE_VALID(j, -) on ``obj`` arrives from
    ``valid_threshold`` distinct simulators. It is discharged once
    VIEW_WITNESS(j, -) on ``obj`` has come from n - t distinct simulators.
    """

    def __init__(self, n: int, t: int, valid_threshold: Optional[int] = None):
        self.n = n
        self.t = t
        self.valid_threshold = t + 2 if valid_threshold is None else valid_threshold
        self.discharge_threshold = n - t
        self.open: dict[int, set] = defaultdict(set)
        self.discharged: dict[int, set] = defaultdict(set)

    def oblige(self, j: int, obj) -> None:
        if obj not in self.discharged[j]:
            self.open[j].add(obj)

    def discharge(self, j: int, obj) -> bool:
        if obj in self.discharged[j]:
            return False
        self.discharged[j].add(obj)
        self.open[j].discard(obj)
        return True

    def p1(self, j: int, obj) -> bool:
        pending = self.open.get(j)
        return not pending or pending == {obj}


def always_valid(obj, j, v) -> bool:
    return True


class SafeAgreementByz:
    def __init__(self, host, obj, prefer_ack: bool = True):
        self.host = host
        self.port = port = host.port
        self.me = port.me
        self.n = n = port.n
        self.t = t = host.t
        self.obj = obj
        self.quorum = byz_quorum(n, t)
        self.prefer_ack = prefer_ack
        self.ctx: ValidityContext = host.validity

        self.values: dict[int, Any] = {}
        self.my_view: list = [None] * n
        self.all_views: dict[int, tuple] = {}
        self.answers: dict[tuple, Any] = {}
        self.phase = Phase.IDLE
        self.reading = 0
        self.proposal = None
        self.sent_view: Optional[tuple] = None
        self.decision = None
        self.sigma: Optional[frozenset] = None
        self._closure_dirty = False

        # VALUE / VALUE_VALID / VALUE_WITNESS / VALUE_ACK
        self.value_from: set[int] = set()
        self.pending_valid: list[tuple] = []
        self.validated: set[tuple] = set()
        self.value_valid_senders: dict[tuple, set] = defaultdict(set)
        self.vw = WitnessTracker(n, t)
        self.vw_any: set[int] = set()
        self.ack_senders: dict[tuple, set] = defaultdict(set)
        self.ack_quorum: dict[int, Any] = {}
        self.ack_sent: set[tuple] = set()
        # READ / READ_ANSWER / READ_ANSWER_WITNESS
        self.reads_seen: set[tuple] = set()
        self.pending_reads: dict[int, list] = defaultdict(list)
        self.ra_seen: set[tuple] = set()
        self.raw = WitnessTracker(n, t)
        self.raw_any: set[tuple] = set()
        self.bot_answers: dict[tuple, set] = defaultdict(set)
        self.bot_quorum: set[tuple] = set()
        # VIEW / VIEW_WITNESS / VIEW_ACK
        self.view_from: set[int] = set()
        self.pending_views: list[tuple] = []
        self.viw = WitnessTracker(n, t)
        self.viw_any: set[int] = set()
        self.view_ack_senders: set[int] = set()

        self._dispatch: dict[Tag, Callable] = {
            Tag.VALUE: self.on_value,
            Tag.VALUE_VALID: self.on_value_valid,
            Tag.VALUE_WITNESS: self.on_value_witness,
            Tag.VALUE_ACK: self.on_value_ack,
            Tag.READ: self.on_read,
            Tag.READ_ANSWER: self.on_read_answer,
            Tag.READ_ANSWER_WITNESS: self.on_read_answer_witness,
            Tag.VIEW: self.on_view,
            Tag.VIEW_WITNESS: self.on_view_witness,
            Tag.VIEW_ACK: self.on_view_ack,
        }

    # -- helpers --------------------------------------------------------
    def _bcast(self, tag: Tag, body: tuple) -> None:
        self.port.broadcast(Message(tag, self.obj, body))

    def _witness_bcast(self, tag: Tag, key: tuple) -> None:
        self.port.record("witness_bcast", self.obj, (tag.value, key))
        self._bcast(tag, key)

    def witness_pattern(self, tracker: WitnessTracker, tag: Tag, key: tuple, frm: int) -> bool:
        """Amplify at t+1 distinct senders; True exactly once, when the count passes (n+t)/2."""
        senders = tracker.senders[key]
        if frm in senders:
            return False
        senders.add(frm)
        count = len(senders)
        if count >= tracker.amplify and key not in tracker.broadcast:
            tracker.broadcast.add(key)
            self._on_amplify(tag, key)
            self._witness_bcast(tag, key)
        if count >= tracker.quorum and key not in tracker.fired:
            tracker.fired.add(key)
            self.port.record("quorum", self.obj, (tag.value, key, tuple(sorted(senders))))
            return True
        return False

    def _on_amplify(self, tag: Tag, key: tuple) -> None:
        if tag is Tag.VALUE_WITNESS:
            self.vw_any.add(key[0])
        elif tag is Tag.READ_ANSWER_WITNESS:
            self.raw_any.add(key[:3])
        else:
            self.viw_any.add(key[0])

    def _write(self, table: dict, name: str, idx, v) -> None:
        """Write-once assignment; a conflicting second write is logged, not applied."""
        if idx in table:
            if table[idx] != v:
                self.port.record("write_conflict", self.obj, (name, idx, v))
            return
        table[idx] = v
        self.port.record("write", self.obj, (name, idx, v))

    # -- validity ---------------------------------------------------------
    def valid(self, j: int, v) -> bool:
        return self.ctx.p1(j, self.obj) and self.host.p2(self.obj, j, v)

    def check_valid(self) -> None:
        if not self.pending_valid:
            return
        still = []
        for j, v in self.pending_valid:
            if self.valid(j, v):
                self.validated.add((j, v))
                self.port.record("valid", self.obj, (j, v))
                self._bcast(Tag.VALUE_VALID, (j, v))
            else:
                still.append((j, v))
        self.pending_valid = still
        if not still:
            self.host.unpark_valid(self)

    # -- client -----------------------------------------------------------
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
        self._bcast(Tag.VALUE, (self.me, v))
        self._progress()

    def read_phase_guard_byz(self, x: int):
        has_ack = x in self.ack_quorum
        has_bot = (self.me, x) in self.bot_quorum
        if self.prefer_ack:
            if has_ack:
                return (True, self.ack_quorum[x])
            if has_bot:
                return (True, None)
        else:
            if has_bot:
                return (True, None)
            if has_ack:
                return (True, self.ack_quorum[x])
        return None

    def _progress(self) -> None:
        if self.phase == Phase.AWAIT_VALUE_ACKS:
            if len(self.ack_senders[(self.me, self.proposal)]) < self.quorum:
                return
            self.phase = Phase.READING
            self.reading = 1
            for x in range(1, self.n + 1):
                self._bcast(Tag.READ, (self.me, x))
        if self.phase == Phase.READING:
            while self.reading <= self.n:
                got = self.read_phase_guard_byz(self.reading)
                if got is None:
                    return
                self.my_view[self.reading - 1] = got[1]
                self.reading += 1
            self.phase = Phase.AWAIT_VIEW_ACKS
            self.sent_view = tuple(self.my_view)
            self._bcast(Tag.VIEW, (self.me, self.sent_view))
        if self.phase == Phase.AWAIT_VIEW_ACKS:
            if len(self.view_ack_senders) < self.quorum:
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

    # -- server -----------------------------------------------------------
    def handle(self, frm: int, msg: Message) -> None:
        handler = self._dispatch.get(msg.tag)
        if handler is None:
            return
        try:
            handler(frm, *msg.body)
        except (TypeError, ValueError, IndexError):
            # malformed body from a Byzantine sender
            return
        self._progress()

    def on_value(self, frm: int, j: int, v) -> None:
        if frm != j or j in self.value_from or v is None:
            return
        self.value_from.add(j)
        self.ctx.oblige(j, self.obj)
        self.pending_valid.append((j, v))
        self.host.park_valid(self)
        self.check_valid()

    def on_value_valid(self, frm: int, j: int, v) -> None:
        senders = self.value_valid_senders[(j, v)]
        if frm in senders:
            return
        senders.add(frm)
        if len(senders) == self.ctx.valid_threshold:
            self.ctx.oblige(j, self.obj)
        if len(senders) >= self.quorum and j not in self.vw_any:
            self.vw_any.add(j)
            self.vw.broadcast.add((j, v))
            self._witness_bcast(Tag.VALUE_WITNESS, (j, v))

    def on_value_witness(self, frm: int, j: int, v) -> None:
        if self.witness_pattern(self.vw, Tag.VALUE_WITNESS, (j, v), frm):
            self._write(self.values, "values", j, v)
            self._closure_dirty = True
            self._send_ack(j, v)

    def _send_ack(self, j: int, v) -> None:
        if (j, v) not in self.ack_sent:
            self.ack_sent.add((j, v))
            self._bcast(Tag.VALUE_ACK, (j, v))

    def on_value_ack(self, frm: int, j: int, v) -> None:
        senders = self.ack_senders[(j, v)]
        if frm in senders:
            return
        senders.add(frm)
        if len(senders) == self.quorum:
            if j not in self.ack_quorum:
                self.ack_quorum[j] = v
                for x in self.pending_reads.pop(j, ()):
                    self._answer_read(j, x)
            self._check_views()

    def on_read(self, frm: int, j: int, x: int) -> None:
        if frm != j or (j, x) in self.reads_seen or not 1 <= x <= self.n:
            return
        self.reads_seen.add((j, x))
        if j in self.ack_quorum:
            self._answer_read(j, x)
        else:
            self.pending_reads[j].append(x)

    def _answer_read(self, j: int, x: int) -> None:
        v = self.ack_quorum[j]
        self._write(self.values, "values", j, v)
        self._closure_dirty = True
        self._send_ack(j, v)
        self._bcast(Tag.READ_ANSWER, (j, x, self.values.get(x)))

    def on_read_answer(self, frm: int, j: int, x: int, v) -> None:
        key = (frm, j, x)
        if key in self.ra_seen:
            return
        self.ra_seen.add(key)
        if key not in self.raw_any:
            self.raw_any.add(key)
            self.raw.broadcast.add((frm, j, x, v))
            self._witness_bcast(Tag.READ_ANSWER_WITNESS, (frm, j, x, v))

    def on_read_answer_witness(self, frm: int, k: int, j: int, x: int, v) -> None:
        if not self.witness_pattern(self.raw, Tag.READ_ANSWER_WITNESS, (k, j, x, v), frm):
            return
        if (k, j, x) in self.answers:
            self._write(self.answers, "answers", (k, j, x), v)
            return
        self._write(self.answers, "answers", (k, j, x), v)
        if v is None:
            bots = self.bot_answers[(j, x)]
            bots.add(k)
            if len(bots) == self.quorum:
                self.bot_quorum.add((j, x))
                self._check_views()

    def on_view(self, frm: int, j: int, view: tuple) -> None:
        if frm != j or j in self.view_from:
            return
        self.view_from.add(j)
        if not isinstance(view, tuple) or len(view) != self.n:
            return
        if j in self.viw_any or view[j - 1] is None:
            return
        self.pending_views.append((j, view))
        self._check_views()

    def _view_consistent(self, j: int, view: tuple) -> bool:
        q = self.quorum
        for x in range(1, self.n + 1):
            w = view[x - 1]
            if w is not None:
                if len(self.ack_senders.get((x, w), ())) < q:
                    return False
            elif (j, x) not in self.bot_quorum:
                return False
        return True

    def _check_views(self) -> None:
        if not self.pending_views:
            return
        still = []
        for j, view in self.pending_views:
            if j in self.viw_any:
                continue
            if self._view_consistent(j, view):
                self.viw_any.add(j)
                self.viw.broadcast.add((j, view))
                self._witness_bcast(Tag.VIEW_WITNESS, (j, view))
            else:
                still.append((j, view))
        self.pending_views = still

    def on_view_witness(self, frm: int, j: int, view: tuple) -> None:
        key = (j, view)

        if self.witness_pattern(self.viw, Tag.VIEW_WITNESS, key, frm):
            self._write(self.all_views, "all_views", j, view)
            self._closure_dirty = True
            self.port.send(j, Message(Tag.VIEW_ACK, self.obj, (j, view)))
        if len(self.viw.senders[key]) == self.ctx.discharge_threshold:
            if self.ctx.discharge(j, self.obj):
                self.host.revalidate()

    def on_view_ack(self, frm: int, j: int, view: tuple) -> None:
        if j == self.me and view == self.sent_view:
            self.view_ack_senders.add(frm)

    def snapshot(self) -> tuple:
        def srt(items):
            return tuple(sorted(items, key=repr))

        def sets(d):
            return srt((k, tuple(sorted(s))) for k, s in d.items() if s)

        return (
            int(self.phase),
            self.reading,
            srt(self.values.items()),
            srt(self.all_views.items()),
            srt(self.answers.items()),
            sets(self.value_valid_senders),
            sets(self.vw.senders),
            sets(self.ack_senders),
            sets(self.raw.senders),
            sets(self.viw.senders),
            srt(self.pending_valid),
            srt(self.reads_seen),
            srt(self.ra_seen),
            tuple(sorted(self.view_ack_senders)),
            self.decision,
        )
