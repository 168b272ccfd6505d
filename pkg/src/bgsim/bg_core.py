"""The BG simulation engine.

Each simulator runs one cooperative thread per simulated process p_j. A
thread first agrees on p_j's input through object (j, 0), then repeatedly
picks the oldest message sent to p_j that p_j has not yet received, agrees
on the next message p_j receives through object (j, sn), and applies p_j's
transition function to it. Proposes are serialized per simulator by a FIFO
lock that is released before the matching decide.

Threads are generators yielding wait predicates; a thread is runnable when
its current predicate holds, and one local step resumes it up to its next
wait.
"""
from __future__ import annotations

from collections import deque
from typing import Any, Callable, Generator, Iterable, Optional

from .messages import SimulatedMessage
from .node import BYZANTINE, ObjectHost
from .tasks import InputValidation, TaskSpec

Wait = Callable[[], bool]


class ProposeLock:
    """Starvation-free mutual exclusion over a simulator's proposes (FIFO grants)."""

    def __init__(self):
        self.queue: deque = deque()

    @property
    def holder(self):
        return self.queue[0] if self.queue else None

    def granted(self, tid) -> bool:
        return bool(self.queue) and self.queue[0] == tid

    def request(self, tid) -> None:
        if tid in self.queue:
            raise RuntimeError(f"thread {tid} requested the propose lock twice")
        self.queue.append(tid)

    def release(self, tid) -> None:
        if self.holder != tid:
            raise RuntimeError(f"thread {tid} released a lock held by {self.holder}")
        self.queue.popleft()


def oldest_unreceived(sent: list, received) -> Optional[SimulatedMessage]:
    for m in sent:
        if m not in received:
            return m
    return None


class SimProc:
    """Local copy of one simulated process at one simulator."""

    __slots__ = ("j", "input", "state", "sn", "sent", "sent_set", "received", "head", "decided",
                 "decided_upto", "next_seq")

    def __init__(self, j: int, n_sim: int):
        self.j = j
        self.input = None
        self.state = None
        self.sn = 0
        # messages addressed to p_j, in the order this simulator produced them
        self.sent: list[SimulatedMessage] = []
        self.sent_set: set = set()
        # message -> sequence number of the object that delivered it
        self.received: dict[Any, int] = {}
        self.head = 0
        self.decided = None
        self.decided_upto = -1
        self.next_seq = [0] * (n_sim + 1)

    def oldest(self) -> Optional[SimulatedMessage]:
        """Same answer as :func:`oldest_unreceived`, amortized by a moving head."""
        sent, received = self.sent, self.received
        h = self.head
        while h < len(sent) and sent[h] in received:
            h += 1
        self.head = h
        return sent[h] if h < len(sent) else None


class BGSimulator(ObjectHost):
    def __init__(
        self,
        port,
        t: int,
        model: str,
        task: TaskSpec,
        inputs,
        validate_inputs: bool = False,
        input_threshold: Optional[int] = None,
        single_shot: bool = True,
        **kw,
    ):
        """``inputs``: a sequence of n' values (input of p_j at this simulator),
        or a single value used for every p_j (the simulator's own input)."""
        super().__init__(port, t, model, **kw)
        self.task = task
        self.n_sim = n_sim = task.n_sim
        self.single_shot = single_shot
        if isinstance(inputs, (list, tuple)) and not isinstance(inputs, SimulatedMessage):
            if len(inputs) != n_sim:
                raise ValueError(f"expected {n_sim} inputs, got {len(inputs)}")
            self.inputs = list(inputs)
            own = None
        else:
            self.inputs = [inputs] * n_sim
            own = inputs
        self.validator: Optional[InputValidation] = None
        if validate_inputs:
            if model != BYZANTINE:
                raise ValueError("input validation applies to the Byzantine model")
            if own is None:
                raise ValueError("input validation needs one input per simulator")
            self.validator = InputValidation(port, t, own, input_threshold, on_valid=self._on_input_valid)
        self.procs = {j: SimProc(j, n_sim) for j in range(1, n_sim + 1)}
        self.lock = ProposeLock()
        self.waits: dict[int, Wait] = {}
        self.threads: dict[int, Generator] = {}
        self.rr = 0
        self.output = None

    # -- lifecycle ------------------------------------------------------
    def start(self) -> None:
        if self.validator is not None:
            self.validator.start()
        for j in range(1, self.n_sim + 1):
            gen = self._thread(j)
            self.threads[j] = gen
            self.waits[j] = next(gen)

    def on_control(self, frm: int, msg) -> None:
        if self.validator is not None:
            self.validator.handle(frm, msg)

    def _on_input_valid(self, v) -> None:
        if self.model == BYZANTINE:
            self.revalidate()

    # -- scheduling -----------------------------------------------------
    def runnable(self) -> bool:
        for w in self.waits.values():
            if w():
                return True
        return False

    def fair_thread_scheduler(self) -> Optional[int]:
        """Round robin over runnable threads, starting after the last one chosen."""
        n_sim = self.n_sim
        for off in range(1, n_sim + 1):
            j = (self.rr + off - 1) % n_sim + 1
            w = self.waits.get(j)
            if w is not None and w():
                self.rr = j
                return j
        return None

    def local_step(self) -> None:
        j = self.fair_thread_scheduler()
        if j is None:
            return
        try:
            self.waits[j] = self.threads[j].send(None)
        except StopIteration:
            del self.waits[j]
            del self.threads[j]
        except BaseException:
            del self.waits[j]
            del self.threads[j]
            raise

    # -- the thread -----------------------------------------------------
    def _propose(self, j: int, obj, v) -> Generator[Wait, None, Any]:
        lock = self.lock
        exclusive = not self.concurrent
        if exclusive:
            lock.request(j)
            yield lambda: lock.granted(j)
        self.start_propose(obj, v)
        sa = self.objects[obj]
        if not sa.propose_done:
            yield lambda: sa.propose_done
        if exclusive:
            lock.release(j)
        if sa.decision is None:
            yield lambda: sa.decision is not None
        return sa.decision

    def input_for(self, j: int):
        if self.validator is not None:
            return self.validator.choose()
        return self.inputs[j - 1]

    def _thread(self, j: int) -> Generator[Wait, None, None]:
        p = self.procs[j]
        rec = self.port.record
        if self.validator is not None:
            yield self.validator.is_ready
        else:
            yield lambda: True
        p.input = yield from self._propose(j, (j, 0), self.input_for(j))
        p.decided_upto = 0
        rec("sim_input", (j, 0), p.input)
        p.state = self.task.initial(j, p.input)
        p.state, outs = self.task.delta(j, p.state, None)
        self._distribute(j, outs)
        rec("sim_state", (j, 0), p.state)
        self._after_bg_change()
        while True:
            if self._check_decided(p) and self.single_shot:
                return
            if p.oldest() is None:
                yield lambda: p.oldest() is not None
            m = p.oldest()
            p.sn += 1
            sn = p.sn
            got = yield from self._propose(j, (j, sn), m)
            if not self._well_formed(j, got):
                rec("sim_bad", (j, sn), got)
                return
            got = SimulatedMessage(*got)
            p.received[got] = sn
            p.decided_upto = sn
            rec("sim_recv", (j, sn), got)
            p.state, outs = self.task.delta(j, p.state, got)
            self._distribute(j, outs)
            rec("sim_state", (j, sn), p.state)
            self._after_bg_change()

    def _check_decided(self, p: SimProc) -> bool:
        if p.decided is None:
            d = self.task.decision(p.state)
            if d is not None:
                p.decided = d
                self.port.record("sim_decide", (p.j, p.sn), d)
                if self.output is None:
                    self.output = d
                    self.port.record("output", None, (p.j, d))
        return p.decided is not None

    def _well_formed(self, j: int, m) -> bool:
        if not isinstance(m, tuple) or len(m) != 4:
            return False
        src, dst, seq, _ = m
        return dst == j and isinstance(src, int) and 1 <= src <= self.n_sim and isinstance(seq, int)

    def _distribute(self, j: int, outs: Iterable[tuple]) -> None:
        src = self.procs[j]
        for dst, payload in outs:
            seq = src.next_seq[dst]
            src.next_seq[dst] = seq + 1
            m = SimulatedMessage(j, dst, seq, payload)
            self.port.record("sim_send", (dst, None), m)
            q = self.procs[dst]
            q.sent.append(m)
            q.sent_set.add(m)

    def _after_bg_change(self) -> None:
        if self.model == BYZANTINE:
            self.revalidate()

    # -- P2: the proposed message has been sent and not yet consumed ------
    def p2(self, obj, j: int, v) -> bool:
        try:
            x, sn = obj
            p = self.procs[x]
        except (TypeError, ValueError, KeyError):
            return False
        if sn == 0:
            return self.validator is None or v in self.validator.validated
        if not isinstance(sn, int) or p.decided_upto < sn - 1:
            return False
        try:
            if v not in p.sent_set:
                return False
        except TypeError:
            return False
        at = p.received.get(v)
        return at is None or at >= sn

    # -- outputs --------------------------------------------------------
    def collect_outputs(self) -> dict[int, Any]:
        return {j: p.decided for j, p in self.procs.items() if p.decided is not None}

    def summary(self) -> dict:
        d = super().summary()
        d["sim_decided"] = self.collect_outputs()
        d["output"] = self.output
        d["sn"] = {j: p.sn for j, p in self.procs.items()}
        if self.validator is not None:
            d["valid_inputs"] = sorted(self.validator.validated, key=repr)
        return d
