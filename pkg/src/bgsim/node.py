"""Honest simulators hosting safe agreement objects.

:class:`ObjectHost` owns the per-simulator registry of objects (created
lazily on the first message naming them) and, in the Byzantine model, the
shared :class:`ValidityContext`. :class:`SAWorkloadNode` drives standalone
objects: it proposes on a list of objects one after the other and lets each
object decide on its own once its propose has completed.
"""
from __future__ import annotations

from typing import Any, Iterable, Optional

from .messages import Message
from .sa_byz import SafeAgreementByz, ValidityContext
from .sa_crash import SafeAgreementCrash

CRASH, BYZANTINE = "crash", "byzantine"
MODELS = (CRASH, BYZANTINE)


class ObjectHost:
    def __init__(
        self,
        port,
        t: int,
        model: str = CRASH,
        prefer_first: bool = True,
        valid_threshold: Optional[int] = None,
    ):
        if model not in MODELS:
            raise ValueError(f"unknown model {model!r}")
        self.port = port
        self.me = port.me
        self.n = port.n
        self.t = t
        self.model = model
        self.prefer_first = prefer_first
        self.objects: dict[Any, Any] = {}
        self.validity = ValidityContext(self.n, t, valid_threshold) if model == BYZANTINE else None
        self._valid_parked: dict[Any, SafeAgreementByz] = {}
        self._active: dict[Any, Any] = {}
        # set only by adversary scripts: propose without waiting for completion
        self.concurrent = False

    # -- objects --------------------------------------------------------
    def sa(self, obj):
        o = self.objects.get(obj)
        if o is None:
            if self.model == CRASH:
                o = SafeAgreementCrash(self, obj, prefer_value=self.prefer_first)
            else:
                o = SafeAgreementByz(self, obj, prefer_ack=self.prefer_first)
            self.objects[obj] = o
        return o

    def start_propose(self, obj, v) -> None:
        self.port.net.arm_propose_crash(self.me, obj)
        sa = self.sa(obj)
        self._active[obj] = sa
        sa.propose(v)

    def in_propose(self) -> bool:
        done = [k for k, sa in self._active.items() if not sa.in_propose]
        for k in done:
            del self._active[k]
        return bool(self._active)

    # -- validity hooks (Byzantine model) --------------------------------
    def p2(self, obj, j: int, v) -> bool:
        return True

    def park_valid(self, sa) -> None:
        self._valid_parked[sa.obj] = sa

    def unpark_valid(self, sa) -> None:
        self._valid_parked.pop(sa.obj, None)

    def revalidate(self) -> None:
        for sa in list(self._valid_parked.values()):
            sa.check_valid()

    # -- network interface ----------------------------------------------
    def start(self) -> None:
        pass

    def deliver(self, frm: int, msg: Message) -> None:
        obj = msg.obj
        if obj is None:
            self.on_control(frm, msg)
            return
        try:
            sa = self.objects.get(obj) or self.sa(obj)
        except TypeError:
            return  # unhashable object id from a Byzantine sender
        sa.handle(frm, msg)

    def on_control(self, frm: int, msg: Message) -> None:
        pass

    def runnable(self) -> bool:
        return False

    def local_step(self) -> None:
        pass

    def snapshot(self) -> tuple:
        objs = tuple(sorted(((repr(k), sa.snapshot()) for k, sa in self.objects.items()), key=lambda kv: kv[0]))
        ctx = None
        if self.validity is not None:
            ctx = (
                tuple(sorted((j, tuple(sorted(map(repr, s)))) for j, s in self.validity.open.items() if s)),
                tuple(sorted((j, tuple(sorted(map(repr, s)))) for j, s in self.validity.discharged.items() if s)),
            )
        return objs, ctx

    def decisions(self) -> dict:
        return {obj: sa.decision for obj, sa in self.objects.items() if sa.decision is not None}

    def summary(self) -> dict:
        return {
            "proposed": sorted((obj for obj, sa in self.objects.items() if sa.proposal is not None), key=repr),
            "propose_done": sorted((obj for obj, sa in self.objects.items() if sa.propose_done), key=repr),
            "decided": self.decisions(),
        }


class SAWorkloadNode(ObjectHost):
    """Proposes ``plan`` entries ``(obj, value)`` sequentially."""

    def __init__(self, port, t: int, model: str, plan: Iterable[tuple], **kw):
        super().__init__(port, t, model, **kw)
        self.plan = list(plan)
        self.next = 0

    def start(self) -> None:
        self._advance()

    def snapshot(self) -> tuple:
        return (self.next,) + super().snapshot()

    def deliver(self, frm: int, msg: Message) -> None:
        super().deliver(frm, msg)
        if self.next < len(self.plan):
            self._advance()

    def _advance(self) -> None:
        while self.next < len(self.plan):
            if self.next > 0 and not self.concurrent:
                prev = self.objects[self.plan[self.next - 1][0]]
                if not prev.propose_done:
                    return
            obj, v = self.plan[self.next]
            self.next += 1
            self.start_propose(obj, v)
