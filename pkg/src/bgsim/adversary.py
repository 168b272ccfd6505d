"""Scripted Byzantine simulators.

A Byzantine simulator is a :class:`ByzantineNode`: it owns an inner honest
node whose outgoing traffic passes through the script, and it can also emit
arbitrary messages of its own. Sends always carry the node's own id, since
channels are authenticated. Scripts draw randomness only from a generator
seeded by (scenario seed, simulator id), so adversarial runs replay exactly.
Every script has read access to the global trace through ``self.trace``.
"""
from __future__ import annotations

import random
from typing import Any, Callable, Optional

from .messages import Message, SimulatedMessage, Tag


def forge(v: Any, salt: int = 1) -> Any:
    """A value different from ``v`` that no correct simulator proposes.

    Numbers map to large negative numbers and strings get a low-sorting
    prefix, so a forged value would win any min-based decision it reached.
    """
    if isinstance(v, SimulatedMessage) or (isinstance(v, tuple) and len(v) == 4 and isinstance(v[0], int)):
        src, dst, seq, payload = v
        return SimulatedMessage(src, dst, seq, forge(payload, salt))
    if isinstance(v, bool):
        return ("forged", v, salt)
    if isinstance(v, int):
        return -1_000_000 * salt - abs(v)
    if isinstance(v, float):
        return -1e6 * salt - abs(v)
    if isinstance(v, str):
        return "!" * salt + v
    return ("forged", v, salt)


def is_forged(v: Any) -> bool:
    if isinstance(v, tuple) and len(v) == 4 and isinstance(v[0], int) and not isinstance(v[0], bool):
        return is_forged(v[3])
    if isinstance(v, bool):
        return False
    if isinstance(v, (int, float)):
        return v <= -1_000_000
    if isinstance(v, str):
        return v.startswith("!")
    return isinstance(v, tuple) and len(v) == 3 and v[0] == "forged"


class ScriptPort:
    """Port handed to the inner honest node; its traffic goes through the script."""

    __slots__ = ("net", "me", "n", "script")

    def __init__(self, net, me: int, script: "Script"):
        self.net = net
        self.me = me
        self.n = net.n
        self.script = script

    def send(self, to: int, msg: Message) -> None:
        for to2, msg2 in self.script.outgoing(to, msg):
            self.net.send(self.me, to2, msg2)

    def broadcast(self, msg: Message) -> None:
        for to in range(1, self.n + 1):
            self.send(to, msg)

    def record(self, kind: str, obj, data=None, tag=None) -> None:
        # internal events of a Byzantine simulator are not protocol evidence
        pass


class Script:
    name = "honest"

    def __init__(self, net, me: int, seed: int, params: Optional[dict] = None):
        self.net = net
        self.me = me
        self.n = net.n
        self.params = dict(params or {})
        self.rng = random.Random(f"{seed}:{me}:{self.name}")
        self.trace = net.trace
        self.inner = None

    def raw_send(self, to: int, msg: Message) -> None:
        self.net.send(self.me, to, msg)

    def raw_broadcast(self, msg: Message) -> None:
        for to in range(1, self.n + 1):
            self.net.send(self.me, to, msg)

    def on_deliver(self, frm: int, msg: Message) -> None:
        self.inner.deliver(frm, msg)

    def outgoing(self, to: int, msg: Message):
        return ((to, msg),)

    def configure(self, inner) -> None:
        """Hook run once the inner node exists, before it starts."""


class Silent(Script):
    name = "silent"

    def on_deliver(self, frm, msg):
        pass

    def outgoing(self, to, msg):
        return ()


class Equivocator(Script):
    """Own proposals and own input go unchanged to the lower half, forged to the rest."""

    name = "equivocator"

    def outgoing(self, to, msg):
        tag = msg.tag
        if to > self.n // 2:
            if tag is Tag.VALUE and msg.body[0] == self.me:
                return ((to, Message(tag, msg.obj, (self.me, forge(msg.body[1])))),)
            if tag is Tag.INPUT:
                return ((to, Message(tag, msg.obj, (forge(msg.body[0]),))),)
        return ((to, msg),)


class DoubleProposer(Script):
    """Proposes on several objects at once and never publishes its own views."""

    name = "double_proposer"

    def configure(self, inner):
        inner.concurrent = True

    def outgoing(self, to, msg):
        if msg.tag is Tag.VIEW and msg.body[0] == self.me:
            return ()
        return ((to, msg),)


class WitnessSpammer(Script):
    """Honest, plus unsolicited witness and ack messages with forged payloads."""

    name = "witness_spammer"
    TAGS = (Tag.VALUE_VALID, Tag.VALUE_WITNESS, Tag.VALUE_ACK, Tag.READ_ANSWER_WITNESS, Tag.VIEW_WITNESS, Tag.VIEW_ACK)

    def __init__(self, net, me, seed, params=None):
        super().__init__(net, me, seed, params)
        self.budget: dict[Any, int] = {}
        self.per_object = int(self.params.get("per_object", 3 * self.n))
        self.rate = float(self.params.get("rate", 0.05))

    def on_deliver(self, frm, msg):
        self.inner.deliver(frm, msg)
        obj = msg.obj
        if msg.tag is Tag.VALUE and self.rng.random() < 0.5:
            self._spam_echo(obj, msg.body)
        if self.rng.random() >= self.rate:
            return
        left = self.budget.get(obj, self.per_object)
        if left <= 0:
            return
        self.budget[obj] = left - 1
        self._spam(obj, msg)

    def _spam_echo(self, obj, body):
        """Witness a forged variant of a proposal to everyone."""
        try:
            j, v = body
        except (TypeError, ValueError):
            return
        fake = forge(v, 2)
        tag = self.rng.choice((Tag.VALUE_VALID, Tag.VALUE_WITNESS, Tag.VALUE_ACK))
        self.raw_broadcast(Message(tag, obj, (j, fake)))

    def _spam(self, obj, msg):
        n, rng = self.n, self.rng
        j = rng.randint(1, n)
        x = rng.randint(1, n)
        k = rng.randint(1, n)
        w = forge(rng.randint(0, 9), 3)
        tag = rng.choice(self.TAGS)
        if obj is None:
            body = (j, w, rng.choice((1, 2)))
            tag = Tag.ECHO
        elif tag in (Tag.VALUE_VALID, Tag.VALUE_WITNESS, Tag.VALUE_ACK):
            body = (j, w)
        elif tag is Tag.READ_ANSWER_WITNESS:
            body = (k, j, x, rng.choice((None, w)))
        else:
            view = tuple(rng.choice((None, w)) for _ in range(n))
            body = (j, view)
        targets = [to for to in range(1, n + 1) if rng.random() < 0.5] or [j]
        for to in targets:
            self.raw_send(to, Message(tag, obj, body))


class Liar(Script):
    """Answers reads with forged or missing values."""

    name = "liar"

    def outgoing(self, to, msg):
        tag = msg.tag
        if tag is Tag.READ_ANSWER:
            j, x, v = msg.body
            lie = forge(x) if v is None else None
            return ((to, Message(tag, msg.obj, (j, x, lie))),)
        if tag is Tag.READ_ANSWER_WITNESS:
            k, j, x, v = msg.body
            lie = forge(x) if v is None else None
            return ((to, Message(tag, msg.obj, (k, j, x, lie))),)
        return ((to, msg),)


class Replayer(Script):
    """In a simulation run, proposes messages that were already consumed."""

    name = "replayer"

    def outgoing(self, to, msg):
        if msg.tag is Tag.VALUE and msg.body[0] == self.me:
            procs = getattr(self.inner, "procs", None)
            obj = msg.obj
            if procs and isinstance(obj, tuple) and obj[1] >= 2:
                p = procs.get(obj[0])
                if p is not None and p.received:
                    old = min(p.received, key=p.received.get)
                    return ((to, Message(Tag.VALUE, obj, (self.me, old))),)
        return ((to, msg),)


SCRIPTS: dict[str, type[Script]] = {
    cls.name: cls for cls in (Silent, Equivocator, DoubleProposer, WitnessSpammer, Liar, Replayer)
}


def script_silent(net, me, seed, params=None) -> Script:
    return Silent(net, me, seed, params)


def script_equivocator(net, me, seed, params=None) -> Script:
    return Equivocator(net, me, seed, params)


def script_double_proposer(net, me, seed, params=None) -> Script:
    return DoubleProposer(net, me, seed, params)


def script_witness_spammer(net, me, seed, params=None) -> Script:
    return WitnessSpammer(net, me, seed, params)


class ByzantineNode:
    """Network-facing shell of a Byzantine simulator."""

    def __init__(self, net, me: int, script: Script, make_inner: Callable[[Any], Any]):
        self.me = me
        self.script = script
        self.port = ScriptPort(net, me, script)
        self.inner = make_inner(self.port)
        script.inner = self.inner
        script.configure(self.inner)

    def start(self) -> None:
        if not isinstance(self.script, Silent):
            self.inner.start()

    def deliver(self, frm: int, msg: Message) -> None:
        try:
            self.script.on_deliver(frm, msg)
        except (TypeError, ValueError, KeyError, IndexError, RuntimeError):
            # the inner node may choke on forged state; a Byzantine node may do anything
            pass

    def runnable(self) -> bool:
        if isinstance(self.script, Silent):
            return False
        try:
            return self.inner.runnable()
        except Exception:
            return False

    def local_step(self) -> None:
        try:
            self.inner.local_step()
        except (TypeError, ValueError, KeyError, IndexError, RuntimeError):
            pass

    def in_propose(self) -> bool:
        return False

    def snapshot(self) -> tuple:
        inner = self.inner.snapshot() if hasattr(self.inner, "snapshot") else None
        return (self.script.name, inner)

    def summary(self) -> dict:
        return {"byzantine": self.script.name}


def make_script(name: str, net, me: int, seed: int, params: Optional[dict] = None) -> Script:
    try:
        cls = SCRIPTS[name]
    except KeyError:
        raise ValueError(f"unknown adversary script {name!r}; known: {sorted(SCRIPTS)}") from None
    return cls(net, me, seed, params)
