"""Colorless tasks hosted by the simulation engine, and Byzantine input validation.

A task supplies a pure, deterministic transition function
``delta(j, state, msg) -> (state, [(dst, payload), ...])`` where ``msg`` is
None for the first step, plus a decision extractor and a validator for the
task relation.

The k-set agreement algorithm: every process sends its input to all, and
decides the smallest value among the first n'-t values it collects. Any two
deciders share at least n'-2t of their collected senders, which bounds the
number of distinct decisions by t+1.
"""
from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Optional

from .messages import Message, Tag, order_key
from .verdict import Verdict, failed, passed


class ConfigWarning(UserWarning):
    pass


class KSetState(NamedTuple):
    input: Any
    heard: tuple  # sorted (src, value) pairs
    decided: Any = None


def kset_initial(j: int, value) -> KSetState:
    return KSetState(value, ())


def kset_transition(j: int, state: KSetState, msg, n_sim: int, t: int):
    if msg is None:
        return state, [(d, state.input) for d in range(1, n_sim + 1)]
    src, _dst, _seq, payload = msg
    heard = state.heard
    if any(s == src for s, _ in heard):
        return state, []
    heard = tuple(sorted(heard + ((src, payload),), key=lambda p: p[0]))
    decided = state.decided
    if decided is None and len(heard) >= n_sim - t:
        decided = min((v for _, v in heard), key=order_key)
    return KSetState(state.input, heard, decided), []


@dataclass(frozen=True)
class TaskSpec:
    name: str
    n_sim: int
    t: int
    k: int
    initial: Callable[[int, Any], Any]
    transition: Callable[..., tuple]
    m: Optional[int] = None

    def delta(self, j: int, state, msg):
        return self.transition(j, state, msg, self.n_sim, self.t)

    @staticmethod
    def decision(state):
        return state.decided

    def relation_holds(self, inputs: Iterable, outputs: Iterable) -> bool:
        """Colorless set-agreement relation: outputs drawn from inputs, at most k of them."""
        ins = set(inputs)
        outs = set(outputs)
        return outs <= ins and len(outs) <= self.k


def kset_task(n_sim: int, t: int, m: Optional[int] = None) -> TaskSpec:
    return TaskSpec("kset", n_sim, t, t + 1, kset_initial, kset_transition, m)


TASKS: dict[str, Callable[..., TaskSpec]] = {"kset": kset_task}


def make_task(name: str, n_sim: int, t: int, m: Optional[int] = None) -> TaskSpec:
    try:
        return TASKS[name](n_sim, t, m)
    except KeyError:
        raise ValueError(f"unknown task {name!r}; known: {sorted(TASKS)}") from None


def check_task_outcome(
    spec: TaskSpec,
    inputs: Iterable,
    outputs: Mapping[int, Any],
    min_decided: Optional[int] = None,
) -> Verdict:
    """Validity, at most k distinct decisions, and at least n'-t deciders.

    ``inputs`` is the set of admissible values: the proposed inputs, or in a
    Byzantine run the inputs of correct simulators.
    """
    allowed = set(inputs)
    decided = {j: v for j, v in outputs.items() if v is not None}
    distinct = set(decided.values())
    need = spec.n_sim - spec.t if min_decided is None else min_decided
    bad = sorted((j, v) for j, v in decided.items() if v not in allowed)
    if bad:
        return failed("task_validity", f"decided values outside the admissible inputs: {bad}")
    if len(distinct) > spec.k:
        return failed("task_agreement", f"{len(distinct)} distinct decisions > k={spec.k}")
    if len(decided) < need:
        return failed("task_termination", f"only {len(decided)} simulated processes decided, need {need}")
    return passed("task", distinct=len(distinct), decided=len(decided))


def input_constraint(n: int, t: int, m: int) -> bool:
    """True when n - t > m*t; otherwise warns that validation guarantees are void."""
    ok = n - t > m * t
    if not ok:
        warnings.warn(
            f"n={n}, t={t}, m={m}: n-t > m*t does not hold, input validation guarantees are void",
            ConfigWarning,
            stacklevel=2,
        )
    return ok


class InputValidation:
    """Reliable broadcast of every simulator's input, then a count of supporters.

    Inputs are disseminated with an echo/ready exchange whose ready step
    follows the witness pattern, so all correct simulators deliver the same
    (sender, value) pairs. A value becomes a valid input once delivered from
    ``threshold`` distinct simulators (t+1 by default).

    Wire format: INPUT(v); ECHO(k, v, 1) for the echo step and ECHO(k, v, 2)
    for the ready step, all with object id None.
    """

    def __init__(self, port, t: int, own_input, threshold: Optional[int] = None, on_valid=None):
        self.port = port
        self.n = n = port.n
        self.t = t
        self.own_input = own_input
        self.threshold = t + 1 if threshold is None else threshold
        self.quorum = (n + t) // 2 + 1
        self.on_valid = on_valid
        self.input_from: set[int] = set()
        self.echo: dict[tuple, set] = defaultdict(set)
        self.ready: dict[tuple, set] = defaultdict(set)
        self.ready_sent: set[int] = set()
        self.delivered: dict[int, Any] = {}
        self.support: dict[Any, set] = defaultdict(set)
        self.validated: set = set()

    def start(self) -> None:
        self.port.broadcast(Message(Tag.INPUT, None, (self.own_input,)))

    def is_ready(self) -> bool:
        return bool(self.validated)

    def choose(self):
        """Own input when valid, otherwise the smallest valid input."""
        if self.own_input in self.validated:
            return self.own_input
        return min(self.validated, key=order_key)

    def handle(self, frm: int, msg: Message) -> None:
        try:
            if msg.tag is Tag.INPUT:
                (v,) = msg.body
                hash(v)
                if frm in self.input_from or v is None:
                    return
                self.input_from.add(frm)
                self.port.broadcast(Message(Tag.ECHO, None, (frm, v, 1)))
            elif msg.tag is Tag.ECHO:
                k, v, level = msg.body
                hash((k, v))
                if level == 1:
                    self._on_echo(frm, k, v)
                elif level == 2:
                    self._on_ready(frm, k, v)
        except (TypeError, ValueError):
            return

    def _send_ready(self, k: int, v) -> None:
        if k not in self.ready_sent:
            self.ready_sent.add(k)
            self.port.broadcast(Message(Tag.ECHO, None, (k, v, 2)))

    def _on_echo(self, frm: int, k: int, v) -> None:
        s = self.echo[(k, v)]
        s.add(frm)
        if len(s) >= self.quorum:
            self._send_ready(k, v)

    def _on_ready(self, frm: int, k: int, v) -> None:
        s = self.ready[(k, v)]
        s.add(frm)
        if len(s) >= self.t + 1:
            self._send_ready(k, v)
        if len(s) >= self.quorum and k not in self.delivered:
            self.delivered[k] = v
            sup = self.support[v]
            sup.add(k)
            if len(sup) >= self.threshold and v not in self.validated:
                self.validated.add(v)
                self.port.record("input_valid", None, v)
                if self.on_valid is not None:
                    self.on_valid(v)
