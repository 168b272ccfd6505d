import itertools
import warnings

import pytest

from bgsim.messages import Message, SimulatedMessage, Tag
from bgsim.netsim import Network
from bgsim.tasks import (
    ConfigWarning,
    InputValidation,
    check_task_outcome,
    input_constraint,
    kset_initial,
    kset_task,
    kset_transition,
    make_task,
)

from _support import Mute


def run_kset_process(j, inputs, order, t):
    """Feed p_j the first messages of every process in ``order``."""
    n_sim = len(inputs)
    state, outs = kset_transition(j, kset_initial(j, inputs[j - 1]), None, n_sim, t)
    assert outs == [(d, inputs[j - 1]) for d in range(1, n_sim + 1)]
    for src in order:
        state, outs = kset_transition(j, state, SimulatedMessage(src, j, 0, inputs[src - 1]), n_sim, t)
        assert outs == []
    return state.decided


def test_kset_every_delivery_order():
    """n'=4, t=1, inputs (3,1,2,5): over all 4! arrival orders at each process,
    decisions are 1 or 2 (the minima of the 3-subsets), hence at most 2 distinct."""
    inputs = (3, 1, 2, 5)
    seen = set()
    for j in range(1, 5):
        for order in itertools.permutations(range(1, 5)):
            seen.add(run_kset_process(j, inputs, order, 1))
    assert seen == {1, 2}


def test_kset_equal_inputs():
    for order in itertools.permutations(range(1, 4)):
        assert run_kset_process(2, (7, 7, 7), order, 1) == 7


def test_kset_single_process():
    assert run_kset_process(1, (9,), (1,), 0) == 9


def test_kset_ignores_a_second_message_from_the_same_source():
    state = kset_initial(1, 4)
    state, _ = kset_transition(1, state, SimulatedMessage(2, 1, 0, 8), 3, 1)
    state, _ = kset_transition(1, state, SimulatedMessage(2, 1, 1, 0), 3, 1)
    assert state.heard == ((2, 8),) and state.decided is None


def test_task_registry():
    spec = make_task("kset", 5, 2)
    assert spec.k == 3 and spec.n_sim == 5
    with pytest.raises(ValueError):
        make_task("renaming", 5, 2)


def test_relation():
    spec = kset_task(4, 1)
    assert spec.relation_holds({1, 2, 3}, [1, 2, 2])
    assert not spec.relation_holds({1, 2, 3}, [1, 2, 3])
    assert not spec.relation_holds({1, 2}, [4])


def test_check_task_outcome():
    spec = kset_task(5, 2)
    assert check_task_outcome(spec, {1, 2, 3, 4}, {1: 1, 2: 1, 3: 2}).ok
    assert check_task_outcome(spec, {1, 2, 3, 4}, {1: 1, 2: 2, 3: 3, 4: 4}).name == "task_agreement"
    assert check_task_outcome(spec, {1, 2}, {1: 1, 2: 9, 3: 1}).name == "task_validity"
    assert check_task_outcome(spec, {1, 2}, {1: 1, 2: None}).name == "task_termination"


def test_input_constraint():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert input_constraint(4, 1, 2)
        assert input_constraint(7, 2, 2)
    with pytest.warns(ConfigWarning):
        assert not input_constraint(4, 1, 3)


class IVNode(Mute):
    def __init__(self, port, t, value, **kw):
        self.iv = InputValidation(port, t, value, **kw)

    def start(self):
        self.iv.start()

    def deliver(self, frm, msg):
        self.iv.handle(frm, msg)

    def snapshot(self):
        return tuple(sorted(self.iv.validated))


class InjectThird(Mute):
    """Byzantine simulator that pushes a value nobody else holds, and echoes it."""

    def __init__(self, net, me):
        self.net, self.me = net, me

    def start(self):
        self.net.broadcast(self.me, Message(Tag.INPUT, None, (99,)))
        for level in (1, 2):
            self.net.broadcast(self.me, Message(Tag.ECHO, None, (self.me, 99, level)))
            self.net.broadcast(self.me, Message(Tag.ECHO, None, (1, 99, level)))


def run_validation(n, t, inputs, byzantine=(), seed=0, **kw):
    net = Network(n, seed=seed)
    for i in range(1, n + 1):
        if i in byzantine:
            net.attach(i, byzantine[i](net, i))
        else:
            net.attach(i, IVNode(net.port(i), t, inputs[i - 1], **kw))
    net.start()
    net.run_until(None, 10**6)
    return {i: net.nodes[i].iv.validated for i in net.nodes if i not in byzantine}


def test_two_shared_values_valid_third_value_not():
    for seed in range(10):
        got = run_validation(7, 1, [1, 1, 1, 2, 2, 2, None], byzantine={7: InjectThird}, seed=seed)
        assert all(v == {1, 2} for v in got.values())


def test_unanimous_input_is_the_only_valid_one():
    got = run_validation(4, 1, [5, 5, 5, 5])
    assert all(v == {5} for v in got.values())


def test_supporter_count_threshold():
    """n=7, t=2, a 3/2 split and two silent ids: t+1 supporters validate the
    majority value; t+2 validates nothing, so a simulation could never start."""
    silent = {6: lambda net, i: Mute(), 7: lambda net, i: Mute()}
    inputs = [1, 1, 1, 2, 2, None, None]
    for seed in range(5):
        assert all(v == {1} for v in run_validation(7, 2, inputs, silent, seed).values())
        assert all(v == set() for v in run_validation(7, 2, inputs, silent, seed, threshold=4).values())


def test_choose_prefers_own_valid_input():
    iv = InputValidation(type("P", (), {"n": 4, "me": 1})(), 1, 3)
    iv.validated = {3, 1}
    assert iv.choose() == 3
    iv.own_input = 8
    assert iv.choose() == 1


def test_validation_ignores_malformed_messages():
    iv = InputValidation(type("P", (), {"n": 4, "me": 1, "broadcast": lambda self, m: None})(), 1, 5)
    iv.handle(2, Message(Tag.INPUT, None, ([1],)))
    iv.handle(2, Message(Tag.ECHO, None, (1, 2)))
    iv.handle(2, Message(Tag.ECHO, None, (1, [2], 1)))
    assert not iv.input_from and not iv.echo
