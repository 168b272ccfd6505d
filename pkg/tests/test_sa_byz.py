import pytest

from bgsim.checker import TraceView, blocked_objects, check_witness_pattern
from bgsim.messages import Message, Tag
from bgsim.netsim import FaultPlan, Network
from bgsim.node import ObjectHost
from bgsim.sa_byz import ValidityContext, WitnessTracker, byz_quorum
from bgsim.scenario import Scenario, run_scenario

from _support import DIRECTED_OBJ, FakePort, byz_sa, directed_witness, failures, run_and_check

A, B = (4, 0), (4, 1)


def host(me=1, n=4, t=1, **kw):
    return ObjectHost(FakePort(me, n), t, "byzantine", **kw)


def deliver(h, frm, obj, tag, *body):
    h.deliver(frm, Message(tag, obj, body))


def sent(h, tag, obj=None):
    return [(to, m.body) for to, m in h.port.out if m.tag is tag and (obj is None or m.obj == obj)]


@pytest.mark.parametrize("n, t, amplify, quorum", [(4, 1, 2, 3), (7, 2, 3, 5), (10, 3, 4, 7), (2, 0, 1, 2)])
def test_witness_thresholds(n, t, amplify, quorum):
    w = WitnessTracker(n, t)
    assert (w.amplify, w.quorum) == (amplify, quorum)
    assert byz_quorum(n, t) == quorum


def test_witness_pattern_amplifies_then_fires_once():
    h = host()
    key = (2, "v")
    deliver(h, 2, A, Tag.VALUE_WITNESS, *key)
    assert sent(h, Tag.VALUE_WITNESS) == []
    deliver(h, 3, A, Tag.VALUE_WITNESS, *key)
    assert sent(h, Tag.VALUE_WITNESS) == [(to, key) for to in (1, 2, 3, 4)]
    assert h.objects[A].values == {}
    deliver(h, 3, A, Tag.VALUE_WITNESS, *key)  # duplicate sender
    assert h.objects[A].values == {}
    deliver(h, 4, A, Tag.VALUE_WITNESS, *key)
    assert h.objects[A].values == {2: "v"}
    assert sent(h, Tag.VALUE_ACK) == [(to, key) for to in (1, 2, 3, 4)]
    deliver(h, 1, A, Tag.VALUE_WITNESS, *key)
    assert len(sent(h, Tag.VALUE_ACK)) == 4 and len(sent(h, Tag.VALUE_WITNESS)) == 4


def test_read_guard_bottom_count():
    h = host()
    sa = h.sa(A)
    sa.phase, sa.reading = sa.phase.READING, 2
    for k in (2, 3):
        for frm in (2, 3, 4):
            deliver(h, frm, A, Tag.READ_ANSWER_WITNESS, k, 1, 2, None)
    assert sa.read_phase_guard_byz(2) is None
    for frm in (2, 3, 4):
        deliver(h, frm, A, Tag.READ_ANSWER_WITNESS, 4, 1, 2, None)
    assert sa.read_phase_guard_byz(2) == (True, None)


def test_read_guard_ack_quorum():
    h = host()
    sa = h.sa(A)
    for frm in (2, 3):
        deliver(h, frm, A, Tag.VALUE_ACK, 2, "w")
    assert sa.read_phase_guard_byz(2) is None
    deliver(h, 4, A, Tag.VALUE_ACK, 2, "w")
    assert sa.read_phase_guard_byz(2) == (True, "w")


def test_single_liar_reaches_no_quorum():
    h = host()
    sa = h.sa(A)
    deliver(h, 4, A, Tag.READ_ANSWER, 1, 2, None)
    # the liar's answer is witnessed once by this simulator; one witness < t+1
    assert sent(h, Tag.READ_ANSWER_WITNESS) == [(to, (4, 1, 2, None)) for to in (1, 2, 3, 4)]
    deliver(h, 4, A, Tag.READ_ANSWER_WITNESS, 4, 1, 2, None)
    assert sa.answers == {} and sa.read_phase_guard_byz(2) is None


def test_validity_context_bookkeeping():
    ctx = ValidityContext(4, 1)
    assert (ctx.valid_threshold, ctx.discharge_threshold) == (3, 3)
    assert ctx.p1(4, A)
    ctx.oblige(4, A)
    assert ctx.p1(4, A) and not ctx.p1(4, B)
    assert ctx.discharge(4, A) and not ctx.discharge(4, A)
    ctx.oblige(4, A)  # a discharged obligation stays discharged
    assert ctx.p1(4, B)


def test_valid_immediately_without_obligations():
    h = host()
    deliver(h, 4, A, Tag.VALUE, 4, "x")
    assert sent(h, Tag.VALUE_VALID) == [(to, (4, "x")) for to in (1, 2, 3, 4)]


def test_second_propose_waits_until_first_view_is_witnessed():
    h = host()
    deliver(h, 4, A, Tag.VALUE, 4, "x")
    deliver(h, 4, B, Tag.VALUE, 4, "y")
    assert sent(h, Tag.VALUE_VALID, B) == []
    view = ("a", None, None, "x")
    for frm in (1, 2):
        deliver(h, frm, A, Tag.VIEW_WITNESS, 4, view)
    assert sent(h, Tag.VALUE_VALID, B) == []
    deliver(h, 3, A, Tag.VIEW_WITNESS, 4, view)  # n - t = 3 senders
    assert sent(h, Tag.VALUE_VALID, B) == [(to, (4, "y")) for to in (1, 2, 3, 4)]


@pytest.mark.parametrize("threshold, obliged_after", [(None, 3), (2, 2)])
def test_value_valid_creates_obligation_at_threshold(threshold, obliged_after):
    h = host(valid_threshold=threshold)
    for k, frm in enumerate((1, 2, 3), start=1):
        deliver(h, frm, A, Tag.VALUE_VALID, 4, "x")
        assert (A in h.validity.open[4]) == (k >= obliged_after)


def test_value_dedup_per_sender_and_authentication():
    h = host()
    deliver(h, 3, A, Tag.VALUE, 4, "forged-origin")
    assert sent(h, Tag.VALUE_VALID) == []
    deliver(h, 4, A, Tag.VALUE, 4, "x")
    deliver(h, 4, A, Tag.VALUE, 4, "y")
    assert sent(h, Tag.VALUE_VALID) == [(to, (4, "x")) for to in (1, 2, 3, 4)]


def test_view_with_bottom_own_entry_is_ignored():
    h = host()
    deliver(h, 4, A, Tag.VIEW, 4, ("a", None, None, None))
    assert h.objects[A].pending_views == [] and sent(h, Tag.VIEW_WITNESS) == []


def test_malformed_bodies_are_ignored():
    h = host()
    deliver(h, 4, A, Tag.VALUE, 4)
    deliver(h, 4, A, Tag.VIEW, 4, "short")
    h.deliver(4, Message(Tag.READ, A, (4, 99)))
    h.deliver(4, Message(Tag.VALUE, [1], (4, 1)))  # unhashable object id
    assert h.port.out == []


def test_directed_witness_scenario_t_plus_one_correct_broadcasts():
    """Exactly t+1 correct simulators broadcast a witness message; t are mute."""
    for n, t in ((4, 1), (7, 2), (10, 3)):
        for seed in range(5):
            net, correct = directed_witness(n, t, seed)
            for i in correct:
                assert net.nodes[i].objects[DIRECTED_OBJ].values == {n: "m"}
            assert check_witness_pattern(TraceView(net.trace.events)).ok


def test_t_correct_broadcasts_are_not_enough():
    n, t = 7, 2
    net = Network(n, seed=1)
    for i in range(1, n + 1):
        net.attach(i, ObjectHost(net.port(i), t, "byzantine"))
    for i in range(1, t + 1):
        net.broadcast(i, Message(Tag.VALUE_WITNESS, A, (7, "m")))
    net.run_until(None, 10**5)
    assert all(net.nodes[i].objects[A].values == {} for i in range(1, n + 1))


def test_fault_free_byzantine_run():
    for seed in range(10):
        sc = Scenario(n=4, t=1, model="byzantine", objects=2, seed=seed)
        res, tv, vs = run_and_check(sc)
        assert not failures(vs)
        dec = [res.net.nodes[i].decisions() for i in range(1, 5)]
        assert all(len(d) == 2 and d == dec[0] for d in dec)
        vals = {res.net.nodes[i].objects[(0, 0)].values[1] for i in range(1, 5)}
        assert vals == {10}


def test_one_silent_of_four_every_correct_proposal_decides():
    for seed in range(20):
        res, tv, vs = run_and_check(byz_sa(4, "silent", seed))
        assert not failures(vs)
        for i in (1, 2, 3):
            assert len(res.net.nodes[i].decisions()) == 2


def test_byzantine_model_without_faults_mirrors_crash_model_decisions():
    for seed in range(5):
        crash = run_scenario(Scenario(n=4, t=1, objects=2, seed=seed))
        byz = run_scenario(Scenario(n=4, t=1, model="byzantine", objects=2, seed=seed))
        for i in range(1, 5):
            assert crash.net.nodes[i].decisions().keys() == byz.net.nodes[i].decisions().keys()


def test_t_silent_block_at_most_t_objects():
    for n in (4, 7):
        for seed in range(10):
            res, tv, vs = run_and_check(byz_sa(n, "silent", seed))
            assert not failures(vs)
            assert len(blocked_objects(tv)) <= tv.t


def test_equivocator_never_splits_values():
    for seed in range(30):
        res, tv, vs = run_and_check(byz_sa(4, "equivocator", seed, record_envelopes=True))
        assert not failures(vs), seed
        for obj in ((0, 0), (0, 1)):
            stored = {res.net.nodes[i].objects[obj].values.get(4) for i in (1, 2, 3) if obj in res.net.nodes[i].objects}
            assert len(stored - {None}) <= 1


@pytest.mark.parametrize("threshold", [2, 3])
def test_both_obligation_thresholds_pass_the_property_suite(threshold):
    for script in ("silent", "equivocator", "double_proposer", "witness_spammer"):
        for seed in range(8):
            sc = byz_sa(4, script, seed, valid_threshold=threshold)
            _, _, vs = run_and_check(sc)
            assert not failures(vs), (script, seed)


def test_double_proposer_is_held_back_by_the_first_open_object():
    """At each correct simulator, the second concurrent proposal of the Byzantine
    simulator is not validated, since the first one's view is never witnessed."""
    for seed in range(10):
        sc = Scenario(n=4, t=1, model="byzantine", objects=2, proposers=[1, 4], seed=seed,
                      faults=FaultPlan(byzantine={4: "double_proposer"}))
        res, tv, vs = run_and_check(sc)
        assert not failures(vs)
        for i in tv.correct:
            valid_from_4 = {ev[5] for ev in tv.kind("valid", {i}) if ev[6][0] == 4}
            assert len(valid_from_4) <= 1
