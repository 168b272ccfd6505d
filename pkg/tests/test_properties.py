"""Randomised properties: hypothesis for pure functions, seed sweeps for runs."""
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgsim.bg_core import SimProc, oldest_unreceived
from bgsim.checker import TraceView, check_agreement, check_validity, check_write_once, closure_oracle
from bgsim.messages import SimulatedMessage, digest, order_key
from bgsim.sa_crash import compute_closure
from bgsim.scenario import run_scenario
from bgsim.tasks import kset_initial, kset_transition

from _support import byz_sa, crash_sa


@st.composite
def grids(draw):
    n = draw(st.integers(1, 6))
    ids = range(1, n + 1)
    reported = draw(st.sets(st.sampled_from(ids)))
    views = {y: tuple(draw(st.sampled_from((None, "v"))) for _ in ids) for y in sorted(reported)}
    known = draw(st.sets(st.sampled_from(ids)))
    values = {y: draw(st.integers(-3, 3)) for y in sorted(known)}
    return n, views, values


@settings(max_examples=400, deadline=None)
@given(grids())
def test_closure_matches_brute_force(g):
    n, views, values = g
    assert compute_closure(views, values) == closure_oracle(views, values, n)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 3), st.integers(0, 9)), unique=True, max_size=12), st.data())
def test_amortized_oldest_matches_scan(pairs, data):
    p = SimProc(2, 3)
    p.sent = [SimulatedMessage(src, 2, seq, 0) for src, seq in pairs]
    p.sent_set = set(p.sent)
    order = data.draw(st.permutations(p.sent))
    for k, m in enumerate(order):
        assert p.oldest() == oldest_unreceived(p.sent, p.received)
        p.received[m] = k
    assert p.oldest() is None


scalars = st.one_of(st.integers(-50, 50), st.text(max_size=3), st.floats(allow_nan=False, width=32))
values = st.recursive(scalars, lambda inner: st.tuples(inner, inner), max_leaves=6)


@given(st.lists(values, max_size=8))
def test_order_key_sort_is_permutation_invariant(vs):
    assert sorted(vs, key=order_key) == sorted(reversed(vs), key=order_key)


@given(st.dictionaries(st.text(max_size=4), st.integers(), max_size=6))
def test_digest_ignores_dict_insertion_order(d):
    assert digest(d) == digest(dict(reversed(list(d.items()))))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=6), st.data())
def test_kset_decisions_are_k_smallest_bounded(inputs, data):
    n = len(inputs)
    t = data.draw(st.integers(0, n - 1))
    decided = set()
    for j in range(1, n + 1):
        state, _ = kset_transition(j, kset_initial(j, inputs[j - 1]), None, n, t)
        for src in data.draw(st.permutations(range(1, n + 1))):
            state, _ = kset_transition(j, state, SimulatedMessage(src, j, 0, inputs[src - 1]), n, t)
        decided.add(state.decided)
    assert decided <= set(inputs)
    assert decided <= set(sorted(set(inputs))[: t + 1])


def safety_only(sc):
    tv = TraceView(run_scenario(sc).trace.events)
    return [v.to_json() for v in (check_agreement(tv), check_validity(tv), check_write_once(tv)) if not v.ok]


@pytest.mark.slow
def test_safety_without_fairness_crash():
    """Unbounded envelope age: liveness is not promised, safety still is."""
    bad = []
    for seed in range(1000):
        n = (3, 4, 5)[seed % 3]
        sc = crash_sa(n, seed, max_age=None, max_steps=200_000)
        bad += [(seed, f) for f in safety_only(sc)]
    assert not bad, bad[:3]


@pytest.mark.slow
def test_safety_without_fairness_byzantine():
    scripts = ("equivocator", "liar", "witness_spammer", "double_proposer")
    bad = []
    for seed in range(200):
        sc = byz_sa(4, scripts[seed % 4], seed, max_age=None)
        bad += [(seed, f) for f in safety_only(sc)]
    assert not bad, bad[:3]
