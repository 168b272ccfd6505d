"""Executable properties over traces, plus small-scope exhaustive exploration.

All trace checks work on ``(step, kind, from, to, tag, object, data)``
tuples, either straight from a run or reloaded from JSON lines. The first
event of a run is a ``meta`` record naming n, t, the model and the correct
simulators; the last is an ``end`` record carrying quiescence. Liveness
verdicts only hold "at quiescence": a finite run cannot certify more.
"""
from __future__ import annotations

import copy
import itertools
import json
import random
from collections import Counter, defaultdict
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .messages import freeze, order_key
from .netsim import DELIVER, DROP, ENVELOPE_KINDS, SEND
from .verdict import Verdict, failed, passed

STEP, KIND, FRM, TO, TAG, OBJ, DATA = range(7)


class TraceView:
    """Indexes a trace once for all checks."""

    def __init__(self, events: Iterable[tuple], meta: Optional[dict] = None):
        self.events = list(events)
        self.by_kind: dict[str, list] = defaultdict(list)
        for ev in self.events:
            self.by_kind[ev[KIND]].append(ev)
        if meta is None:
            metas = self.by_kind.get("meta")
            if not metas:
                raise ValueError("trace has no meta record; pass meta explicitly")
            meta = dict(metas[0][DATA]) if not isinstance(metas[0][DATA], dict) else metas[0][DATA]
        self.meta = meta
        self.n = meta["n"]
        self.t = meta["t"]
        self.model = meta["model"]
        self.correct = set(meta["correct"])
        self.byzantine = set(meta.get("byzantine", ()))
        self.honest = set(range(1, self.n + 1)) - self.byzantine
        ends = self.by_kind.get("end")
        self.quiescent = bool(ends and _get(ends[-1][DATA], "quiescent"))

    def kind(self, k: str, who: Optional[set] = None) -> list:
        evs = self.by_kind.get(k, [])
        if who is None:
            return evs
        return [ev for ev in evs if ev[FRM] in who]


def _get(data, key):
    if isinstance(data, dict):
        return data.get(key)
    return dict(data).get(key)


def load_trace(path) -> TraceView:
    """Read a JSON-lines trace; envelope events keep only their payload digest."""
    events = []
    meta = None
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            rec = json.loads(ln)
            kind = rec["kind"]
            if kind == "meta":
                meta = rec["data"]
                data: Any = meta
            elif kind == "end":
                data = rec["data"]
            elif kind in ENVELOPE_KINDS:
                data = ("digest", rec["payload_digest"])
            else:
                data = freeze(rec.get("data"))
            events.append((rec["step"], kind, rec["from"], rec["to"], rec["tag"], freeze(rec["object"]), data))
    return TraceView(events, meta)


# -- safe agreement properties ------------------------------------------------

def check_agreement(tv: TraceView) -> Verdict:
    """At most one decided value per object among correct simulators."""
    vals: dict = defaultdict(dict)
    for ev in tv.kind("decide", tv.correct):
        vals[ev[OBJ]][ev[FRM]] = ev[DATA]
    bad = [(obj, d) for obj, d in vals.items() if len(set(d.values())) > 1]
    if bad:
        return failed("agreement", f"{len(bad)} object(s) with conflicting decisions", bad)
    return passed("agreement", objects=len(vals))


def check_validity(tv: TraceView) -> Verdict:
    """Crash: decided values were proposed. Byzantine: validated at a correct simulator."""
    if tv.model == "crash":
        proposed = {(ev[OBJ], ev[DATA]) for ev in tv.kind("propose_start")}
        bad = [ev for ev in tv.kind("decide", tv.correct) if (ev[OBJ], ev[DATA]) not in proposed]
    else:
        valid = {(ev[OBJ], ev[DATA][1]) for ev in tv.kind("valid", tv.correct)}
        bad = [ev for ev in tv.kind("decide", tv.correct) if (ev[OBJ], ev[DATA]) not in valid]
    if bad:
        return failed("validity", f"{len(bad)} decision(s) without a valid origin", bad)
    return passed("validity")


def _proposals(tv: TraceView, who: set):
    started = defaultdict(set)
    done = defaultdict(set)
    decided = defaultdict(set)
    for ev in tv.kind("propose_start", who):
        started[ev[OBJ]].add(ev[FRM])
    for ev in tv.kind("propose_done", who):
        done[ev[OBJ]].add(ev[FRM])
    for ev in tv.kind("decide", who):
        decided[ev[OBJ]].add(ev[FRM])
    return started, done, decided


def check_termination(tv: TraceView) -> Verdict:
    """Crash model, at quiescence: every correct propose completes, and every
    correct proposer decides on objects where nobody crashed mid-propose."""
    if not tv.quiescent:
        return failed("termination", "run did not reach quiescence")
    started, done, decided = _proposals(tv, tv.correct)
    crashed = {ev[FRM] for ev in tv.kind("crash")}
    all_started, all_done, _ = _proposals(tv, tv.honest)
    stuck = [(obj, sorted(started[obj] - done[obj])) for obj in started if started[obj] - done[obj]]
    if stuck and tv.model == "crash":
        return failed("propose_termination", "correct proposes did not complete", stuck)
    undecided = []
    for obj, who in started.items():
        in_propose_crash = bool((all_started[obj] - all_done[obj]) & crashed)
        if in_propose_crash:
            continue
        missing = who - decided[obj]
        if missing:
            undecided.append((obj, sorted(missing)))
    if undecided and tv.model == "crash":
        return failed("decide_termination", "objects left undecided without an in-propose crash", undecided)
    return passed("termination", objects=len(started))


def blocked_objects(tv: TraceView) -> list:
    started, _done, decided = _proposals(tv, tv.correct)
    return sorted((obj for obj, who in started.items() if who - decided[obj]), key=repr)


def check_blocking_bound(tv: TraceView) -> Verdict:
    """At quiescence at most t objects proposed on by correct simulators stay undecided."""
    if not tv.quiescent:
        return failed("blocking_bound", "run did not reach quiescence")
    blocked = blocked_objects(tv)
    if len(blocked) > tv.t:
        return failed("blocking_bound", f"{len(blocked)} blocked objects > t={tv.t}", blocked)
    return passed("blocking_bound", blocked=len(blocked))


def check_write_once(tv: TraceView) -> Verdict:
    """values / answers / all_views entries are written once and agree across correct simulators."""
    conflicts = tv.kind("write_conflict", tv.correct)
    if conflicts:
        return failed("write_once", "conflicting second write", conflicts)
    seen: dict = {}
    per_sim: Counter = Counter()
    bad = []
    for ev in tv.kind("write", tv.correct):
        table, idx, v = ev[DATA]
        key = (ev[OBJ], table, idx)
        per_sim[(ev[FRM],) + key] += 1
        if key in seen and seen[key] != v:
            bad.append((key, seen[key], v, ev[FRM]))
        seen.setdefault(key, v)
    twice = [k for k, c in per_sim.items() if c > 1]
    if twice:
        return failed("write_once", "entry written twice by one simulator", twice)
    if bad:
        return failed("write_once", "correct simulators hold different values for one entry", bad)
    return passed("write_once", entries=len(seen))


def check_lock(tv: TraceView) -> Verdict:
    """No honest simulator has two overlapping propose intervals."""
    open_: dict[int, set] = defaultdict(set)
    bad = []
    for ev in tv.events:
        kind = ev[KIND]
        if kind == "propose_start" and ev[FRM] in tv.honest:
            if open_[ev[FRM]]:
                bad.append((ev[FRM], ev[OBJ], sorted(open_[ev[FRM]], key=repr)))
            open_[ev[FRM]].add(ev[OBJ])
        elif kind == "propose_done" and ev[FRM] in tv.honest:
            open_[ev[FRM]].discard(ev[OBJ])
    if bad:
        return failed("lock_safety", "overlapping proposes", bad)
    return passed("lock_safety")


def check_recorded_quorums(tv: TraceView) -> Verdict:
    """Any two recorded quorums of one witness family on one object share >= t+1 members."""
    groups: dict = defaultdict(list)
    for ev in tv.kind("quorum", tv.correct):
        tag, key, senders = ev[DATA]
        groups[(ev[OBJ], tag)].append(frozenset(senders))
    worst = None
    for qs in groups.values():
        uniq = list(set(qs))
        for a, b in itertools.combinations(uniq, 2):
            k = len(a & b)
            if worst is None or k < worst:
                worst = k
        for a in uniq:
            if worst is None or len(a) < worst:
                worst = len(a)
    if worst is not None and worst < tv.t + 1:
        return failed("quorum_intersection", f"two quorums share only {worst} < t+1 members")
    return passed("quorum_intersection", min_intersection=worst)


def check_witness_pattern(tv: TraceView) -> Verdict:
    """(i) one correct action implies all correct; (ii) t+1 correct broadcasts imply all act."""
    if not tv.quiescent:
        return failed("witness_pattern", "run did not reach quiescence")
    fired: dict = defaultdict(set)
    bcast: dict = defaultdict(set)
    for ev in tv.kind("quorum", tv.correct):
        tag, key, _ = ev[DATA]
        fired[(ev[OBJ], tag, key)].add(ev[FRM])
    for ev in tv.kind("witness_bcast", tv.correct):
        tag, key = ev[DATA]
        bcast[(ev[OBJ], tag, key)].add(ev[FRM])
    correct = tv.correct
    bad_i = [(k, sorted(correct - who)) for k, who in fired.items() if who != correct]
    if bad_i:
        return failed("witness_pattern_i", "an action fired at some but not all correct simulators", bad_i)
    bad_ii = [
        (k, sorted(correct - fired.get(k, set())))
        for k, who in bcast.items()
        if len(who) >= tv.t + 1 and fired.get(k, set()) != correct
    ]
    if bad_ii:
        return failed("witness_pattern_ii", "t+1 correct broadcasts without all correct acting", bad_ii)
    return passed("witness_pattern", fired=len(fired), broadcast_groups=len(bcast))


def check_no_creation(tv: TraceView) -> Verdict:
    """Every delivery matches an earlier send; at quiescence every envelope is consumed."""
    sends = tv.by_kind.get(SEND, [])
    if not sends:
        return passed("no_creation", "envelopes not recorded; skipped")
    outstanding: Counter = Counter()
    for ev in tv.events:
        kind = ev[KIND]
        if kind == SEND:
            outstanding[(ev[FRM], ev[TO], ev[DATA])] += 1
        elif kind == DELIVER or kind == DROP:
            key = (ev[FRM], ev[TO], ev[DATA])
            if outstanding[key] <= 0:
                return failed("no_creation", "delivery without a matching send", [ev])
            outstanding[key] -= 1
    if tv.quiescent:
        left = +outstanding
        if left:
            return failed("no_loss", f"{sum(left.values())} envelopes never delivered", list(left)[:5])
    return passed("no_creation", envelopes=len(sends))


# -- simulation properties ----------------------------------------------------

def check_causality(tv: TraceView) -> Verdict:
    """A simulated message is produced, and first proposed, before it is first decided."""
    first_send: dict = {}
    for ev in tv.kind("sim_send", tv.honest):
        first_send.setdefault(ev[DATA], ev[STEP])
    first_prop: dict = {}
    for ev in tv.kind("propose_start", tv.honest):
        obj = ev[OBJ]
        if isinstance(obj, tuple) and len(obj) == 2 and obj[1] >= 1:
            first_prop.setdefault(ev[DATA], ev[STEP])
    first_dec: dict = {}
    for ev in tv.kind("decide", tv.correct):
        obj = ev[OBJ]
        if isinstance(obj, tuple) and len(obj) == 2 and obj[1] >= 1:
            first_dec.setdefault(ev[DATA], (ev[STEP], obj))
    bad = []
    for m, (step, obj) in first_dec.items():
        s = first_send.get(m)
        if s is None or s > step:
            bad.append(("decided before sent", obj, m))
        p = first_prop.get(m)
        if p is not None and p >= step:
            bad.append(("decided before proposed", obj, m))
    if bad:
        return failed("causality", f"{len(bad)} causality violations", bad)
    return passed("causality", messages=len(first_dec))


def check_fifo(tv: TraceView) -> Verdict:
    """Crash model: each simulated stream is received in sending order, without gaps."""
    nxt: dict = defaultdict(int)
    bad = []
    for ev in tv.kind("sim_recv", tv.correct):
        src, dst, seq, _ = ev[DATA]
        key = (ev[FRM], src, dst)
        if seq != nxt[key]:
            bad.append((ev[FRM], ev[OBJ], ev[DATA], nxt[key]))
        nxt[key] = seq + 1
    if bad:
        return failed("fifo", "simulated stream received out of order", bad)
    return passed("fifo")


def check_bg_consistency(tv: TraceView) -> Verdict:
    """Correct simulators agree on every simulated input, received message,
    state and decision of every simulated process."""
    bad = []
    for kind in ("sim_input", "sim_recv", "sim_state", "sim_decide"):
        seen: dict = {}
        for ev in tv.kind(kind, tv.correct):
            key = ev[OBJ] if kind != "sim_decide" else ev[OBJ][0]
            if key in seen and seen[key][1] != ev[DATA]:
                bad.append((kind, key, seen[key], (ev[FRM], ev[DATA])))
            seen.setdefault(key, (ev[FRM], ev[DATA]))
    if bad:
        return failed("simulation_consistency", f"{len(bad)} divergences", bad)
    return passed("simulation_consistency")


def sim_outputs(tv: TraceView) -> dict[int, dict[int, Any]]:
    out: dict = {i: {} for i in tv.correct}
    for ev in tv.kind("sim_decide", tv.correct):
        out[ev[FRM]][ev[OBJ][0]] = ev[DATA]
    return out


def check_bg_progress(tv: TraceView) -> Verdict:
    """At quiescence every correct simulator has decisions for >= n'-t simulated processes."""
    if not tv.quiescent:
        return failed("simulation_progress", "run did not reach quiescence")
    need = tv.meta["n'"] - tv.t
    outs = sim_outputs(tv)
    short = {i: len(d) for i, d in outs.items() if len(d) < need}
    if short:
        return failed("simulation_progress", f"fewer than {need} simulated decisions", sorted(short.items()))
    return passed("simulation_progress", min_decided=min((len(d) for d in outs.values()), default=0))


def check_kset(tv: TraceView) -> Verdict:
    """Decisions come from correct inputs and number at most t+1."""
    allowed = set(freeze(tv.meta.get("correct_inputs", [])))
    decided = {ev[DATA] for ev in tv.kind("sim_decide", tv.correct)}
    outside = sorted((v for v in decided if v not in allowed), key=repr)
    if outside:
        return failed("task_validity", "decided values outside the correct inputs", outside)
    if len(decided) > tv.t + 1:
        return failed("task_agreement", f"{len(decided)} distinct decisions > t+1")
    return passed("task", distinct=len(decided))


def run_checks(tv: TraceView) -> list[Verdict]:
    """All checks that apply to the run's model and workload."""
    vs = [
        check_agreement(tv),
        check_validity(tv),
        check_write_once(tv),
        check_lock(tv),
        check_no_creation(tv),
    ]
    if tv.model == "crash":
        vs.append(check_termination(tv))
    else:
        vs += [check_blocking_bound(tv), check_recorded_quorums(tv), check_witness_pattern(tv)]
    if tv.meta.get("workload") == "bg":
        vs += [check_causality(tv), check_bg_consistency(tv), check_kset(tv)]
        if tv.model == "crash":
            vs.append(check_fifo(tv))
        if tv.quiescent:
            vs.append(check_bg_progress(tv) if tv.model == "crash" else check_bg_blocking(tv))
    return vs


def check_bg_blocking(tv: TraceView) -> Verdict:
    """Byzantine model: at most t simulated processes stay undecided at a correct simulator."""
    if not tv.quiescent:
        return failed("simulation_blocking", "run did not reach quiescence")
    n_sim = tv.meta["n'"]
    outs = sim_outputs(tv)
    worst = max((n_sim - len(d) for d in outs.values()), default=0)
    if worst > tv.t:
        return failed("simulation_blocking", f"{worst} simulated processes undecided > t")
    return passed("simulation_blocking", max_undecided=worst)


# -- pure oracles ---------------------------------------------------------------

def closure_oracle(all_views: Mapping[int, Sequence], values: Mapping[int, Any], n: int):
    """Brute force over all 2^n - 1 subsets, by size then lexicographically."""
    for size in range(1, n + 1):
        for sigma in itertools.combinations(range(1, n + 1), size):
            members = set(sigma)
            ok = True
            for y in sigma:
                view = all_views.get(y)
                if view is None:
                    ok = False
                    break
                for z in range(1, n + 1):
                    if view[z - 1] is not None and z not in members:
                        ok = False
                        break
                if not ok:
                    break
            if ok:
                vals = [values.get(y) for y in sigma]
                if any(v is None for v in vals):
                    return None
                best = vals[0]
                for v in vals[1:]:
                    if order_key(v) < order_key(best):
                        best = v
                return frozenset(sigma), best
    return None


def check_quorum_lemma(n: int, t: int, exhaustive_limit: int = 8, samples: int = 20000, seed: int = 0) -> Verdict:
    """Two sets of floor((n+t)/2)+1 simulators share at least t+1 of them."""
    q = (n + t) // 2 + 1
    if q > n:
        return failed("quorum_lemma", f"quorum {q} exceeds n={n}")
    universe = range(1, n + 1)
    worst = n
    if n <= exhaustive_limit:
        subsets = [frozenset(c) for c in itertools.combinations(universe, q)]
        for a, b in itertools.combinations_with_replacement(subsets, 2):
            k = len(a & b)
            if k < worst:
                worst = k
    else:
        rng = random.Random(seed)
        for _ in range(samples):
            a = set(rng.sample(universe, q))
            b = set(rng.sample(universe, q))
            worst = min(worst, len(a & b))
    if worst < t + 1:
        return failed("quorum_lemma", f"n={n}, t={t}: intersection {worst} < t+1", measured_min=worst)
    return passed("quorum_lemma", n=n, t=t, quorum=q, min_intersection=worst)


# -- exhaustive exploration -----------------------------------------------------

def _fingerprint(net) -> tuple:
    nodes = tuple(net.nodes[i].snapshot() for i in sorted(net.nodes))
    pend = tuple(sorted(Counter((it[0], it[1], repr(it[2])) for it in net._pending).items()))
    return nodes, pend, tuple(sorted(net.crashed))


def _distinct_choices(net) -> list[int]:
    seen = set()
    out = []
    for idx, it in enumerate(net._pending):
        key = (it[0], it[1], repr(it[2]))
        if key not in seen:
            seen.add(key)
            out.append(idx)
    out.sort(key=lambda k: (net._pending[k][0] or 0, net._pending[k][1], repr(net._pending[k][2])))
    return out


def _state_safety(net, correct: set, model: str) -> Optional[str]:
    decided: dict = defaultdict(set)
    proposed: dict = defaultdict(set)
    validated: dict = defaultdict(set)
    for i, node in net.nodes.items():
        objs = getattr(node, "objects", None)
        if objs is None:
            objs = getattr(getattr(node, "inner", None), "objects", {})
        for obj, sa in objs.items():
            if sa.proposal is not None:
                proposed[obj].add(sa.proposal)
            if i in correct:
                if sa.decision is not None:
                    decided[obj].add(sa.decision)
                for _j, v in getattr(sa, "validated", ()):
                    validated[obj].add(v)
    for obj, vals in decided.items():
        if len(vals) > 1:
            return f"agreement violated on {obj}: {sorted(vals, key=repr)}"
        origin = proposed[obj] if model == "crash" else validated[obj]
        if not vals <= origin:
            return f"validity violated on {obj}: {vals} has no valid origin"
    return None


def liveness_at_quiescence(net) -> Optional[str]:
    """Final check for explored runs: termination (crash) or the blocking bound."""
    end = (net.step_count, "end", None, None, "end", None, {"quiescent": net.quiescent()})
    tv = TraceView(list(net.trace.events) + [end])
    v = check_termination(tv) if tv.model == "crash" else check_blocking_bound(tv)
    return None if v.ok else f"{v.name}: {v.detail}"


def explore_exhaustive(
    build: Callable[[], Any],
    depth: int,
    correct: set,
    model: str,
    completions: int = 2,
    max_states: int = 200_000,
    final_check: Optional[Callable[[Any], Optional[str]]] = None,
    prefixes: Sequence[int] = (0,),
    prefix_seed: int = 0,
) -> Verdict:
    """Depth-first search over every distinct enabled event for ``depth``
    steps, with states merged by fingerprint; each frontier state is then run
    to quiescence under ``completions`` seeded schedules. Safety is checked in
    every visited state, ``final_check`` in every completed run.

    The search is rooted at the initial state and, for every length L in
    ``prefixes``, at the state reached after L seeded random steps, so that
    windows in the middle of a run are covered exhaustively too.
    """
    seen: set = set()
    stats = Counter()
    for plen in prefixes:
        root = build()
        root.trace.record_envelopes = False
        root.rng.seed(f"prefix:{prefix_seed}:{plen}")
        for _ in range(plen):
            if root.step() is None:
                break
        v = _explore_from(root, depth, correct, model, completions, max_states, final_check, seen, stats, plen)
        if v is not None:
            return v
    return passed("explore", depth=depth, roots=len(prefixes), **dict(stats))


def _explore_from(root, depth, correct, model, completions, max_states, final_check, seen, stats, plen):
    stack: list = [(root, 0, ())]
    while stack:
        net, d, path = stack.pop()
        fp = _fingerprint(net)
        if fp in seen:
            continue
        seen.add(fp)
        stats["states"] += 1
        if stats["states"] > max_states:
            return failed("explore", f"state budget {max_states} exhausted", measured_states=stats["states"])
        err = _state_safety(net, correct, model)
        if err:
            return failed("explore", f"{err} (after random prefix of {plen})", list(path))
        choices = _distinct_choices(net)
        if not choices or d >= depth:
            runs = [net] if not choices else []
            if choices:
                stats["frontier"] += 1
            for c in range(completions if choices else 0):
                w = copy.deepcopy(net)
                w.rng.seed(f"{len(seen)}:{c}")
                w.run_until(None, 10**7)
                runs.append(w)
            for w in runs:
                stats["completed_runs"] += 1
                err = _state_safety(w, correct, model)
                if err is None and final_check is not None:
                    err = final_check(w)
                if err:
                    return failed("explore", f"{err} (after random prefix of {plen})", list(path))
            continue
        for idx in reversed(choices):
            w = copy.deepcopy(net)
            item = w._pending[idx]
            label = (item[0], item[1], repr(item[2]))
            w.step(item)
            stack.append((w, d + 1, path + (label,)))
    return None
