"""Workload builders shared by the unit and acceptance suites."""
from __future__ import annotations

import random

from bgsim.checker import TraceView, run_checks
from bgsim.messages import Message, Tag
from bgsim.netsim import CrashSpec, FaultPlan, Network
from bgsim.node import ObjectHost
from bgsim.scenario import Scenario, run_scenario

BYZ_SCRIPTS = ("silent", "equivocator", "double_proposer", "witness_spammer")


def crash_t(n: int) -> int:
    return (n + 1) // 2 - 1


def byz_t(n: int) -> int:
    return (n + 2) // 3 - 1


def crash_plan(n: int, t: int, seed: int, objects: int) -> FaultPlan:
    """Up to t crashes of mixed kinds: at a step, after k sends, inside a
    given propose (possibly mid-broadcast), or at a step outside any propose."""
    rng = random.Random(f"crash-plan:{n}:{seed}")
    ids = rng.sample(range(1, n + 1), rng.randint(0, t))
    crashes = {}
    for i in ids:
        kind = rng.choice(("step", "sends", "inprop", "outside"))
        if kind == "step":
            crashes[i] = CrashSpec(at_step=rng.randint(0, 300))
        elif kind == "sends":
            crashes[i] = CrashSpec(after_sends=rng.randint(0, 60))
        elif kind == "inprop":
            crashes[i] = CrashSpec(after_sends=rng.randint(0, 2 * n), in_propose=(0, rng.randrange(objects)))
        else:
            crashes[i] = CrashSpec(at_step=rng.randint(0, 300), outside_propose=True)
    return FaultPlan(crashes=crashes)


def crash_sa(n: int, seed: int, objects: int = 2, **kw) -> Scenario:
    t = crash_t(n)
    return Scenario(n=n, t=t, objects=objects, seed=seed, faults=crash_plan(n, t, seed, objects), **kw)


def byz_sa(n: int, script: str, seed: int, **kw) -> Scenario:
    """t Byzantine simulators (the highest ids) running ``script``.

    Larger systems get fewer correct proposers so the sweep stays at desk
    scale; every Byzantine simulator always proposes too.
    """
    t = byz_t(n)
    byz = list(range(n - t + 1, n + 1))
    correct_props, objects = {4: (3, 2), 7: (2, 2), 10: (1, 1)}.get(n, (2, 1))
    kw.setdefault("objects", objects)
    kw.setdefault("record_envelopes", False)
    return Scenario(
        n=n,
        t=t,
        model="byzantine",
        proposers=list(range(1, correct_props + 1)) + byz,
        seed=seed,
        faults=FaultPlan(byzantine={i: script for i in byz}),
        **kw,
    )


BG_INPUTS = [3, 1, 2, 5, 4]


def bg_crash(seed: int, plan: str) -> Scenario:
    """n' = n = 5, t = 2; ``plan`` is 'none', 'outside' or 'inside'."""
    rng = random.Random(f"bg-crash:{plan}:{seed}")
    crashes = {}
    if plan != "none":
        for i in rng.sample(range(1, 6), rng.randint(1, 2)):
            if plan == "outside":
                crashes[i] = CrashSpec(at_step=rng.randint(0, 4000), outside_propose=True)
            else:
                obj = (rng.randint(1, 5), rng.randint(0, 3))
                crashes[i] = CrashSpec(after_sends=rng.randint(0, 12), in_propose=obj)
    return Scenario(
        n=5,
        t=2,
        workload="bg",
        n_sim=5,
        inputs=list(BG_INPUTS),
        seed=seed,
        faults=FaultPlan(crashes=crashes),
        record_envelopes=False,
    )


# correct simulators hold 1 or 2 (m = 2); -5 is held only by the Byzantine ids
BG_BYZ_INPUTS = [1, 1, 1, 2, 2, -5, -5]


def bg_byz(seed: int, scripts: tuple, **kw) -> Scenario:
    kw.setdefault("record_envelopes", False)
    return Scenario(
        n=7,
        t=2,
        model="byzantine",
        workload="bg",
        n_sim=5,
        inputs=list(BG_BYZ_INPUTS),
        validate_inputs=True,
        m=2,
        seed=seed,
        faults=FaultPlan(byzantine={6: scripts[0], 7: scripts[1]}),
        **kw,
    )


def run_and_check(sc: Scenario):
    res = run_scenario(sc)
    tv = TraceView(res.trace.events)
    return res, tv, run_checks(tv)


def failures(verdicts) -> list:
    return [v.to_json() for v in verdicts if not v.ok]


class FakePort:
    """Port stand-in that keeps sends and records in lists."""

    def __init__(self, me, n):
        self.me, self.n = me, n
        self.out = []
        self.events = []

    def send(self, to, msg):
        self.out.append((to, msg))

    def broadcast(self, msg):
        for to in range(1, self.n + 1):
            self.out.append((to, msg))

    def record(self, kind, obj, data=None, tag=None):
        self.events.append((kind, obj, data))


class Mute:
    """A network node that ignores everything."""

    def start(self):
        pass

    def deliver(self, frm, msg):
        pass

    def runnable(self):
        return False

    def local_step(self):
        pass

    def snapshot(self):
        return ()


def meta_event(n, t, model, correct, workload="sa", **extra):
    meta = {"n": n, "t": t, "model": model, "workload": workload, "seed": 0, "correct": sorted(correct),
            "byzantine": sorted(set(range(1, n + 1)) - set(correct)) if model == "byzantine" else [],
            "crashes": []}
    meta.update(extra)
    return (0, "meta", None, None, "meta", None, meta)


def end_event(net: Network):
    return (net.step_count, "end", None, None, "end", None, {"quiescent": net.quiescent(), "steps": net.step_count})


DIRECTED_OBJ = (0, 0)


def directed_witness(n: int, t: int, seed: int):
    """t+1 correct simulators broadcast VALUE_WITNESS for one key, the other
    t simulators are mute. Returns the quiescent network and the correct ids."""
    net = Network(n, seed=seed)
    correct = set(range(1, n - t + 1))
    for i in range(1, n + 1):
        net.attach(i, ObjectHost(net.port(i), t, "byzantine") if i in correct else Mute())
    net.trace.add(*meta_event(n, t, "byzantine", correct))
    key = (n, "m")
    for i in range(1, t + 2):
        net.port(i).record("witness_bcast", DIRECTED_OBJ, (Tag.VALUE_WITNESS.value, key))
        net.broadcast(i, Message(Tag.VALUE_WITNESS, DIRECTED_OBJ, key))
    net.run_until(None, 10**6)
    net.trace.add(*end_event(net))
    return net, correct
