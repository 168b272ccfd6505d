"""Scenario description, construction of a run, and the report it produces."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .adversary import ByzantineNode, make_script
from .bg_core import BGSimulator
from .messages import freeze
from .netsim import BudgetExceeded, FaultPlan, Network, RunOutcome
from .node import CRASH, MODELS, SAWorkloadNode
from .tasks import input_constraint, make_task

SA, BG = "sa", "bg"


@dataclass
class Scenario:
    n: int
    t: int
    model: str = CRASH
    workload: str = SA
    seed: int = 0
    max_steps: int = 5_000_000
    faults: FaultPlan = field(default_factory=FaultPlan)
    adversary_params: dict = field(default_factory=dict)
    # standalone objects
    objects: int = 1
    proposers: Optional[list[int]] = None
    # simulation
    n_sim: Optional[int] = None
    task: str = "kset"
    inputs: Optional[list] = None
    input_mode: Optional[str] = None
    validate_inputs: bool = False
    m: Optional[int] = None
    input_threshold: Optional[int] = None
    # knobs
    valid_threshold: Optional[int] = None
    prefer_first: bool = True
    max_age: Optional[int] = -1
    record_envelopes: bool = True

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.workload not in (SA, BG):
            raise ValueError("workload must be 'sa' or 'bg'")
        if not 1 <= self.n:
            raise ValueError("n must be positive")
        if self.t < 0:
            raise ValueError("t must be non-negative")
        if self.workload == BG and self.n_sim is None:
            raise ValueError("a simulation scenario needs n'")
        if self.input_mode not in (None, "vector", "per_simulator", "own"):
            raise ValueError(f"unknown input_mode {self.input_mode!r}")

    # -- derived --------------------------------------------------------
    @property
    def byzantine(self) -> set[int]:
        return set(self.faults.byzantine)

    @property
    def correct(self) -> set[int]:
        """Simulators that follow the protocol and never crash."""
        return set(range(1, self.n + 1)) - self.faults.faulty()

    def resilience_ok(self) -> bool:
        bound = self.n > 2 * self.t if self.model == CRASH else self.n > 3 * self.t
        return bound and self.faults.within(self.t)

    def proposer_ids(self) -> list[int]:
        return list(self.proposers) if self.proposers is not None else list(range(1, self.n + 1))

    def sa_value(self, i: int, r: int):
        if self.inputs is not None:
            return self.inputs[i - 1]
        return 10 * i + r

    def input_layout(self) -> str:
        """'vector' (one value per simulated process, shared), 'per_simulator'
        (one such vector per simulator) or 'own' (one value per simulator,
        used for every simulated process)."""
        if self.input_mode is not None:
            return self.input_mode
        if self.inputs is None:
            return "vector"
        if self.validate_inputs:
            return "own"
        if self.inputs and isinstance(self.inputs[0], (list, tuple)) and len(self.inputs) == self.n:
            return "per_simulator"
        return "vector" if len(self.inputs) == self.n_sim else "own"

    def sim_inputs(self, i: int):
        if self.inputs is None:
            return list(range(1, self.n_sim + 1))
        layout = self.input_layout()
        if layout == "vector":
            return list(self.inputs)
        if layout == "per_simulator":
            return list(self.inputs[i - 1])
        return self.inputs[i - 1]

    def correct_inputs(self) -> set:
        """Values a correct run may decide: inputs held by correct simulators."""
        vals: set = set()
        for i in self.correct | {c for c in self.faults.crashes}:
            x = self.sim_inputs(i)
            vals.update(x if isinstance(x, list) else [x])
        return vals

    # -- JSON -----------------------------------------------------------
    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        d = dict(d)
        kw: dict[str, Any] = {}
        if "n'" in d:
            kw["n_sim"] = d.pop("n'")
        if "n_sim" in d:
            kw["n_sim"] = d.pop("n_sim")
        kw["faults"] = FaultPlan.from_json(d.pop("faults", None))
        if "inputs" in d and d["inputs"] is not None:
            kw["inputs"] = [freeze(v) if not isinstance(v, list) else [freeze(x) for x in v] for v in d.pop("inputs")]
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown scenario fields: {sorted(extra)}")
        kw.update(d)
        return cls(**kw)

    def to_json(self) -> dict:
        d: dict[str, Any] = {
            "n": self.n,
            "t": self.t,
            "model": self.model,
            "workload": self.workload,
            "seed": self.seed,
            "max_steps": self.max_steps,
            "faults": self.faults.to_json(),
        }
        if self.workload == SA:
            d["objects"] = self.objects
            if self.proposers is not None:
                d["proposers"] = list(self.proposers)
        else:
            d["n'"] = self.n_sim
            d["task"] = self.task
            d["validate_inputs"] = self.validate_inputs
            if self.m is not None:
                d["m"] = self.m
            if self.input_threshold is not None:
                d["input_threshold"] = self.input_threshold
            if self.input_mode is not None:
                d["input_mode"] = self.input_mode
        if self.inputs is not None:
            d["inputs"] = self.inputs
        if self.adversary_params:
            d["adversary_params"] = self.adversary_params
        if self.valid_threshold is not None:
            d["valid_threshold"] = self.valid_threshold
        if not self.prefer_first:
            d["prefer_first"] = False
        if self.max_age != -1:
            d["max_age"] = self.max_age
        if not self.record_envelopes:
            d["record_envelopes"] = False
        return d

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build(sc: Scenario) -> Network:
    """A started network for ``sc``."""
    if sc.workload == BG and sc.validate_inputs and sc.m is not None:
        input_constraint(sc.n, sc.t, sc.m)
    net = Network(sc.n, seed=sc.seed, max_age=sc.max_age, faults=sc.faults, record_envelopes=sc.record_envelopes)
    task = make_task(sc.task, sc.n_sim, sc.t, sc.m) if sc.workload == BG else None
    props = set(sc.proposer_ids())
    knobs = {"prefer_first": sc.prefer_first, "valid_threshold": sc.valid_threshold}

    def make_inner(i):
        if sc.workload == SA:
            plan = [((0, r), sc.sa_value(i, r)) for r in range(sc.objects)] if i in props else []
            return lambda port: SAWorkloadNode(port, sc.t, sc.model, plan, **knobs)
        return lambda port: BGSimulator(
            port,
            sc.t,
            sc.model,
            task,
            sc.sim_inputs(i),
            validate_inputs=sc.validate_inputs,
            input_threshold=sc.input_threshold,
            **knobs,
        )

    meta = {
        "n": sc.n,
        "t": sc.t,
        "model": sc.model,
        "workload": sc.workload,
        "seed": sc.seed,
        "correct": sorted(sc.correct),
        "byzantine": sorted(sc.byzantine),
        "crashes": sorted(sc.faults.crashes),
    }
    if sc.workload == BG:
        meta["n'"] = sc.n_sim
        meta["correct_inputs"] = sorted(sc.correct_inputs(), key=repr)
    net.trace.add(0, "meta", None, None, "meta", None, meta)

    for i in range(1, sc.n + 1):
        if i in sc.faults.byzantine:
            script = make_script(sc.faults.byzantine[i], net, i, sc.seed, sc.adversary_params.get(sc.faults.byzantine[i]))
            node = ByzantineNode(net, i, script, make_inner(i))
        else:
            node = make_inner(i)(net.port(i))
        net.attach(i, node)
    net.start()
    return net


@dataclass
class RunResult:
    scenario: Scenario
    net: Network
    outcome: RunOutcome
    budget_exceeded: bool = False

    @property
    def trace(self):
        return self.outcome.trace


def run_scenario(sc: Scenario) -> RunResult:
    net = build(sc)
    try:
        out = net.run_until(None, sc.max_steps)
        exceeded = False
    except BudgetExceeded as e:
        out = e.outcome
        exceeded = True
    net.trace.add(net.step_count, "end", None, None, "end", None, {"quiescent": out.quiescent, "steps": out.steps})
    return RunResult(sc, net, out, exceeded)


def _key(obj) -> str:
    if isinstance(obj, tuple):
        return ":".join(str(x) for x in obj)
    return str(obj)


def _jsonable(v):
    if isinstance(v, dict):
        return {_key(k) if not isinstance(k, str) else k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, set, frozenset)):
        return [_jsonable(x) for x in v]
    return v


def object_status(res: RunResult) -> dict:
    """Per object: proposers (correct only), deciders, decided value, status."""
    correct = res.scenario.correct
    objs: dict = {}
    for i in sorted(correct):
        node = res.net.nodes[i]
        for obj, sa in node.objects.items():
            if sa.proposal is None:
                continue
            st = objs.setdefault(obj, {"proposers": [], "deciders": [], "values": set()})
            st["proposers"].append(i)
            if sa.decision is not None:
                st["deciders"].append(i)
                st["values"].add(sa.decision)
    out = {}
    for obj, st in objs.items():
        done = set(st["deciders"]) == set(st["proposers"])
        out[obj] = {
            "status": "decided" if done else "blocked",
            "proposers": st["proposers"],
            "deciders": st["deciders"],
            "decided": sorted(st["values"], key=repr),
        }
    return out


def report(res: RunResult, verdicts=None) -> dict:
    sc = res.scenario
    out = res.outcome
    sims = {}
    for i, node in sorted(res.net.nodes.items()):
        if i in sc.byzantine:
            sims[str(i)] = {"byzantine": sc.faults.byzantine[i]}
            continue
        s = node.summary()
        entry = {
            "crashed": i in out.crashed,
            "decided": {_key(k): _jsonable(v) for k, v in sorted(s["decided"].items(), key=lambda kv: repr(kv[0]))},
        }
        if "sim_decided" in s:
            entry["sim_decided"] = {str(j): _jsonable(v) for j, v in sorted(s["sim_decided"].items())}
            entry["output"] = _jsonable(s["output"])
        sims[str(i)] = entry
    objs = {_key(k): _jsonable(v) for k, v in sorted(object_status(res).items(), key=lambda kv: repr(kv[0]))}
    env = Counter({tag.value: c for tag, c in out.envelopes.items()})
    rep = {
        "scenario": sc.to_json(),
        "steps": out.steps,
        "quiescent": out.quiescent,
        "budget_exceeded": res.budget_exceeded,
        "trace_hash": out.trace.hash(),
        "envelopes": dict(sorted(env.items())),
        "total_envelopes": sum(env.values()),
        "simulators": sims,
        "objects": objs,
    }
    if verdicts is not None:
        rep["verdicts"] = [v.to_json() for v in verdicts]
        rep["pass"] = all(v.ok for v in verdicts)
    return rep
