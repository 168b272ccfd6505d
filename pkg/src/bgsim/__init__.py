"""Deterministic simulation of safe agreement objects and the BG simulation.

Crash-tolerant (n > 2t) and Byzantine-tolerant (n > 3t) safe agreement,
the simulation engine that runs an n'-process t-resilient algorithm on n
simulators, scripted adversaries, and executable checks over run traces.
"""
from .messages import Message, SimulatedMessage, Tag, digest, order_key
from .netsim import BudgetExceeded, CrashSpec, FaultPlan, Network, Trace
from .scenario import Scenario, build, report, run_scenario

__all__ = [
    "BudgetExceeded",
    "CrashSpec",
    "FaultPlan",
    "Message",
    "Network",
    "Scenario",
    "SimulatedMessage",
    "Tag",
    "Trace",
    "build",
    "digest",
    "order_key",
    "report",
    "run_scenario",
]

__version__ = "0.1.0"
