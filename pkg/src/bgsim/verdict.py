from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any


@dataclass
class Verdict:
    name: str
    ok: bool
    detail: str = ""
    counterexample: list = field(default_factory=list)
    measured: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.ok

    def to_json(self) -> dict[str, Any]:
        d: dict[str, Any] = {"check": self.name, "pass": self.ok}
        if self.detail:
            d["detail"] = self.detail
        if self.counterexample:
            d["counterexample"] = self.counterexample[:20]
        if self.measured:
            d["measured"] = self.measured
        return d


def passed(name: str, detail: str = "", **measured) -> Verdict:
    return Verdict(name, True, detail, measured=measured)


def failed(name: str, detail: str, counterexample=None, **measured) -> Verdict:
    return Verdict(name, False, detail, list(counterexample or []), measured)
