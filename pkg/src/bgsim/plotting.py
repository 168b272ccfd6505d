"""Figures for run and sweep reports (written to files, never shown)."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def envelope_bars(envelopes: dict, path: Path, title: str = "") -> Path:
    tags = sorted(envelopes, key=lambda k: -envelopes[k])
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.barh(tags[::-1], [envelopes[k] for k in tags[::-1]], color="tab:blue")
    ax.set_xlabel("envelopes")
    ax.set_title(title or "envelopes by tag")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def decision_timeline(events: Iterable[tuple], n: int, path: Path, title: str = "") -> Path:
    """One dot per decide event: step on x, simulator on y."""
    xs, ys = [], []
    for ev in events:
        if ev[1] == "decide":
            xs.append(ev[0])
            ys.append(ev[2])
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.scatter(xs, ys, s=10, color="tab:green")
    ax.set_yticks(range(1, n + 1))
    ax.set_xlabel("step")
    ax.set_ylabel("simulator")
    ax.set_title(title or "object decisions")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def sweep_summary(seeds: Sequence[int], steps: Sequence[int], ok: Sequence[bool], path: Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(7, 3))
    colors = ["tab:blue" if o else "tab:red" for o in ok]
    ax.scatter(seeds, steps, c=colors, s=12)
    ax.set_xlabel("seed")
    ax.set_ylabel("steps to quiescence")
    ax.set_title(title or f"{sum(ok)}/{len(ok)} seeds pass")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
