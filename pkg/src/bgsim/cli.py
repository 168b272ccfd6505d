"""Command-line front end: run, sweep, verify, explore.

Each command prints a JSON report on stdout between ``--- report ---`` and
``--- end ---`` lines, optionally writes it to ``--report-out``, and exits 0
iff every requested check passed (1 otherwise, 2 on bad input).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .checker import TraceView, explore_exhaustive, liveness_at_quiescence, load_trace, run_checks
from .scenario import SA, Scenario, build, report, run_scenario

log = logging.getLogger("bgsim")

BEGIN, END = "--- report ---", "--- end ---"


def _seed_range(text: str) -> range:
    a, sep, b = text.partition("..")
    if not sep:
        raise argparse.ArgumentTypeError("expected A..B")
    lo, hi = int(a), int(b)
    if hi < lo:
        raise argparse.ArgumentTypeError("empty seed range")
    return range(lo, hi + 1)


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def _emit(rep: dict, out: Optional[str]) -> None:
    text = json.dumps(rep, indent=2, sort_keys=False, default=str)
    print(BEGIN)
    print(text)
    print(END)
    if out:
        Path(out).write_text(text + "\n")


def _load(path: str, seed: Optional[int], max_steps: Optional[int]) -> Scenario:
    sc = Scenario.load(path)
    if seed is not None:
        sc = sc.with_seed(seed)
    if max_steps is not None:
        sc.max_steps = max_steps
    return sc


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.seed, args.max_steps)
    res = run_scenario(sc)
    vs = run_checks(TraceView(res.trace.events))
    rep = report(res, vs)
    if args.trace_out:
        res.trace.write_jsonl(args.trace_out)
    if args.figures:
        from . import plotting

        d = Path(args.figures)
        d.mkdir(parents=True, exist_ok=True)
        rep["figures"] = [
            str(plotting.envelope_bars(rep["envelopes"], d / "envelopes.png", f"seed {sc.seed}")),
            str(plotting.decision_timeline(res.trace.events, sc.n, d / "decisions.png")),
        ]
    _emit(rep, args.report_out)
    return 0 if rep["pass"] else 1


def cmd_sweep(args) -> int:
    base = _load(args.scenario, None, args.max_steps)
    rows = []
    failing = []
    for seed in args.seeds:
        res = run_scenario(base.with_seed(seed))
        vs = run_checks(TraceView(res.trace.events))
        ok = all(v.ok for v in vs)
        rows.append(
            {
                "seed": seed,
                "pass": ok,
                "steps": res.outcome.steps,
                "trace_hash": res.trace.hash(),
                "failed": [v.to_json() for v in vs if not v.ok],
            }
        )
        if not ok:
            failing.append(seed)
        log.info("seed %d: %s", seed, "pass" if ok else "FAIL")
    rep = {
        "scenario": base.to_json(),
        "seeds": [args.seeds.start, args.seeds.stop - 1],
        "runs": len(rows),
        "failing_seeds": failing,
        "pass": not failing,
        "results": rows,
    }
    if args.figures:
        from . import plotting

        d = Path(args.figures)
        d.mkdir(parents=True, exist_ok=True)
        rep["figures"] = [
            str(
                plotting.sweep_summary(
                    [r["seed"] for r in rows], [r["steps"] for r in rows], [r["pass"] for r in rows], d / "sweep.png"
                )
            )
        ]
    _emit(rep, args.report_out)
    return 0 if not failing else 1


def cmd_verify(args) -> int:
    tv = load_trace(args.trace)
    vs = run_checks(tv)
    rep = {
        "trace": args.trace,
        "events": len(tv.events),
        "quiescent": tv.quiescent,
        "verdicts": [v.to_json() for v in vs],
        "pass": all(v.ok for v in vs),
    }
    _emit(rep, args.report_out)
    return 0 if rep["pass"] else 1


def cmd_explore(args) -> int:
    sc = _load(args.scenario, args.seed, None)
    if sc.workload != SA:
        print("explore supports standalone object scenarios only", file=sys.stderr)
        return 2
    sc.record_envelopes = False
    v = explore_exhaustive(
        lambda: build(sc),
        args.depth,
        sc.correct,
        sc.model,
        completions=args.completions,
        final_check=liveness_at_quiescence,
        prefixes=args.prefixes,
    )
    rep = {"scenario": sc.to_json(), "verdicts": [v.to_json()], "pass": v.ok}
    _emit(rep, args.report_out)
    return 0 if v.ok else 1


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgsim", description="Safe agreement and BG simulation runner")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--max-steps", type=int)
    r.add_argument("--trace-out")
    r.add_argument("--report-out")
    r.add_argument("--figures", metavar="DIR", help="write PNG figures to DIR")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a seed range and aggregate verdicts")
    s.add_argument("scenario")
    s.add_argument("--seeds", type=_seed_range, required=True, metavar="A..B")
    s.add_argument("--max-steps", type=int)
    s.add_argument("--report-out")
    s.add_argument("--figures", metavar="DIR")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="re-run all checks on a stored JSONL trace")
    v.add_argument("trace")
    v.add_argument("--report-out")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("explore", help="exhaustive small-scope schedule exploration")
    e.add_argument("scenario")
    e.add_argument("--depth", type=int, required=True)
    e.add_argument("--completions", type=int, default=2)
    e.add_argument("--seed", type=int)
    e.add_argument(
        "--prefixes",
        type=_int_list,
        default=(0,),
        metavar="L1,L2,...",
        help="also search exhaustively after seeded random prefixes of these lengths",
    )
    e.add_argument("--report-out")
    e.set_defaults(func=cmd_explore)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"bgsim: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
