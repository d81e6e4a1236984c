"""Command line: ``ehtsim run`` executes a campaign, ``ehtsim summarize`` re-aggregates a results directory."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from pydantic import ValidationError

from . import harness


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ehtsim", description="802.11be MAC system-level simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a campaign and write runs.csv, summary.csv, summary.json")
    run.add_argument("--campaign", required=True,
                     help="campaign JSON file, or a packaged name: throughput, features, latency")
    run.add_argument("--seeds", type=int, default=None, help="number of seeds (0..n-1); default from file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--parallel", type=int, default=1, help="worker processes")
    run.add_argument("--case", default=None, help="run only this case id")

    summ = sub.add_parser("summarize", help="recompute summaries from an existing runs.csv")
    summ.add_argument("--in", dest="in_dir", required=True, help="results directory")
    return p


def _print_summary(summary: dict) -> None:
    thr = summary.get("throughput")
    if thr:
        print(f"{'case':<10} {'slot':<7} {'Gbps':>8} {'gain %':>9}  >=30")
        for cid, slots in sorted(thr["cases"].items()):
            for slot, v in sorted(slots.items()):
                gain = v["gain_pct"]
                print(f"{cid:<10} {slot:<7} {v['throughput_gbps']:8.3f} {gain:9.1f}  "
                      f"{'yes' if v['meets_30gbps'] else 'no'}")
        if "feature_ranking" in thr:
            print("feature ranking (low to high):", ", ".join(thr["feature_ranking"]))
    lat = summary.get("latency")
    if lat:
        for name, g in sorted(lat["groups"].items()):
            print(f"{name:<12} mid-load delay reduction {g['mid_load_reduction_pct']:.1f}%")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.command == "run":
        try:
            matrix = harness.with_seeds(harness.load_matrix(args.campaign), args.seeds)
        except (OSError, ValidationError, json.JSONDecodeError) as exc:
            print(f"error: cannot load campaign {args.campaign!r}: {exc}", file=sys.stderr)
            return 2
        if args.seeds is not None and args.seeds < 1:
            print("error: --seeds must be >= 1", file=sys.stderr)
            return 2
        t0 = time.perf_counter()
        try:
            run = harness.run_to_dir(matrix, args.out, parallelism=max(1, args.parallel), case=args.case)
        except (KeyError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        summary, _ = harness.summarize_dir(args.out)
        _print_summary(summary)
        print(f"{len(run.records)} runs in {time.perf_counter() - t0:.1f} s, {len(run.failed)} failed")
        for r in run.failed:
            print(f"FAILED {r.case_id} {r.direction} {r.mode} seed={r.seed}: {r.error}", file=sys.stderr)
        return 1 if run.failed else 0
    summary, records = harness.summarize_dir(args.in_dir)
    _print_summary(summary)
    return 1 if any(r.status != "ok" for r in records) else 0


if __name__ == "__main__":
    sys.exit(main())
