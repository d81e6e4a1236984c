"""Campaign expansion, seeded fan-out, aggregation and report writers."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
import traceback
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .metrics import NO_DATA, CaseResult, compute_gain, delay_gain, mean_ci
from .network import simulate
from .scenario import (FEATURE_CASES, FEATURE_ORDER, THROUGHPUT_CASES, ScenarioConfig, case_config,
                       latency_config)

log = logging.getLogger(__name__)

BASELINE = "baseline"
TARGET_GBPS = 30.0
MID_LOADS = (80.0, 160.0)


class CaseMatrix(BaseModel):
    """A campaign file: which cases to expand and the config fields shared by every run."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    campaign: Literal["throughput", "latency"]
    cases: tuple[str, ...] = ()
    directions: tuple[Literal["DL", "UL"], ...] = ("DL", "UL")
    modes: tuple[Literal["SU", "MU"], ...] = ("SU", "MU")
    standards: tuple[Literal["11ax", "11be"], ...] = ("11ax", "11be")
    loads_mbps: tuple[float, ...] = ()
    seeds: tuple[int, ...] = tuple(range(10))
    base: dict = Field(default_factory=dict)

    @field_validator("base")
    @classmethod
    def _base_is_config(cls, v: dict) -> dict:
        reserved = {"campaign", "case_id", "seed", "direction", "mode", "standard", "rate_mbps"}
        clash = reserved & set(v)
        if clash:
            raise ValueError(f"base may not set per-run fields: {sorted(clash)}")
        ScenarioConfig(**v)  # rejects unknown keys early
        return v

    @field_validator("cases")
    @classmethod
    def _known(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        bad = [c for c in v if c not in THROUGHPUT_CASES and c not in FEATURE_CASES]
        if bad:
            raise ValueError(f"unknown case(s): {bad}")
        return v


def load_matrix(path: str | Path) -> CaseMatrix:
    """Read a campaign file; a bare name like ``throughput`` picks the packaged one."""
    p = Path(path)
    if not p.exists() and not p.suffix:
        p = Path(str(resources.files("ehtsim") / "campaigns" / f"{path}.json"))
    return CaseMatrix.model_validate_json(p.read_text())


def with_seeds(matrix: CaseMatrix, n: int | None) -> CaseMatrix:
    if n is None:
        return matrix
    return matrix.model_copy(update={"seeds": tuple(range(n))})


def expand_matrix(matrix: CaseMatrix, case: str | None = None) -> list[tuple[str, ScenarioConfig]]:
    """Cross product of cases, directions, modes (and standards x loads for latency) with the seed list."""
    if not matrix.seeds:
        raise ValueError("seed list is empty")
    out: list[tuple[str, ScenarioConfig]] = []
    if matrix.campaign == "throughput":
        cases = list(dict.fromkeys((BASELINE, *matrix.cases)))
        for cid in cases:
            for d in matrix.directions:
                for m in matrix.modes:
                    for s in matrix.seeds:
                        out.append((cid, case_config(cid, direction=d, mode=m, seed=s, **matrix.base)))
    else:
        if not matrix.loads_mbps:
            raise ValueError("latency campaign needs loads_mbps")
        for std in matrix.standards:
            for m in matrix.modes:
                for d in matrix.directions:
                    for load in matrix.loads_mbps:
                        for s in matrix.seeds:
                            cfg = latency_config(std, m, d, load, seed=s, **matrix.base)
                            out.append((cfg.case_id, cfg))
    if case is not None:
        known = {c for c, _ in out}
        if case not in known:
            raise KeyError(f"case {case!r} not in campaign")
        out = [(c, cfg) for c, cfg in out if c == case]
    return out


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _execute(payload: str) -> tuple[dict, float]:
    cfg = ScenarioConfig.model_validate_json(payload)
    t0 = time.perf_counter()
    try:
        res = simulate(cfg)
        rec = CaseResult.from_run(cfg, res)
        if not rec.conserved:
            rec.status = "failed"
            rec.error = "conservation ledger does not balance"
    except Exception as exc:  # a crashed run becomes a failed record, never a silent gap
        rec = CaseResult(cfg.campaign, cfg.case_id, cfg.standard, cfg.direction, cfg.mode, cfg.seed,
                         cfg.rate_mbps, status="failed",
                         error=f"{type(exc).__name__}: {exc} | {traceback.format_exc(limit=3)!r}")
    return rec.row(), time.perf_counter() - t0


def record_key(r: CaseResult) -> tuple:
    return (r.campaign, r.case_id, r.standard, r.direction, r.mode, r.load_mbps, r.seed)


@dataclass
class CampaignRun:
    records: list[CaseResult]
    runtimes: dict  # record key -> seconds; kept out of runs.csv so reruns stay byte-identical

    @property
    def failed(self) -> list[CaseResult]:
        return [r for r in self.records if r.status != "ok"]


def run_campaign(expanded: list[tuple[str, ScenarioConfig]], parallelism: int = 1) -> CampaignRun:
    payloads = [cfg.model_dump_json() for _, cfg in expanded]
    if parallelism > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outs = list(pool.map(_execute, payloads))
    else:
        outs = [_execute(p) for p in payloads]
    records, runtimes = [], {}
    for row, secs in outs:
        rec = CaseResult(**row)
        records.append(rec)
        runtimes[record_key(rec)] = secs
        if rec.status != "ok":
            log.error("run %s seed %s failed: %s", rec.case_id, rec.seed, rec.error)
    records.sort(key=record_key)
    return CampaignRun(records, runtimes)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_runs(records: list[CaseResult], path: Path) -> None:
    cols = CaseResult.columns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in sorted(records, key=record_key):
            row = r.row()
            w.writerow([_fmt(row[c]) for c in cols])


def read_runs(path: Path) -> list[CaseResult]:
    types = {f.name: f.type for f in fields(CaseResult)}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for k, v in row.items():
                t = types[k]
                if t in ("int", int):
                    vals[k] = int(v)
                elif t in ("float", float):
                    vals[k] = float(v)
                elif t in ("bool", bool):
                    vals[k] = v == "True"
                else:
                    vals[k] = v
            out.append(CaseResult(**vals))
    return out


def write_runtimes(runtimes: dict, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["campaign", "case_id", "standard", "direction", "mode", "load_mbps", "seed", "runtime_s"])
        for key in sorted(runtimes):
            w.writerow([*map(_fmt, key), f"{runtimes[key]:.3f}"])


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def _group_key(r: CaseResult) -> tuple:
    return (r.campaign, r.case_id, r.standard, r.direction, r.mode, r.load_mbps)


def summarize(records: list[CaseResult]) -> dict:
    """Per-case means with 95% CIs, gains against the baseline, 30 Gbps flags and latency reductions."""
    groups: dict[tuple, list[CaseResult]] = defaultdict(list)
    for r in records:
        groups[_group_key(r)].append(r)
    rows = []
    for key in sorted(groups):
        rs = groups[key]
        ok = [r for r in rs if r.status == "ok"]
        campaign, case_id, standard, direction, mode, load = key
        thr = mean_ci([r.throughput_gbps for r in ok])
        dly = mean_ci([r.mean_delay_ms for r in ok])
        rows.append(dict(
            campaign=campaign, case_id=case_id, standard=standard, direction=direction, mode=mode,
            load_mbps=load, runs=len(rs), failed=len(rs) - len(ok),
            throughput_gbps=thr[0], throughput_ci_low=thr[1], throughput_ci_high=thr[2],
            mean_delay_ms=dly[0], delay_ci_low=dly[1], delay_ci_high=dly[2],
            drop_rate=mean_ci([r.drop_rate for r in ok])[0],
        ))
    out: dict = {"groups": rows}
    thr_rows = [g for g in rows if g["campaign"] == "throughput"]
    if thr_rows:
        out["throughput"] = _throughput_summary(thr_rows)
    lat_rows = [g for g in rows if g["campaign"] == "latency"]
    if lat_rows:
        out["latency"] = _latency_summary(lat_rows)
    return out


def _throughput_summary(rows: list[dict]) -> dict:
    base = {(g["direction"], g["mode"]): g["throughput_gbps"] for g in rows if g["case_id"] == BASELINE}
    cases: dict = defaultdict(dict)
    for g in rows:
        slot = f"{g['direction']} {g['mode']}"
        b = base.get((g["direction"], g["mode"]))
        gain = compute_gain(g["throughput_gbps"], b) if b and not math.isnan(g["throughput_gbps"]) else NO_DATA
        g["gain_pct"] = gain
        g["meets_30gbps"] = bool(g["throughput_gbps"] >= TARGET_GBPS)
        cases[g["case_id"]][slot] = dict(throughput_gbps=g["throughput_gbps"], gain_pct=gain,
                                         meets_30gbps=g["meets_30gbps"])
    summary = {"cases": dict(cases)}
    b = base.get(("DL", "SU"))
    feats = {f: cases[f]["DL SU"]["throughput_gbps"] - b for f in FEATURE_ORDER
             if f in cases and "DL SU" in cases[f] and b is not None}
    if feats:
        ranking = sorted(feats, key=lambda f: feats[f])
        summary["feature_deltas_gbps"] = feats
        summary["feature_ranking"] = ranking
    return summary


def _latency_summary(rows: list[dict]) -> dict:
    delay = {(g["standard"], g["mode"], g["direction"], g["load_mbps"]): g["mean_delay_ms"] for g in rows}
    loads = sorted({g["load_mbps"] for g in rows})
    groups = {}
    for mode in ("SU", "MU"):
        for direction in ("DL", "UL"):
            per_load = {}
            for load in loads:
                ax = delay.get(("11ax", mode, direction, load))
                be = delay.get(("11be", mode, direction, load))
                if ax is None or be is None or math.isnan(ax) or math.isnan(be) or ax <= 0:
                    continue
                per_load[load] = delay_gain(be, ax)
            if not per_load:
                continue
            mid = [v for load, v in per_load.items() if MID_LOADS[0] <= load <= MID_LOADS[1]]
            name = f"{direction} {'OFDMA' if mode == 'MU' else 'SU-MIMO'}"
            groups[name] = dict(reduction_pct_by_load=per_load,
                                mid_load_reduction_pct=sum(mid) / len(mid) if mid else NO_DATA)
    ofdma_wins = {}
    for std in ("11ax", "11be"):
        for direction in ("DL", "UL"):
            checks = {}
            for load in loads:
                su = delay.get((std, "SU", direction, load))
                mu = delay.get((std, "MU", direction, load))
                if su is not None and mu is not None:
                    checks[load] = bool(mu < su)
            if checks:
                ofdma_wins[f"{std} {direction}"] = checks
    return {"groups": groups, "ofdma_below_su": ofdma_wins}


def long_rows(summary: dict) -> list[dict]:
    """Plot-ready long format: one (series, x, metric) triple per row."""
    out = []
    for g in summary["groups"]:
        base = dict(campaign=g["campaign"], case_id=g["case_id"], standard=g["standard"],
                    direction=g["direction"], mode=g["mode"], load_mbps=g["load_mbps"])
        if g["campaign"] == "throughput":
            out.append(dict(base, metric="throughput_gbps", value=g["throughput_gbps"],
                            ci_low=g["throughput_ci_low"], ci_high=g["throughput_ci_high"]))
            if "gain_pct" in g:
                out.append(dict(base, metric="gain_pct", value=g["gain_pct"], ci_low=NO_DATA, ci_high=NO_DATA))
        else:
            out.append(dict(base, metric="mean_delay_ms", value=g["mean_delay_ms"],
                            ci_low=g["delay_ci_low"], ci_high=g["delay_ci_high"]))
    return out


def _json_safe(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_summary(summary: dict, out_dir: Path) -> None:
    rows = summary["groups"]
    cols = list(rows[0]) if rows else []
    for g in rows:
        for k in g:
            if k not in cols:
                cols.append(k)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for g in rows:
            w.writerow([_fmt(g.get(c, "")) for c in cols])
    (out_dir / "summary.json").write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    lr = long_rows(summary)
    with open(out_dir / "plot_long.csv", "w", newline="") as fh:
        cols = ["campaign", "case_id", "standard", "direction", "mode", "load_mbps", "metric", "value",
                "ci_low", "ci_high"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in lr:
            w.writerow([_fmt(r[c]) for c in cols])


def run_to_dir(matrix: CaseMatrix, out_dir: str | Path, *, parallelism: int = 1,
               case: str | None = None) -> CampaignRun:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    expanded = expand_matrix(matrix, case)
    log.info("running %d configurations with parallelism %d", len(expanded), parallelism)
    run = run_campaign(expanded, parallelism)
    write_runs(run.records, out / "runs.csv")
    write_runtimes(run.runtimes, out / "runtimes.csv")
    write_summary(summarize(run.records), out)
    return run


def summarize_dir(in_dir: str | Path) -> tuple[dict, list[CaseResult]]:
    d = Path(in_dir)
    records = read_runs(d / "runs.csv")
    summary = summarize(records)
    write_summary(summary, d)
    return summary, records
