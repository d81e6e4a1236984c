import csv
import json
import math

import pytest
from pydantic import ValidationError

from ehtsim import cli, harness
from ehtsim.metrics import CaseResult


def _write(tmp_path, data, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


TINY = {"campaign": "throughput", "cases": ["2-2"], "directions": ["DL"], "modes": ["SU"],
        "seeds": [0, 1], "base": {"duration_s": 0.05, "warmup_s": 0.01}}


def test_packaged_campaigns_load():
    thr = harness.load_matrix("throughput")
    assert len(harness.expand_matrix(thr)) == 10 * 2 * 2 * 10
    lat = harness.load_matrix("latency")
    assert len(harness.expand_matrix(lat)) == 2 * 2 * 2 * 10 * 10
    assert len(harness.expand_matrix(harness.load_matrix("features"))) == 5 * 10


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ValidationError):
        harness.load_matrix(_write(tmp_path, {**TINY, "sedes": [0]}))
    with pytest.raises(ValidationError):
        harness.load_matrix(_write(tmp_path, {**TINY, "base": {"durration_s": 1}}))
    with pytest.raises(ValidationError):
        harness.load_matrix(_write(tmp_path, {**TINY, "cases": ["9-9"]}))
    with pytest.raises(ValidationError):
        harness.load_matrix(_write(tmp_path, {**TINY, "base": {"seed": 3}}))


def test_empty_seeds_and_unknown_case_rejected():
    m = harness.CaseMatrix(**{**TINY, "seeds": []})
    with pytest.raises(ValueError):
        harness.expand_matrix(m)
    with pytest.raises(KeyError):
        harness.expand_matrix(harness.CaseMatrix(**TINY), case="1-1")
    with pytest.raises(ValueError):
        harness.expand_matrix(harness.CaseMatrix(campaign="latency"))


def test_baseline_is_always_included():
    cases = {c for c, _ in harness.expand_matrix(harness.CaseMatrix(**TINY))}
    assert cases == {"baseline", "2-2"}


def test_cli_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    camp = _write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--campaign", str(camp), "--seeds", "2", "--out", str(a)]) == 0
    assert cli.main(["run", "--campaign", str(camp), "--seeds", "2", "--out", str(b), "--parallel", "2"]) == 0
    for name in ("runs.csv", "summary.csv", "summary.json", "plot_long.csv", "runtimes.csv"):
        assert (a / name).exists()
    assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()
    rows = list(csv.DictReader((a / "runs.csv").open()))
    assert len(rows) == 4 and {r["status"] for r in rows} == {"ok"}
    summary = json.loads((a / "summary.json").read_text())
    slot = summary["throughput"]["cases"]["2-2"]["11be DL SU"] if "11be DL SU" in summary["throughput"]["cases"]["2-2"] \
        else next(iter(summary["throughput"]["cases"]["2-2"].values()))
    assert slot["throughput_gbps"] > 30
    assert cli.main(["summarize", "--in", str(a)]) == 0
    assert "2-2" in capsys.readouterr().out


def test_cli_case_filter(tmp_path):
    camp = _write(tmp_path, TINY)
    assert cli.main(["run", "--campaign", str(camp), "--seeds", "1", "--out", str(tmp_path / "o"),
                     "--case", "baseline"]) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "runs.csv").open()))
    assert [r["case_id"] for r in rows] == ["baseline"]
    assert cli.main(["run", "--campaign", str(camp), "--out", str(tmp_path / "p"), "--case", "nope"]) == 2


def test_cli_failed_run_gives_nonzero_exit(tmp_path, capsys):
    # a 2 km box cannot hold MCS 13 everywhere, so topology validation fails the run
    bad = _write(tmp_path, {**TINY, "seeds": [0], "base": {**TINY["base"], "area_m": 2000.0}})
    assert cli.main(["run", "--campaign", str(bad), "--out", str(tmp_path / "o")]) == 1
    rows = list(csv.DictReader((tmp_path / "o" / "runs.csv").open()))
    assert {r["status"] for r in rows} == {"failed"}
    assert "SNR" in rows[0]["error"]
    assert "FAILED" in capsys.readouterr().err
    assert cli.main(["summarize", "--in", str(tmp_path / "o")]) == 1


def test_cli_bad_campaign_file(tmp_path):
    assert cli.main(["run", "--campaign", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = _write(tmp_path, {**TINY, "extra": 1})
    assert cli.main(["run", "--campaign", str(bad), "--out", str(tmp_path)]) == 2
    assert cli.main(["run", "--campaign", str(_write(tmp_path, TINY)), "--seeds", "0", "--out",
                     str(tmp_path)]) == 2


def test_runs_csv_roundtrip(tmp_path):
    recs = [CaseResult("throughput", "2-2", "11be", "DL", "SU", 0, throughput_gbps=36.1234567890123),
            CaseResult("throughput", "2-2", "11be", "DL", "SU", 1, status="failed", error="boom")]
    harness.write_runs(recs, tmp_path / "runs.csv")
    back = harness.read_runs(tmp_path / "runs.csv")
    assert back[0].throughput_gbps == recs[0].throughput_gbps
    assert back[1].status == "failed" and math.isnan(back[1].throughput_gbps)


def test_summary_gains_and_feature_ranking():
    recs = []
    for seed in range(3):
        for cid, g in (("baseline", 6.0), ("f-4k", 6.8), ("f-1024", 7.5), ("f-320", 9.5), ("f-mlo", 12.0)):
            recs.append(CaseResult("throughput", cid, "11be", "DL", "SU", seed, throughput_gbps=g + 0.01 * seed))
    s = harness.summarize(recs)["throughput"]
    assert s["feature_ranking"] == ["f-4k", "f-1024", "f-320", "f-mlo"]
    slot = next(iter(s["cases"]["f-mlo"].values()))
    assert slot["gain_pct"] == pytest.approx(100.0 * (12.01 - 6.01) / 6.01)


def test_latency_summary_reduction():
    recs = []
    for std, d in (("11ax", 1.0), ("11be", 0.6)):
        for load in (40.0, 80.0, 120.0, 160.0):
            for seed in (0, 1):
                recs.append(CaseResult("latency", f"{std}-SU-DL-{load:g}", std, "DL", "SU", seed, load_mbps=load,
                                       mean_delay_ms=d * (1 + load / 100)))
    lat = harness.summarize(recs)["latency"]
    g = lat["groups"]["DL SU-MIMO"]
    assert g["mid_load_reduction_pct"] == pytest.approx(40.0)
