import json
from collections import Counter

import numpy as np
import pytest
from pydantic import ValidationError

from ehtsim.engine import RngStream
from ehtsim.scenario import (LINK_5G_160, LINK_6G_320_A, LinkConfig, ScenarioConfig, TrafficSource, build_topology,
                             case_config, check_box_snr, config_from_dict, gen_residential, gen_throughput_box,
                             generate_arrivals, latency_config, traffic_plan)


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError):
        config_from_dict({"duration_s": 1.0, "bogus": 1})
    with pytest.raises(ValidationError):
        config_from_dict({"links": [{"band": 5.0, "width": 160}]})


def test_320_requires_6ghz_and_links_cannot_overlap():
    with pytest.raises(ValidationError):
        LinkConfig(band=5.0, width_mhz=320)
    with pytest.raises(ValidationError):
        ScenarioConfig(links=(LINK_6G_320_A, LINK_6G_320_A))
    with pytest.raises(ValidationError):
        ScenarioConfig(duration_s=1.0, warmup_s=1.0)


def test_box_topology_and_snr_floor():
    topo = gen_throughput_box(8, 20.0, seed=3)
    assert len(topo.nodes) == 9
    for n in topo.nodes[1:]:
        assert 0 <= n.pos[0] <= 20 and 0 <= n.pos[1] <= 20
    worst = check_box_snr(topo, case_config("2-2"))
    assert worst >= 35.0


def test_residential_five_cochannel_bss():
    cfg = latency_config("11be", "SU", "DL", 100)
    topo = build_topology(cfg)
    aps = [n for n in topo.nodes if n.role == "ap"]
    assert len(aps) == 5
    assert len(set(topo.bss_channels.values())) == 1
    per_ap = Counter(n.ap for n in topo.nodes if n.role == "sta")
    assert set(per_ap.values()) == {4}
    for n in topo.nodes:
        if n.role == "sta":
            ap = topo.node(n.ap)
            assert n.apartment == ap.apartment


def test_legacy_residential_pairs_placements():
    be = gen_residential(standard="11be", seed=4)
    ax = gen_residential(standard="11ax", seed=4)
    assert len([n for n in ax.nodes if n.role == "ap"]) == 10
    be_pos = sorted(n.pos for n in be.nodes if n.role == "sta")
    ax_pos = sorted({n.pos for n in ax.nodes if n.role == "sta"})
    assert be_pos == ax_pos


def test_poisson_arrivals_match_rate():
    src = TrafficSource("poisson", 120e6, 1500)
    t = generate_arrivals(src, 10**9, RngStream(1, "arr"))
    assert abs(t.size - 10_000) < 5 * 100
    assert np.all(np.diff(t) >= 0)
    assert generate_arrivals(TrafficSource("full_buffer"), 10, RngStream(1, "x")) is None


def test_latency_loads_split_between_standards():
    # 10 legacy APs at v1 each carry the same aggregate as 5 AP MLDs at 2*v1
    for std in ("11ax", "11be"):
        cfg = latency_config(std, "SU", "DL", 100)
        flows = traffic_plan(cfg, build_topology(cfg))
        assert sum(f.source.rate_bps for f in flows) == pytest.approx(10 * 100e6)


def test_config_roundtrip():
    cfg = case_config("3", seed=2)
    again = ScenarioConfig.model_validate_json(cfg.to_json())
    assert again == cfg
    assert json.loads(cfg.to_json())["max_aggregation"] == 1024
    with pytest.raises(KeyError):
        case_config("9-9")
