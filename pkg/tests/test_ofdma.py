import pytest

from ehtsim.ofdma import (RoundRobinScheduler, grants_disjoint, multi_sta_ba_bytes, mu_rts_bytes, ru_count,
                          rr_schedule, trigger_bytes)
from ehtsim.phy import control_frame_duration


def test_rr_rotates_and_skips_idle():
    s = RoundRobinScheduler(["a", "b", "c", "d", "e"], 20, ru_size=106)
    assert s.n_ru == 2
    assert [g.sta for g in rr_schedule(s, "abcde")] == ["a", "b"]
    assert [g.sta for g in rr_schedule(s, "abcde")] == ["c", "d"]
    assert [g.sta for g in rr_schedule(s, "abcde")] == ["e", "a"]
    assert [g.sta for g in rr_schedule(s, {"d"})] == ["d"]
    assert s.pointer == 4
    assert rr_schedule(s, []) == []


def test_four_stations_on_160_get_484_each():
    s = RoundRobinScheduler([f"s{i}" for i in range(4)], 160)
    grants = s.schedule({f"s{i}" for i in range(4)})
    assert len(grants) == 4
    assert all(g.alloc.tones == 484 for g in grants)
    assert grants_disjoint(grants, 160)
    assert ru_count(320) == 4


def test_disjointness_check_catches_overlap():
    s = RoundRobinScheduler(["a", "b"], 80)
    g = s.schedule({"a", "b"})
    assert grants_disjoint(g, 80)
    assert not grants_disjoint([g[0], g[0]], 80)


def test_frame_sizes_and_airtime():
    assert mu_rts_bytes(4) == trigger_bytes(4) == 52
    assert multi_sta_ba_bytes(4) == 70
    assert control_frame_duration(trigger_bytes(4)) == 20_000 + 1000 * -(-(16 + 8 * 52 + 6) // 96) * 4
