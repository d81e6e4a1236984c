import math

import numpy as np
import pytest

from ehtsim import case_config, latency_config, simulate


def analytic_baseline_gbps() -> float:
    """Hand model of one AP sending 256-MPDU A-MPDUs back to back in RTS/CTS-protected TXOPs."""
    sym = 13.6e-6
    rate = 1960 * 10 * (5 / 6) * 8 / sym
    data = 48e-6 + math.ceil((16 + 256 * 8 * 1504) / (rate * sym)) * sym
    exchange = data + 16e-6 + 32e-6
    protect = 2 * (28e-6 + 16e-6)
    n = int((4.096e-3 - protect + 16e-6) // (exchange + 16e-6))
    txop = protect + n * exchange + (n - 1) * 16e-6
    access = 34e-6 + 3.5 * 9e-6
    return 256 * 1500 * 8 * n / (txop + access) / 1e9


def test_baseline_dl_matches_hand_model():
    oracle = analytic_baseline_gbps()
    assert oracle == pytest.approx(6.7713, abs=1e-3)
    r = simulate(case_config("baseline", duration_s=1.0, warmup_s=0.1))
    assert r.throughput_gbps == pytest.approx(oracle, rel=0.02)
    assert r.failures == 0 and r.conserved()


@pytest.mark.parametrize("cfg", [
    case_config("2-2", direction="UL", mode="SU", duration_s=0.2, warmup_s=0.02),
    case_config("1-2", direction="DL", mode="MU", duration_s=0.2, warmup_s=0.02),
    case_config("3", direction="UL", mode="MU", duration_s=0.2, warmup_s=0.02),
    latency_config("11be", "SU", "UL", 160, duration_s=0.2, warmup_s=0.02),
    latency_config("11ax", "MU", "DL", 200, duration_s=0.2, warmup_s=0.02),
], ids=lambda c: f"{c.case_id}-{c.direction}-{c.mode}")
def test_collapsed_path_matches_per_frame_path(cfg):
    fast = simulate(cfg)
    slow = simulate(cfg, force_slow=True)
    assert slow.fast_txops == 0
    assert fast.sap_bits == slow.sap_bits
    assert fast.ledger == slow.ledger
    assert np.array_equal(np.sort(fast.delays_ns), np.sort(slow.delays_ns))


def test_same_seed_same_result_different_seed_differs():
    cfg = latency_config("11be", "SU", "DL", 100, duration_s=0.2, warmup_s=0.02)
    a, b = simulate(cfg), simulate(cfg)
    assert a.sap_bits == b.sap_bits and np.array_equal(a.delays_ns, b.delays_ns)
    c = simulate(cfg.model_copy(update={"seed": 1}))
    assert not np.array_equal(a.delays_ns, c.delays_ns)


def test_mlo_roughly_doubles_single_link_throughput():
    one = simulate(case_config("baseline", duration_s=0.3, warmup_s=0.05)).throughput_gbps
    two = simulate(case_config("f-mlo", duration_s=0.3, warmup_s=0.05)).throughput_gbps
    assert two / one == pytest.approx(2.0, rel=0.05)


def test_nstr_mode_runs_and_conserves():
    cfg = case_config("1-4", direction="UL", mld_mode="NSTR", duration_s=0.1, warmup_s=0.01)
    r = simulate(cfg)
    assert r.conserved() and r.throughput_gbps > 0


def test_lightly_loaded_latency_is_sub_millisecond():
    r = simulate(latency_config("11be", "SU", "DL", 20, duration_s=0.3, warmup_s=0.05))
    assert r.delays_ns.size > 1000
    assert 0.05 < r.delays_ns.mean() / 1e6 < 1.0
    assert r.throughput_bps["DL"] / 1e6 == pytest.approx(2 * 20 * 5, rel=0.1)
