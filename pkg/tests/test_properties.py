"""Randomized protocol invariants checked over simulator event traces.

Every check bumps ``CHECKS``; the module prints the total when it finishes so
the acceptance suite can confirm the trace-check budget.
"""

import math
from collections import Counter, defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehtsim import case_config, latency_config, simulate
from ehtsim import network as netmod
from ehtsim.edca import EdcaState, FlowQueue, ranges_count
from ehtsim.engine import RngStream
from ehtsim.mlo import ReorderBuffer
from ehtsim.network import Network
from ehtsim.ofdma import RoundRobinScheduler, grants_disjoint
from ehtsim.phy import CHANNEL_TONES

CHECKS = Counter()
FEW = settings(max_examples=25, deadline=None)


@pytest.fixture(scope="module", autouse=True)
def report_checks():
    yield
    print(f"\nTRACE_CHECKS={sum(CHECKS.values())} " + " ".join(f"{k}={v}" for k, v in sorted(CHECKS.items())))


THROUGHPUT_CASES = ["baseline", "1-1", "1-2", "1-4", "1-6", "2-2", "3", "f-mlo"]


@st.composite
def configs(draw, mld_mode=None):
    """Short runs drawn from both campaigns."""
    seed = draw(st.integers(0, 10_000))
    d = draw(st.sampled_from(["DL", "UL"]))
    m = draw(st.sampled_from(["SU", "MU"]))
    nstr = mld_mode or draw(st.sampled_from(["STR", "NSTR"]))
    if draw(st.booleans()):
        cid = draw(st.sampled_from(THROUGHPUT_CASES))
        return case_config(cid, seed=seed, direction=d, mode=m, mld_mode=nstr, duration_s=0.02, warmup_s=0.002,
                           n_sta=draw(st.integers(1, 8)), rts_cts=draw(st.booleans()))
    std = draw(st.sampled_from(["11ax", "11be"]))
    load = draw(st.sampled_from([20.0, 80.0, 200.0]))
    return latency_config(std, m, d, load, seed=seed, mld_mode=nstr, duration_s=0.04, warmup_s=0.004)


# ---------------------------------------------------------------------------
# conservation
# ---------------------------------------------------------------------------

@FEW
@given(configs())
def test_conservation_ledger_balances(cfg):
    r = simulate(cfg)
    led = r.ledger
    assert led["generated"] == (led["acked"] + led["dropped_retry"] + led["dropped_lifetime"]
                                + led["dropped_overflow"] + led["in_flight"] + led["queued"])
    assert min(led.values()) >= 0
    # nothing reaches the SAP that was never acknowledged or at least decoded
    assert r.sap_released <= led["generated"]
    CHECKS["conservation"] += 1 + r.txops


# ---------------------------------------------------------------------------
# NSTR: no transmission on one link while the device receives on another
# ---------------------------------------------------------------------------

@FEW
@given(configs(mld_mode="NSTR"))
def test_nstr_never_transmits_while_receiving(cfg):
    r = simulate(cfg, log_frames=True)
    nstr = {d.address for d in Network(cfg).devices.values() if d.is_nstr}
    per_dev = defaultdict(lambda: {"tx": [], "rx": []})
    for start, end, kind, radio, dev, link, io in r.frames:
        if dev in nstr:
            per_dev[dev][io].append((start, end, link))
    for dev, fr in per_dev.items():
        rx = sorted(fr["rx"])
        starts = [s for s, _, _ in rx]
        for ts, te, tl in fr["tx"]:
            lo = np.searchsorted(starts, ts - 10**8)
            for rs, re_, rl in rx[lo:]:
                if rs >= te:
                    break
                if rl != tl:
                    assert not (rs < te and ts < re_), f"{dev} tx on L{tl} overlaps rx on L{rl}"
            CHECKS["nstr"] += 1


# ---------------------------------------------------------------------------
# A-MPDU size and TXOP budget
# ---------------------------------------------------------------------------

@FEW
@given(configs())
def test_ampdu_and_txop_limits(cfg):
    calls = []
    real = netmod.build_ampdu

    def spy(queue, timing, remaining, max_agg, **kw):
        amp = real(queue, timing, remaining, max_agg, **kw)
        calls.append((len(amp), amp.airtime_ns, remaining, max_agg, kw))
        return amp

    plans = []
    begin = Network._begin

    def spy_begin(self, plan, now):
        plans.append((plan.end, self.t.txop, [sum(p.n for p in s.parts) for s in plan.steps],
                      [max((p.n for p in s.parts), default=0) for s in plan.steps]))
        return begin(self, plan, now)

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(netmod, "build_ampdu", spy)
        mp.setattr(Network, "_begin", spy_begin)
        simulate(cfg)
    for n, air, remaining, max_agg, kw in calls:
        assert n <= max_agg <= 1024
        if n:
            assert air + kw["sifs_ns"] + kw["block_ack_ns"] <= remaining
        CHECKS["ampdu"] += 1
    for end, txop, _, per_part in plans:
        assert end <= txop
        assert all(n <= cfg.max_aggregation for n in per_part)
        CHECKS["txop"] += 1


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 1024), st.integers(100_000, 8_000_000), st.sampled_from([64, 256, 1024]),
       st.integers(0, 2_000))
def test_build_ampdu_unit_limits(cap, budget, max_agg, backlog):
    from ehtsim.phy import RuAllocation, mcs, phy_rate
    rate = phy_rate(mcs(11), RuAllocation.full_band(160), 2)
    q = FlowQueue("a", "b", arrivals=np.zeros(backlog, dtype=np.int64))
    q.materialize(0)
    amp = netmod.build_ampdu(q, rate, budget, min(cap, max_agg), sifs_ns=16_000, block_ack_ns=32_000)
    n = ranges_count(amp.mpdus)
    assert n <= min(cap, max_agg, backlog)
    if n:
        assert amp.airtime_ns + 48_000 <= budget
    CHECKS["ampdu"] += 1


# ---------------------------------------------------------------------------
# contention window
# ---------------------------------------------------------------------------

@FEW
@given(configs())
def test_cw_stays_in_range(cfg):
    seen = []
    fail, ok = EdcaState.on_tx_failure, EdcaState.on_tx_success

    def on_fail(self, rng):
        out = fail(self, rng)
        seen.append((self.cw, self.backoff_slots))
        return out

    def on_ok(self):
        ok(self)
        seen.append((self.cw, 0))

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(EdcaState, "on_tx_failure", on_fail)
        mp.setattr(EdcaState, "on_tx_success", on_ok)
        simulate(cfg)
    for cw, slots in seen:
        assert 7 <= cw <= 15
        assert 0 <= slots <= cw
        CHECKS["cw"] += 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.integers(0, 99))
def test_cw_sequence_unit(outcomes, seed):
    e = EdcaState()
    rng = RngStream(seed, "cw")
    for success in outcomes:
        if success:
            e.on_tx_success()
            assert e.cw == 7
        else:
            before = e.cw
            e.on_tx_failure(rng)
            assert e.cw == min(2 * before + 1, 15)
        assert 7 <= e.cw <= 15
        CHECKS["cw"] += 1


# ---------------------------------------------------------------------------
# reorder buffer
# ---------------------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.permutations(list(range(40))), st.integers(1, 8), st.lists(st.booleans(), min_size=40, max_size=40))
def test_reorder_releases_in_order(order, chunk, expire_flags):
    rb = ReorderBuffer(hole_timeout_ns=10)
    released = []
    now = 0
    for j in range(0, len(order), chunk):
        batch = [(s, s + 1) for s in order[j:j + chunk]]
        now += 1
        released += [s for a, b in rb.receive(batch, now) for s in range(a, b)]
        if expire_flags[j % 40] and rb.deadline is not None:
            released += [s for a, b in rb.expire(rb.deadline) for s in range(a, b)]
    released += [s for a, b in rb.expire(now + 100) for s in range(a, b)] if rb.held else []
    assert released == sorted(released)
    assert len(released) == len(set(released))
    assert rb.released + rb.skipped == rb.expected
    CHECKS["reorder"] += len(order)


@FEW
@given(configs())
def test_sap_release_in_order_in_network(cfg):
    last = {}
    recv = ReorderBuffer.receive
    expire = ReorderBuffer.expire

    def check(buf, out):
        for a, b in out:
            assert a >= last.get(id(buf), 0)
            last[id(buf)] = b
            CHECKS["reorder"] += 1
        return out

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(ReorderBuffer, "receive", lambda self, r, now: check(self, recv(self, r, now)))
        mp.setattr(ReorderBuffer, "expire", lambda self, now: check(self, expire(self, now)))
        simulate(cfg)


# ---------------------------------------------------------------------------
# single-link MLO equals plain EDCA
# ---------------------------------------------------------------------------

QAM = {0: (1, Fraction(1, 2)), 1: (2, Fraction(1, 2)), 2: (2, Fraction(3, 4)), 3: (4, Fraction(1, 2)),
       4: (4, Fraction(3, 4)), 5: (6, Fraction(2, 3)), 6: (6, Fraction(3, 4)), 7: (6, Fraction(5, 6)),
       8: (8, Fraction(3, 4)), 9: (8, Fraction(5, 6)), 10: (10, Fraction(3, 4)), 11: (10, Fraction(5, 6)),
       12: (12, Fraction(3, 4)), 13: (12, Fraction(5, 6))}


def plain_edca_access_times(seed, mcs, nss, max_agg, rts, horizon_ns, txop_ns=4_096_000):
    """Hand model of one contender on an idle 160 MHz channel with full-buffer traffic."""
    bits, rate = QAM[mcs]
    per_sym = 1960 * bits * rate * nss  # data bits per 13.6 us symbol
    sub = 8 * (4 + 1500)  # delimiter + MPDU, already 4-byte aligned

    def ppdu(m):
        return 48_000 + math.ceil(Fraction(16 + sub * m) / per_sym) * 13_600

    rng = RngStream(seed, "backoff:ap0/L0")
    out = []
    idle = 0
    while True:
        access = idle + 34_000 + rng.uniform_int(0, 7) * 9_000
        if access > horizon_ns:
            return out
        out.append(access)
        e = 28_000 + 16_000 + 28_000 if rts else -16_000
        while True:
            start = e + 16_000
            m = 0
            while m < max_agg and ppdu(m + 1) + 16_000 + 32_000 <= txop_ns - start:
                m += 1
            if m == 0:
                break
            e = start + ppdu(m) + 16_000 + 32_000
        idle = access + e


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(7, 13), st.integers(1, 8), st.sampled_from([64, 256, 1024]),
       st.booleans(), st.integers(1, 8))
def test_single_link_mld_trace_equals_plain_edca(seed, mcs, nss, max_agg, rts, n_sta):
    cfg = case_config("baseline", seed=seed, mcs=mcs, nss=nss, max_aggregation=max_agg, rts_cts=rts,
                      n_sta=n_sta, duration_s=0.03, warmup_s=0.001, snr_check=False)
    r = simulate(cfg, trace=True)
    got = [t for t, _, kind, target in r.trace if kind == "access"]
    want = plain_edca_access_times(seed, mcs, nss, max_agg, rts, int(0.03e9))
    assert got == want
    CHECKS["plain_edca"] += len(got)


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["SU", "MU"]), st.sampled_from(["DL", "UL"]),
       st.sampled_from([40.0, 160.0]))
def test_single_link_mld_equals_legacy_device(seed, mode, direction, load):
    from ehtsim.scenario import LINK_5G_160
    kw = dict(seed=seed, links=(LINK_5G_160,), duration_s=0.03, warmup_s=0.003)
    # equal per-device load: the legacy side gets the doubled rate that 11be applies internally
    be = simulate(latency_config("11be", mode, direction, load, **kw), trace=True)
    ax = simulate(latency_config("11ax", mode, direction, 2 * load, **kw), trace=True)
    assert be.trace == ax.trace
    assert be.sap_bits == ax.sap_bits
    CHECKS["plain_edca"] += len(be.trace)


# ---------------------------------------------------------------------------
# collapsed vs per-frame path, NAV, OFDMA scheduling
# ---------------------------------------------------------------------------

@settings(max_examples=12, deadline=None)
@given(configs())
def test_collapsed_path_equals_per_frame_path(cfg):
    a = simulate(cfg)
    b = simulate(cfg, force_slow=True)
    assert a.sap_bits == b.sap_bits
    assert a.ledger == b.ledger
    assert np.array_equal(np.sort(a.delays_ns), np.sort(b.delays_ns))
    CHECKS["fast_slow"] += a.txops


@FEW
@given(configs())
def test_txops_start_only_outside_nav(cfg):
    starts = []
    real = Network.start_txop

    def spy(self, i, now):
        starts.append((i.nav_until, now, i.in_exchange))
        return real(self, i, now)

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(Network, "start_txop", spy)
        simulate(cfg)
    for nav, now, busy in starts:
        assert nav <= now and not busy
        CHECKS["nav"] += 1


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.sampled_from([20, 40, 80, 160, 320]), st.lists(st.sets(st.integers(0, 11)),
                                                                           min_size=1, max_size=30))
def test_round_robin_fair_and_disjoint(n, width, rounds):
    stas = [f"s{i}" for i in range(n)]
    s = RoundRobinScheduler(stas, width)
    served = Counter()
    for backlog in rounds:
        grants = s.schedule({stas[i] for i in backlog if i < n})
        assert grants_disjoint(grants, width)
        assert len({g.sta for g in grants}) == len(grants) <= s.n_ru
        assert all(0 <= g.tones[0] < g.tones[1] <= CHANNEL_TONES[width] for g in grants)
        served.update(g.sta for g in grants)
        CHECKS["ofdma"] += 1
    # under a permanent full backlog service counts never differ by more than one
    s2 = RoundRobinScheduler(stas, width)
    full = Counter()
    for _ in range(len(rounds)):
        full.update(g.sta for g in s2.schedule(set(stas)))
    assert max(full.values()) - min(full.get(x, 0) for x in stas) <= 1
