"""Network-level simulation: radios on shared channels, EDCA contention and frame exchanges.

Every TXOP is planned when access is won: the initiator commits MPDUs for as
many SIFS-separated A-MPDU/block-ACK exchanges as fit the TXOP limit. The plan
then executes on one of two paths:

* the per-frame path starts and ends every frame on the medium, tracks SINR at
  each receiver as interference comes and goes, and reacts to losses;
* the collapsed path is taken only when no radio that could interact with the
  exchange is active or about to fire. The whole TXOP then becomes one busy
  interval on the medium and its outcome (every frame decoded) is applied at
  the TXOP end with the exact per-exchange timestamps the per-frame path
  would produce.

Interference weaker than ``negligible_interference_db`` below the noise floor is
ignored on both paths; this is what makes distant BSSs independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .edca import AmpduTiming, EdcaState, FlowQueue, Ranges, build_ampdu, ranges_count
from .engine import NS_PER_MS, NS_PER_S, Simulator, us
from .mlo import AP, STA, Mld, ReorderBuffer
from .ofdma import DL, UL, RU_FOR_WIDTH, RoundRobinScheduler, multi_sta_ba_bytes, mu_rts_bytes, trigger_bytes
from .phy import (CHANNEL_TONES, SUBCARRIER_SPACING_HZ, RuAllocation, control_frame_duration, dbm_to_mw,
                  max_mpdus_in, mcs_table, noise_dbm, phy_rate)
from .scenario import FlowSpec, ScenarioConfig, Topology, build_topology, generate_arrivals, traffic_plan
from .engine import RngStream


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass
class MacTiming:
    slot: int
    sifs: int
    aifs: int
    txop: int
    data_preamble: int
    ctrl_rate_mbps: float
    ctrl_preamble: int
    rts: int
    cts: int
    ba: int

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "MacTiming":
        pre = us(cfg.control_preamble_us)
        ctl = lambda n: control_frame_duration(n, cfg.control_rate_mbps, pre)  # noqa: E731
        return cls(us(cfg.slot_us), us(cfg.sifs_us), us(cfg.aifs_us), us(cfg.txop_ms * 1000),
                   us(cfg.data_preamble_us), cfg.control_rate_mbps, pre, ctl(20), ctl(14), ctl(32))

    def ctrl(self, nbytes: int) -> int:
        return control_frame_duration(nbytes, self.ctrl_rate_mbps, self.ctrl_preamble)

    def mu_rts(self, n: int) -> int:
        return self.ctrl(mu_rts_bytes(n))

    def trigger(self, n: int) -> int:
        return self.ctrl(trigger_bytes(n))

    def multi_ba(self, n: int) -> int:
        return self.ctrl(multi_sta_ba_bytes(n))


# ---------------------------------------------------------------------------
# Medium
# ---------------------------------------------------------------------------

class RxState:
    __slots__ = ("radio", "signal_mw", "noise_mw", "thr_db", "band", "fail_at")

    def __init__(self, radio, signal_mw, noise_mw, thr_db, band):
        self.radio = radio
        self.signal_mw = signal_mw
        self.noise_mw = noise_mw
        self.thr_db = thr_db
        self.band = band
        self.fail_at: int | None = None


class Tx:
    """A frame on the medium. Virtual transmissions stand for a collapsed TXOP."""

    __slots__ = ("src", "sources", "dsts", "kind", "start", "end", "span", "scale", "group", "rx",
                 "nav_end", "virtual", "rts_like", "segs")

    def __init__(self, src, dsts, kind, start, end, span, scale=1.0, group=None, nav_end=0,
                 virtual=False, sources=None, rts_like=False):
        self.src = src
        self.sources = sources if sources is not None else (src,)
        self.dsts = dsts
        self.kind = kind
        self.start = start
        self.end = end
        self.span = span
        self.scale = scale
        self.group = group
        self.rx: list[RxState] = []
        self.nav_end = nav_end
        self.virtual = virtual
        self.segs: tuple = ()  # virtual only: (start, end, src idx, lo, hi, scale) per planned frame
        self.rts_like = rts_like


class Channel:
    def __init__(self, idx: int, spec, net: "Network"):
        self.idx = idx
        self.spec = spec
        self.net = net
        self.tones = CHANNEL_TONES[spec.width_mhz]
        self.radios: list[Radio] = []
        self.active: list[Tx] = []
        self.ended: list[Tx] = []  # frames that left the air at ``ended_at``
        self.ended_at = -1
        self._zones: dict = {}

    def finalize(self, topo: Topology, cfg: ScenarioConfig) -> None:
        n = len(self.radios)
        freq = self.spec.freq_ghz
        bw = RuAllocation.full_band(self.spec.width_mhz).bandwidth_hz
        self.noise_mw = dbm_to_mw(noise_dbm(bw, cfg.noise_figure_db))
        negligible = self.noise_mw * 10 ** (cfg.negligible_interference_db / 10)
        cca_total_mw = dbm_to_mw(cfg.cca_dbm_per_20mhz + 10 * math.log10(self.spec.width_mhz / 20))
        self.gain = [[0.0] * n for _ in range(n)]
        for a in self.radios:
            for b in self.radios:
                if a is b:
                    continue
                loss = topo.path_loss(a.node, b.node, freq)
                self.gain[a.idx][b.idx] = dbm_to_mw(a.node.tx_dbm - loss)
        self.hearers: list[list[Radio]] = [[] for _ in range(n)]
        self.coupled: list[set[Radio]] = [set() for _ in range(n)]
        for a in self.radios:
            for b in self.radios:
                if a is b:
                    continue
                if self.gain[a.idx][b.idx] >= cca_total_mw:
                    self.hearers[a.idx].append(b)
                if self.gain[a.idx][b.idx] >= negligible or self.gain[b.idx][a.idx] >= negligible:
                    self.coupled[a.idx].add(b)
        self.hear_set = [set(h) for h in self.hearers]
        self.negligible_mw = negligible

    def zone(self, i: "Radio", resp: tuple) -> tuple:
        """Radios that hear an exchange, and the deaf ones that may keep transmitting through it.

        Returns ``(members, third, deaf)``: ``members`` holds the participants and
        every radio that senses one of them; ``third`` lists those hearers with
        flags for hearing the initiator and hearing a responder; ``deaf`` is
        everyone else on the channel.
        """
        key = (i.idx,) + tuple(r.idx for r in resp)
        z = self._zones.get(key)
        if z is None:
            members = {i, *resp}
            members.update(self.hearers[i.idx])
            for r in resp:
                members.update(self.hearers[r.idx])
            third = []
            for x in sorted(members, key=lambda x: x.idx):
                if x is i or x in resp:
                    continue
                hi = x in self.hear_set[i.idx]
                hr = any(x in self.hear_set[r.idx] for r in resp)
                third.append((x, hi, hr))
            deaf = tuple(x for x in self.radios if x not in members)
            z = self._zones[key] = (frozenset(members), tuple(third), deaf)
        return z


# ---------------------------------------------------------------------------
# Devices and radios
# ---------------------------------------------------------------------------

class Device(Mld):
    """An MLD plus the bookkeeping the network needs."""

    def __init__(self, address, role, mode, *, peers=None):
        super().__init__(address, role, mode)
        self.radios: dict[int, Radio] = {}
        self.peers: list[Device] = peers or []
        self.reorder: dict[str, ReorderBuffer] = {}
        self.rx_flows: dict[str, FlowQueue] = {}
        self.rr_ptr = 0
        self.waiters: set[Radio] = set()
        self.ap: Device | None = None


class Radio:
    """One affiliated interface of a device on one link."""

    def __init__(self, net: "Network", device: Device, link: int, channel: Channel, node):
        self.net = net
        self.device = device
        self.link = link
        self.channel = channel
        self.node = node
        self.name = f"{device.address}/L{link}"
        self.idx = len(channel.radios)
        channel.radios.append(self)
        cfg = net.cfg
        self.edca = EdcaState(aifs_ns=net.t.aifs, slot_ns=net.t.slot, cw_min=cfg.cw_min, cw_max=cfg.cw_max)
        self.rng = net.sim.rng(f"backoff:{self.name}")
        self.cs_count = 0
        self.cs_starts = 0
        self.tx_active = 0
        self.rx_count = 0  # frames on air addressed to this radio
        self.nav_until = 0
        self.access_ev = None
        self.access_at = -1
        self.nav_wake_at = -1
        self.wake_at = -1
        self.in_exchange = False
        self.out_flows: list[FlowQueue] = []
        self.poll_flows: list[FlowQueue] = []
        self.passive = True

    def __repr__(self):
        return f"Radio({self.name})"

    # -- medium state edges -------------------------------------------------
    def busy_edge(self, when: int) -> None:
        ev = self.access_ev
        if ev is not None and self.access_at > when:
            Simulator.cancel(ev)
            self.access_ev = None
            self.edca.on_medium_busy(when)

    def set_nav(self, until: int, now: int) -> None:
        if until > self.nav_until:
            self.nav_until = until
            self.net._log_nav(self, now, until)
        self.busy_edge(now)

    def can_respond(self, now: int) -> bool:
        if self.in_exchange or self.tx_active or self.nav_until > now:
            return False
        return not self.device.busy_elsewhere(self.link) if self.device.is_nstr else True

    def nstr_blocked(self) -> bool:
        """A sibling link is transmitting or receiving; overheard third-party frames do not count."""
        dev = self.device
        if not dev.is_nstr:
            return False
        for k, r in dev.radios.items():
            if k != self.link and (r.in_exchange or r.rx_count > 0 or r.tx_active):
                return True
        return False

    def has_traffic(self, now: int) -> bool:
        flows = self.poll_flows if self.poll_flows else self.out_flows
        for f in flows:
            if f.full_buffer:
                return True
            f.materialize(now)
            if f.lifetime_ns is not None:
                f.expire_lifetimes(now)
            if f.queued:
                return True
        return False

    def next_arrival(self) -> int | None:
        flows = self.poll_flows if self.poll_flows else self.out_flows
        best = None
        for f in flows:
            t = f.next_arrival_time()
            if t is not None and (best is None or t < best):
                best = t
        return best

    def kick(self, now: int) -> None:
        """Start (or resume) contention if the radio has something to send and may count down."""
        if self.passive or self.access_ev is not None or self.in_exchange:
            return
        if self.cs_count > 0 or self.tx_active:
            return
        if self.nav_until > now:
            if self.nav_wake_at != self.nav_until:
                self.nav_wake_at = self.nav_until
                self.net.sim.schedule(self.nav_until, self.kick_now, kind="nav_end", target=self.name)
            return
        if self.nstr_blocked():
            return
        if not self.has_traffic(now):
            nxt = self.next_arrival()
            if nxt is not None and nxt != self.wake_at:
                self.wake_at = nxt
                self.net.sim.schedule(max(nxt, now), self.kick_now, kind="arrival", target=self.name)
            return
        edca = self.edca
        if edca.backoff_slots is None:
            edca.draw(self.rng)
        self.access_at = edca.access_time(now)
        # access fires after every medium and queue update at the same instant
        self.access_ev = self.net.sim.schedule(self.access_at, self.on_access, kind="access", target=self.name,
                                               phase=1)

    def kick_now(self) -> None:
        self.kick(self.net.sim.now)

    def on_access(self) -> None:
        self.access_ev = None
        self.edca.backoff_slots = 0
        self.net.start_txop(self, self.net.sim.now)


# ---------------------------------------------------------------------------
# TXOP plans
# ---------------------------------------------------------------------------

class Part:
    __slots__ = ("flow", "sender", "receiver", "ranges", "n", "dur", "band", "timing")

    def __init__(self, flow, sender, receiver, ranges, n, dur, band, timing):
        self.flow = flow
        self.sender = sender
        self.receiver = receiver
        self.ranges = ranges
        self.n = n
        self.dur = dur
        self.band = band
        self.timing = timing


class Step:
    __slots__ = ("start", "data_start", "data_end", "ba_end", "parts", "ppdu")

    def __init__(self, start, data_start, data_end, ba_end, parts, ppdu):
        self.start = start
        self.data_start = data_start
        self.data_end = data_end
        self.ba_end = ba_end
        self.parts = parts
        self.ppdu = ppdu


class Plan:
    __slots__ = ("kind", "initiator", "responders", "t0", "steps", "end", "first", "resp_start", "bands",
                 "any_ack", "failed", "timeout", "alive", "zone", "flushed")

    def __init__(self, kind, initiator, responders, t0):
        self.kind = kind
        self.initiator = initiator
        self.responders = responders
        self.t0 = t0
        self.steps: list[Step] = []
        self.end = 0
        self.first = 0
        self.resp_start = 0
        self.bands: dict = {}
        self.any_ack = False
        self.failed = False
        self.timeout = None
        self.alive: list = []
        self.zone = None
        self.flushed: set = set()  # (step, part) already handed to the reorder buffer


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: ScenarioConfig
    sap_bits: dict[str, int]
    throughput_bps: dict[str, float]
    delays_ns: np.ndarray
    ledger: dict[str, int]
    sap_released: int
    sap_skipped: int
    events: int
    txops: int
    fast_txops: int
    failures: int
    nominal_bps: float
    frames: list | None = None
    navs: list | None = None
    trace: list | None = None
    radios: dict = field(default_factory=dict)

    @property
    def throughput_gbps(self) -> float:
        return sum(self.throughput_bps.values()) / 1e9

    def conserved(self) -> bool:
        led = self.ledger
        return led["generated"] == sum(v for k, v in led.items() if k != "generated")


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

class Network:
    def __init__(self, cfg: ScenarioConfig, topo: Topology | None = None, *, trace: bool = False,
                 log_frames: bool = False, force_slow: bool = False):
        self.cfg = cfg
        self.topo = topo or build_topology(cfg)
        self.sim = Simulator(cfg.seed, trace=trace)
        self.t = MacTiming.from_config(cfg)
        self.table = mcs_table(cfg.min_sinr_db)
        self.entry = self.table[cfg.mcs]
        self.force_slow = force_slow
        self.frames: list | None = [] if log_frames else None
        self.navs: list | None = [] if log_frames else None
        self.duration_ns = int(round(cfg.duration_s * NS_PER_S))
        self.warmup_ns = int(round(cfg.warmup_s * NS_PER_S))
        self.bf_lin = 10 ** (cfg.beamforming_gain_db / 10)
        self.ul_mu = cfg.mode == "MU" and cfg.direction == "UL"
        self.dl_mu = cfg.mode == "MU" and cfg.direction == "DL"
        self.sap_bits: dict[str, int] = {DL: 0, UL: 0}
        self.txops = 0
        self.fast_txops = 0
        self.failures = 0
        self._group = 0
        self._timings: dict = {}
        self._rates: dict = {}
        self._plans_cache: dict = {}
        self._fast_open: dict = {}  # collapsed TXOPs still on the air
        self._build()

    # -- construction -------------------------------------------------------
    def _build(self) -> None:
        cfg, topo = self.cfg, self.topo
        self.channels = [Channel(k, lk.spec(), self) for k, lk in enumerate(topo.links)]
        self.devices: dict[str, Device] = {}
        for node in topo.nodes:
            mode = cfg.mld_mode if node.role == STA else "STR"
            dev = Device(node.name, AP if node.role == "ap" else STA, mode)
            dev.node = node
            self.devices[node.name] = dev
        for node in topo.nodes:
            dev = self.devices[node.name]
            if node.ap is not None:
                ap = self.devices[node.ap]
                dev.ap = ap
                ap.peers.append(dev)
            for k in node.links:
                dev.radios[k] = Radio(self, dev, k, self.channels[k], node)
                dev.links.append(dev.radios[k])
        for ch in self.channels:
            ch.finalize(topo, cfg)
        lifetime = None if cfg.msdu_lifetime_ms is None else us(cfg.msdu_lifetime_ms * 1000)
        self.flows: list[FlowQueue] = []
        for spec in traffic_plan(cfg, topo):
            self._add_flow(spec, lifetime)
        for dev in self.devices.values():
            for r in dev.radios.values():
                if self.ul_mu:
                    if dev.role == AP:
                        r.poll_flows = [p.flows[dev.address] for p in dev.peers
                                        if dev.address in p.flows and r.link in p.radios]
                        r.passive = not r.poll_flows
                    else:
                        r.out_flows = []
                        r.passive = True
                else:
                    r.out_flows = [f for dst, f in dev.flows.items() if r.link in self.devices[dst].radios]
                    r.passive = not r.out_flows
        self.schedulers: dict = {}
        if self.cfg.mode == "MU":
            for dev in self.devices.values():
                if dev.role != AP:
                    continue
                for k, r in dev.radios.items():
                    width = r.channel.spec.width_mhz
                    stas = [p.address for p in dev.peers if k in p.radios]
                    if stas:
                        self.schedulers[(dev.address, k)] = RoundRobinScheduler(
                            stas, width, cfg.ru_size or RU_FOR_WIDTH[width], UL if self.ul_mu else DL)

    def _add_flow(self, spec: FlowSpec, lifetime) -> None:
        cfg = self.cfg
        src, dst = self.devices[spec.src], self.devices[spec.dst]
        arrivals = generate_arrivals(spec.source, self.duration_ns,
                                     self.sim.rng(f"arrivals:{spec.src}->{spec.dst}"))
        flow = FlowQueue(spec.src, spec.dst, mpdu_bytes=cfg.mpdu_bytes, full_buffer=arrivals is None,
                         arrivals=arrivals, lifetime_ns=lifetime, capacity=cfg.queue_capacity,
                         retry_limit=cfg.retry_limit)
        flow.direction = DL if src.role == AP else UL
        src.flows[spec.dst] = flow
        dst.rx_flows[spec.src] = flow
        dst.reorder[spec.src] = ReorderBuffer(us(cfg.hole_timeout_ms * 1000))
        self.flows.append(flow)

    def timing(self, rate: float) -> AmpduTiming:
        tm = self._timings.get(rate)
        if tm is None:
            tm = self._timings[rate] = AmpduTiming(rate, self.cfg.mpdu_bytes, self.t.data_preamble, self.cfg.gi_ns)
        return tm

    def rate_for(self, ru_tones: int) -> float:
        rate = self._rates.get(ru_tones)
        if rate is None:
            rate = self._rates[ru_tones] = phy_rate(self.entry, RuAllocation.of(ru_tones), self.cfg.nss,
                                                    self.cfg.gi_ns)
        return rate

    # -- logging --------------------------------------------------------------
    def _log_frame(self, kind, src, dsts, start, end) -> None:
        if self.frames is not None:
            self.frames.append((start, end, kind, src.name, src.device.address, src.link, "tx"))
            for d in dsts:
                self.frames.append((start, end, kind, d.name, d.device.address, d.link, "rx"))

    def _log_nav(self, radio, now, until) -> None:
        if self.navs is not None:
            self.navs.append((radio.name, now, until))

    # -- access ---------------------------------------------------------------
    def start_txop(self, i: Radio, now: int) -> None:
        dev = i.device
        if i.nstr_blocked():
            return
        if self.ul_mu:
            plan = self._plan_ul_mu(i, now)
        elif self.dl_mu and dev.role == AP:
            plan = self._plan_dl_mu(i, now)
        else:
            plan = self._plan_su(i, now)
        if plan is None:
            i.kick(now)
            return
        if not plan.steps:
            return
        if not plan.first and plan.kind != "ul_mu":
            plan.resp_start = plan.steps[0].data_end + self.t.sifs
        self.txops += 1
        self._begin(plan, now)
        if self._fast_ok(plan, now):
            self.fast_txops += 1
            self._run_fast(plan, now)
        else:
            self._run_slow(plan, now)

    def _dest_available(self, dst: Device, link: int) -> bool:
        return not (dst.is_nstr and (dst.busy_elsewhere(link) or dst.radios[link].nstr_blocked()))

    def _plan_su(self, i: Radio, now: int) -> Plan | None:
        dev = i.device
        flows = i.out_flows
        n = len(flows)
        chosen = None
        blocked = []
        for step in range(n):
            f = flows[(dev.rr_ptr + step) % n]
            if not f.full_buffer:
                f.materialize(now)
                if f.lifetime_ns is not None:
                    f.expire_lifetimes(now)
                if not f.queued:
                    continue
            dst = self.devices[f.dst]
            if not self._dest_available(dst, i.link):
                blocked.append(dst)
                continue
            chosen = f
            dev.rr_ptr = (dev.rr_ptr + step + 1) % n
            break
        if chosen is None:
            if blocked:
                for d in blocked:
                    d.waiters.add(i)
                return Plan("su", i, (), now)
            return None
        r = self.devices[chosen.dst].radios[i.link]
        t = self.t
        plan = Plan("su", i, (r,), now)
        tm = self.timing(self.rate_for(i.channel.tones))
        if self.cfg.rts_cts:
            plan.first = t.rts
            plan.resp_start = t.rts + t.sifs
            e = t.rts + t.sifs + t.cts
        else:
            e = -t.sifs
        band = (0, i.channel.tones)
        while True:
            start = e + t.sifs
            if chosen.lifetime_ns is not None:
                chosen.expire_lifetimes(now + start)
            amp = build_ampdu(chosen, tm, t.txop - start, self.cfg.max_aggregation,
                              sifs_ns=t.sifs, block_ack_ns=t.ba)
            if not amp.mpdus:
                break
            data_end = start + amp.airtime_ns
            ba_end = data_end + t.sifs + t.ba
            plan.steps.append(Step(start, start, data_end, ba_end,
                                   [Part(chosen, i, r, amp.mpdus, len(amp), amp.airtime_ns, band, tm)],
                                   amp.airtime_ns))
            e = ba_end
            if not chosen.full_buffer and not chosen.queued:
                break
        plan.end = e
        return plan

    def _plan_dl_mu(self, i: Radio, now: int) -> Plan | None:
        dev = i.device
        sched = self.schedulers[(dev.address, i.link)]
        backlogged = []
        blocked = []
        for f in i.out_flows:
            if not f.full_buffer:
                f.materialize(now)
                if f.lifetime_ns is not None:
                    f.expire_lifetimes(now)
                if not f.queued:
                    continue
            dst = self.devices[f.dst]
            if not self._dest_available(dst, i.link):
                blocked.append(dst)
                continue
            backlogged.append(f.dst)
        if not backlogged:
            if blocked:
                for d in blocked:
                    d.waiters.add(i)
                return Plan("dl_mu", i, (), now)
            return None
        grants = sched.schedule(backlogged)
        t = self.t
        resp = tuple(self.devices[g.sta].radios[i.link] for g in grants)
        plan = Plan("dl_mu", i, resp, now)
        if self.cfg.mu_rts:
            plan.first = t.mu_rts(len(grants))
            plan.resp_start = plan.first + t.sifs
            e = plan.first + t.sifs + t.cts
        else:
            e = -t.sifs
        tm = self.timing(self.rate_for(sched.ru_size))
        flows = [dev.flows[g.sta] for g in grants]
        for g, r in zip(grants, resp):
            plan.bands[r] = g.tones
        while True:
            start = e + t.sifs
            parts = []
            for f, g, r in zip(flows, grants, resp):
                if f.lifetime_ns is not None:
                    f.expire_lifetimes(now + start)
                amp = build_ampdu(f, tm, t.txop - start, self.cfg.max_aggregation, sifs_ns=t.sifs,
                                  block_ack_ns=t.ba)
                if amp.mpdus:
                    parts.append(Part(f, i, r, amp.mpdus, len(amp), amp.airtime_ns, g.tones, tm))
            if not parts:
                break
            ppdu = max(p.dur for p in parts)
            data_end = start + ppdu
            ba_end = data_end + t.sifs + t.ba
            plan.steps.append(Step(start, start, data_end, ba_end, parts, ppdu))
            e = ba_end
            if all(not f.full_buffer and not f.queued for f in flows):
                break
        plan.end = e
        return plan

    def _plan_ul_mu(self, i: Radio, now: int) -> Plan | None:
        dev = i.device
        if dev.role != AP:
            return None
        sched = self.schedulers[(dev.address, i.link)]
        by_sta = {}
        for f in i.poll_flows:
            if not f.full_buffer:
                f.materialize(now)
                if f.lifetime_ns is not None:
                    f.expire_lifetimes(now)
                if not f.queued:
                    continue
            src = self.devices[f.src]
            if not self._dest_available(src, i.link):
                continue
            by_sta[f.src] = f
        if not by_sta:
            return None
        grants = sched.schedule(list(by_sta))
        t = self.t
        resp = tuple(self.devices[g.sta].radios[i.link] for g in grants)
        plan = Plan("ul_mu", i, resp, now)
        trig = t.trigger(len(grants))
        mba = t.multi_ba(len(grants))
        plan.first = trig
        plan.resp_start = trig + t.sifs
        tm = self.timing(self.rate_for(sched.ru_size))
        flows = [by_sta[g.sta] for g in grants]
        for g, r in zip(grants, resp):
            plan.bands[r] = g.tones
        e = -t.sifs
        max_agg = self.cfg.max_aggregation
        while True:
            start = e + t.sifs
            tb_start = start + trig + t.sifs
            budget = t.txop - tb_start - t.sifs - mba
            if budget <= t.data_preamble:
                break
            fit = tm.max_fit(budget)
            need = 0
            for f in flows:
                if f.lifetime_ns is not None:
                    f.expire_lifetimes(now + tb_start)
                avail = max_agg if f.full_buffer else min(f.queued, max_agg)
                n = min(avail, fit)
                if n > 0:
                    need = max(need, tm.duration(n))
            if need == 0:
                break
            parts = []
            fit_grant = tm.max_fit(need)
            for f, g, r in zip(flows, grants, resp):
                amp = build_ampdu(f, tm, need + t.sifs + t.ba, min(max_agg, fit_grant),
                                  sifs_ns=t.sifs, block_ack_ns=t.ba)
                if amp.mpdus:
                    parts.append(Part(f, r, i, amp.mpdus, len(amp), amp.airtime_ns, g.tones, tm))
            data_end = tb_start + need
            ba_end = data_end + t.sifs + mba
            plan.steps.append(Step(start, tb_start, data_end, ba_end, parts, need))
            e = ba_end
            if all(not f.full_buffer and not f.queued for f in flows):
                break
        plan.end = e
        return plan

    # -- exchange bookkeeping -------------------------------------------------
    def _begin(self, plan: Plan, now: int) -> None:
        i = plan.initiator
        i.in_exchange = True
        self._mark(i, True, now)

    def _mark(self, r: Radio, on: bool, now: int) -> None:
        dev = r.device
        if on:
            dev.exchange_links.add(r.link)
            if dev.is_nstr:
                for k, s in dev.radios.items():
                    if k != r.link:
                        s.busy_edge(now)
        else:
            dev.exchange_links.discard(r.link)

    def _finish(self, plan: Plan, now: int) -> None:
        i = plan.initiator
        if plan.failed:
            self.failures += 1
            i.edca.on_tx_failure(i.rng)
        else:
            i.edca.on_tx_success()
        involved = [i, *plan.responders]
        for r in involved:
            if r.in_exchange:
                r.in_exchange = False
                self._mark(r, False, now)
        for r in involved:
            r.kick(now)
            dev = r.device
            if dev.is_nstr:
                for s in dev.radios.values():
                    if s is not r:
                        s.kick(now)
            if dev.waiters:
                waiters = sorted(dev.waiters, key=lambda w: w.name)
                dev.waiters.clear()
                for w in waiters:
                    w.kick(now)

    # -- delivery helpers -----------------------------------------------------
    def _deliver(self, part: Part, ranges: Ranges, at: int) -> None:
        rx_dev = part.receiver.device
        buf = rx_dev.reorder[part.flow.src]
        if self._fast_open:
            # keep each buffer fed in air-time order across overlapping collapsed TXOPs
            self._flush_open(buf, at)
        released = buf.receive(ranges, at)
        self._count_sap(part.flow, released, at)
        if buf.deadline is not None:
            self._arm_hole(rx_dev, part.flow, buf)

    def _arm_hole(self, dev: Device, flow: FlowQueue, buf: ReorderBuffer) -> None:
        deadline = buf.deadline
        if getattr(buf, "armed", None) == deadline:
            return
        buf.armed = deadline
        self.sim.schedule(max(deadline, self.sim.now), self._hole_expired, dev, flow, buf, deadline,
                          kind="hole_timer", target=dev.address)

    def _hole_expired(self, dev, flow, buf, deadline) -> None:
        if buf.deadline != deadline:
            return
        now = self.sim.now
        if self._fast_open:
            self._flush_open(buf, now)
            if buf.deadline != deadline:
                return
        released = buf.expire(now)
        self._count_sap(flow, released, now)
        if buf.deadline is not None:
            self._arm_hole(dev, flow, buf)

    def _count_sap(self, flow: FlowQueue, released: Ranges, at: int) -> None:
        if released and self.warmup_ns <= at <= self.duration_ns:
            self.sap_bits[flow.direction] += ranges_count(released) * 8 * flow.mpdu_bytes

    # -- collapsed path -------------------------------------------------------
    def _fast_ok(self, plan: Plan, now: int) -> bool:
        if self.force_slow:
            return False
        i = plan.initiator
        resp = plan.responders
        ch = i.channel
        plan.zone = ch.zone(i, resp)
        members, third, _ = plan.zone
        for s in ch.active:
            if s.src in members or any(d in members for d in s.dsts):
                return False
            if s.virtual and any(src in members for src in s.sources):
                return False
        resp_at = now + plan.resp_start
        for x, hi, hr in third:
            if x.in_exchange or x.tx_active:
                return False
            if x.access_ev is not None:
                if hi:
                    if x.access_at <= now:
                        return False
                elif x.access_at <= resp_at:
                    return False
        for r in resp:
            if not r.can_respond(now):
                return False
        return self._clean(plan)

    def _clean(self, plan: Plan) -> bool:
        """Every frame of the plan decodes even if all deaf radios transmit at full power throughout."""
        i = plan.initiator
        key = (plan.kind, i.name, tuple(r.name for r in plan.responders))
        ok = self._plans_cache.get(key)
        if ok is None:
            ch = i.channel
            _, _, deaf = ch.zone(i, plan.responders)
            ok = True
            for rx in self._rx_specs(plan):
                y = rx.radio.idx
                worst = 0.0
                for d in deaf:
                    p = ch.gain[d.idx][y]
                    if p >= ch.negligible_mw:
                        worst += p
                if not self._snr_ok(rx, worst):
                    ok = False
                    break
            self._plans_cache[key] = ok
        return ok

    def _rx_specs(self, plan: Plan) -> list[RxState]:
        """Receiver states for every frame type of the plan, without interference."""
        i = plan.initiator
        specs = []
        full = (0, i.channel.tones)
        for r in plan.responders:
            band = plan.bands.get(r, full)
            specs.append(self._rx(i, r, "ctrl", full))
            specs.append(self._rx(r, i, "ctrl", full))
            if plan.kind == "ul_mu":
                specs.append(self._rx(r, i, "data", band))
            else:
                scale = (band[1] - band[0]) / i.channel.tones
                specs.append(self._rx(i, r, "data", band, scale))
        return specs

    def _rx(self, src: Radio, dst: Radio, kind: str, band, scale: float = 1.0) -> RxState:
        ch = src.channel
        sig = ch.gain[src.idx][dst.idx] * scale
        if kind == "data":
            sig *= self.bf_lin
            thr = self.entry.min_sinr_db
            noise = ch.noise_mw * (band[1] - band[0]) / ch.tones
        else:
            thr = self.cfg.control_min_sinr_db
            noise = ch.noise_mw
        return RxState(dst, sig, noise, thr, band)

    @staticmethod
    def _snr_ok(rx: RxState, interf: float = 0.0) -> bool:
        return 10 * math.log10(rx.signal_mw / (rx.noise_mw + interf)) >= rx.thr_db - 1e-9

    def _run_fast(self, plan: Plan, now: int) -> None:
        i = plan.initiator
        ch = i.channel
        end = now + plan.end
        for r in plan.responders:
            r.in_exchange = True
            self._mark(r, True, now)
            r.busy_edge(now)
        v = Tx(i, plan.responders, "txop", now, end, (0, ch.tones), virtual=True,
               sources=(i, *plan.responders))
        v.segs = self._plan_segments(plan, now)
        ch.active.append(v)
        if len(ch.active) > 1:
            self._refresh_sinr(ch, now)
        members, third, _ = plan.zone
        resp_at = now + plan.resp_start
        for x, hi, hr in third:
            if x.passive:
                x.nav_until = max(x.nav_until, end)
                continue
            x.cs_count += 1
            x.cs_starts += 1
            x.busy_edge(now if hi else resp_at)
            if end > x.nav_until:
                x.nav_until = end
                self._log_nav(x, now if hi else resp_at, end)
        if self.frames is not None:
            self._log_plan_frames(plan, now)
        self._fast_open[id(plan)] = plan
        self.sim.schedule(end, self._fast_end, plan, v, kind="txop_end", target=i.name)

    def _fast_end(self, plan: Plan, v: Tx) -> None:
        now = self.sim.now
        t0 = plan.t0
        ch = plan.initiator.channel
        ch.active.remove(v)
        del self._fast_open[id(plan)]
        done = plan.flushed
        for k, step in enumerate(plan.steps):
            for j, part in enumerate(step.parts):
                part.flow.on_acked(part.ranges, t0 + step.ba_end)
                if (k, j) not in done:
                    self._deliver(part, part.ranges, t0 + step.data_end)
        plan.any_ack = True
        # Replay the per-frame close-out order: radios that hear the closing frame(s) stay busy
        # through _finish and are kicked after it, everyone else was already released.
        closing = [ch.radios[sg[2]] for sg in v.segs if sg[1] == now]
        heard = [x for src in closing for x in ch.hearers[src.idx]]
        _, third, _ = plan.zone
        for x, hi, hr in third:
            if not x.passive:
                x.cs_count -= 1
        for x in heard:
            x.cs_count += 1
        for x, hi, hr in third:
            if not x.passive and x.cs_count == 0:
                x.kick(now)
        self._finish(plan, now)
        for x in heard:
            x.cs_count -= 1
            if x.cs_count == 0:
                x.kick(now)

    def _flush_open(self, buf: ReorderBuffer, now: int) -> None:
        """Hand ``buf`` the data a still-open collapsed TXOP decoded before ``now``."""
        for plan in list(self._fast_open.values()):
            t0 = plan.t0
            for k, step in enumerate(plan.steps):
                if t0 + step.data_end >= now:
                    break
                for j, part in enumerate(step.parts):
                    if (k, j) not in plan.flushed and part.receiver.device.reorder[part.flow.src] is buf:
                        plan.flushed.add((k, j))
                        self._deliver(part, part.ranges, t0 + step.data_end)

    def _settle_open(self) -> None:
        """At the horizon, credit what the per-frame path would already have delivered and acked."""
        horizon = self.duration_ns
        for plan in self._fast_open.values():
            t0 = plan.t0
            for k, step in enumerate(plan.steps):
                for j, part in enumerate(step.parts):
                    if t0 + step.ba_end <= horizon:
                        part.flow.on_acked(part.ranges, t0 + step.ba_end)
                    if t0 + step.data_end <= horizon and (k, j) not in plan.flushed:
                        self._deliver(part, part.ranges, t0 + step.data_end)
        self._fast_open.clear()

    def _plan_segments(self, plan: Plan, now: int) -> tuple:
        """On-air intervals of every frame the per-frame path would send for ``plan``."""
        t = self.t
        i = plan.initiator
        tones = i.channel.tones
        segs = []
        if plan.kind == "ul_mu":
            for st in plan.steps:
                segs.append((now + st.start, now + st.start + plan.first, i.idx, 0, tones, 1.0))
                for p in st.parts:
                    segs.append((now + st.data_start, now + st.data_end, p.sender.idx, p.band[0], p.band[1], 1.0))
                segs.append((now + st.data_end + t.sifs, now + st.ba_end, i.idx, 0, tones, 1.0))
            return tuple(segs)
        if plan.first:
            segs.append((now, now + plan.first, i.idx, 0, tones, 1.0))
            for r in plan.responders:
                segs.append((now + plan.resp_start, now + plan.resp_start + t.cts, r.idx, 0, tones, 1.0))
        for st in plan.steps:
            lo, hi, scale = 0, tones, 1.0
            if plan.kind == "dl_mu":
                lo = min(p.band[0] for p in st.parts)
                hi = max(p.band[1] for p in st.parts)
                scale = sum(p.band[1] - p.band[0] for p in st.parts) / tones
            segs.append((now + st.data_start, now + st.data_end, i.idx, lo, hi, scale))
            for p in st.parts:
                segs.append((now + st.data_end + t.sifs, now + st.ba_end, p.receiver.idx, 0, tones, 1.0))
        return tuple(segs)

    def _log_plan_frames(self, plan: Plan, now: int) -> None:
        t = self.t
        i = plan.initiator
        resp = plan.responders
        if plan.kind == "ul_mu":
            for st in plan.steps:
                s = now + st.start
                self._log_frame("trigger", i, resp, s, s + plan.first)
                for p in st.parts:
                    self._log_frame("tb", p.sender, (i,), now + st.data_start, now + st.data_end)
                self._log_frame("mba", i, resp, now + st.data_end + t.sifs, now + st.ba_end)
            return
        if plan.first:
            self._log_frame("rts" if plan.kind == "su" else "mu_rts", i, resp, now, now + plan.first)
            for r in resp:
                self._log_frame("cts", r, (i,), now + plan.resp_start, now + plan.resp_start + t.cts)
        for st in plan.steps:
            self._log_frame("data", i, [p.receiver for p in st.parts], now + st.data_start, now + st.data_end)
            for p in st.parts:
                self._log_frame("ba", p.receiver, (i,), now + st.data_end + t.sifs, now + st.ba_end)

    # -- per-frame path -------------------------------------------------------
    def _start_frames(self, frames: list[Tx]) -> None:
        """Put frames on the air together and update SINR of every ongoing reception."""
        if not frames:
            return
        now = self.sim.now
        ch = frames[0].src.channel
        for tx in frames:
            ch.active.append(tx)
            tx.src.tx_active += 1
            for d in tx.dsts:
                d.rx_count += 1
            self._log_frame(tx.kind, tx.src, tx.dsts, tx.start, tx.end)
        self._refresh_sinr(ch, now)
        for tx in frames:
            for x in ch.hearers[tx.src.idx]:
                x.cs_starts += 1
                x.cs_count += 1
                if x.cs_count == 1:
                    x.busy_edge(now)

    def _refresh_sinr(self, ch: Channel, now: int) -> None:
        """Mark receptions that the current set of transmissions breaks."""
        for s in ch.active:
            for rx in s.rx:
                if rx.fail_at is not None and rx.fail_at <= now:
                    continue
                if rx.radio.tx_active:
                    rx.fail_at = now
                    continue
                t = self._fail_time(ch, rx, s, now, s.end)
                if t is not None and (rx.fail_at is None or t < rx.fail_at):
                    rx.fail_at = t

    def _fail_time(self, ch: Channel, rx: RxState, own: Tx, now: int, end: int) -> int | None:
        """First instant in ``[now, end)`` at which ``rx`` drops below threshold, or None.

        Real frames count as they are now. A collapsed TXOP contributes the frames
        it would have on the air at each instant, so a reception is checked again
        at every planned frame start, as the per-frame path would do.
        """
        real, virt = self._interference(ch, rx, own, split=True, now=now)
        if not virt:
            return None if self._snr_ok(rx, real) else now
        instants = {now}
        for v in virt:
            for seg in v.segs:
                if now < seg[0] < end:
                    instants.add(seg[0])
        for t in sorted(instants):
            if not self._snr_ok(rx, real + self._planned(ch, rx, virt, t)):
                return t
        return None

    @staticmethod
    def _planned(ch: Channel, rx: RxState, virt: list, t: int, ending: bool = False) -> float:
        """Planned-frame power at ``t``; ``ending`` counts frames on air just before ``t`` instead."""
        y = rx.radio.idx
        lo, hi = rx.band
        neg = ch.negligible_mw
        total = 0.0
        for v in virt:
            for start, stop, src, slo, shi, scale in v.segs:
                if (start < t <= stop) if ending else (start <= t < stop):
                    ov = min(hi, shi) - max(lo, slo)
                    if ov <= 0:
                        continue
                    p = ch.gain[src][y] * scale
                    if p >= neg:
                        total += p * ov / (shi - slo)
        return total

    def _interference(self, ch: Channel, rx: RxState, own: Tx, split: bool = False, pool=None,
                      now: int | None = None):
        """Sum of what overlaps ``rx``; with ``now``, frames whose end event is still queued are skipped."""
        y = rx.radio.idx
        lo, hi = rx.band
        total = 0.0
        virt = []
        neg = ch.negligible_mw
        for s in ch.active if pool is None else pool:
            if s is own or (own.group is not None and s.group == own.group):
                continue
            if s.virtual and split:
                # skip collapsed TXOPs whose every sender is below the negligible level here
                for src in s.sources:
                    if ch.gain[src.idx][y] >= neg:
                        virt.append(s)
                        break
                continue
            if now is not None and s.end <= now:
                continue
            slo, shi = s.span
            ov = min(hi, shi) - max(lo, slo)
            if ov <= 0:
                continue
            p = max(ch.gain[src.idx][y] for src in s.sources) * s.scale
            if p < neg:
                continue
            total += p * ov / (shi - slo)
        return (total, virt) if split else total

    def _end_frames(self, frames: list[Tx], callback: Callable, *args) -> None:
        now = self.sim.now
        ch = frames[0].src.channel
        if ch.ended_at != now:
            ch.ended_at = now
            ch.ended = []
        for tx in frames:
            ch.active.remove(tx)
            tx.src.tx_active -= 1
            for d in tx.dsts:
                d.rx_count -= 1
            ch.ended.append(tx)
        for tx in frames:
            if tx.nav_end > now:
                self._overhear(ch, tx, now)
        callback(frames, *args)
        for tx in frames:
            for x in ch.hearers[tx.src.idx]:
                x.cs_count -= 1
                if x.cs_count == 0:
                    x.kick(now)

    def _overhear(self, ch: Channel, tx: Tx, now: int) -> None:
        """Third parties that decode a control frame set their NAV."""
        thr = self.cfg.control_min_sinr_db
        # everything that overlapped the frame, whatever order same-instant ends are processed in
        pool = [s for s in ch.active if s.start < now] + [s for s in ch.ended if s is not tx]
        for x in ch.hearers[tx.src.idx]:
            if x in tx.dsts or x.in_exchange or x.tx_active:
                continue
            rx = RxState(x, ch.gain[tx.src.idx][x.idx], ch.noise_mw, thr, (0, ch.tones))
            real, virt = self._interference(ch, rx, tx, split=True, pool=pool)
            if virt:
                real += self._planned(ch, rx, virt, now, ending=True)
            if not self._snr_ok(rx, real):
                continue
            before = x.nav_until
            x.set_nav(tx.nav_end, now)
            if tx.rts_like and x.nav_until == tx.nav_end and before < tx.nav_end:
                t = self.t
                check = now + 2 * t.sifs + t.cts + 2 * t.slot
                self.sim.schedule(check, self._nav_reset, x, x.cs_starts, tx.nav_end,
                                  kind="nav_reset", target=x.name)

    def _nav_reset(self, x: Radio, starts: int, nav_end: int) -> None:
        now = self.sim.now
        if x.cs_starts == starts and x.nav_until == nav_end and nav_end > now:
            x.nav_until = now
            self._log_nav(x, now, now)
            x.kick(now)

    def _send(self, src: Radio, dsts, kind: str, dur: int, callback: Callable, *args, rx=None,
              nav_end: int = 0, span=None, scale: float = 1.0, group=None, rts_like=False) -> Tx:
        now = self.sim.now
        ch = src.channel
        tx = Tx(src, tuple(dsts), kind, now, now + dur, span or (0, ch.tones), scale, group, nav_end,
                rts_like=rts_like)
        tx.rx = rx if rx is not None else [self._rx(src, d, "ctrl", (0, ch.tones)) for d in dsts]
        self._start_frames([tx])
        self.sim.schedule(now + dur, self._end_frames, [tx], callback, *args, kind=f"{kind}_end",
                          target=src.name)
        return tx

    def _send_group(self, items: list, kind: str, dur: int, callback: Callable, *args) -> list[Tx]:
        """Simultaneous responses (CTS, TB PPDUs, TB block ACKs) that never interfere with each other."""
        now = self.sim.now
        self._group += 1
        txs = []
        for src, dsts, rx, span in items:
            tx = Tx(src, tuple(dsts), kind, now, now + dur, span, 1.0, self._group)
            tx.rx = rx
            txs.append(tx)
        self._start_frames(txs)
        self.sim.schedule(now + dur, self._end_frames, txs, callback, *args, kind=f"{kind}_end",
                          target=items[0][0].name)
        return txs

    def _later(self, delay: int, fn: Callable, *args) -> None:
        self.sim.schedule(self.sim.now + delay, fn, *args, kind="sifs", target=fn.__name__)

    def _set_timeout(self, plan: Plan, delay: int, reason: str) -> None:
        plan.timeout = self.sim.schedule(self.sim.now + delay, self._timeout, plan, reason, kind="timeout",
                                         target=plan.initiator.name)

    def _clear_timeout(self, plan: Plan) -> None:
        Simulator.cancel(plan.timeout)
        plan.timeout = None

    @staticmethod
    def _decoded(rx: RxState) -> bool:
        return rx.fail_at is None

    def _decoded_prefix(self, rx: RxState, part: Part, start: int) -> int:
        if rx.fail_at is None:
            return part.n
        tm = part.timing
        return min(part.n, max_mpdus_in(rx.fail_at - start, tm.rate, tm.preamble_ns, tm.mpdu_bytes, tm.gi_ns))

    def _run_slow(self, plan: Plan, now: int) -> None:
        t = self.t
        i = plan.initiator
        nav_end = now + plan.end
        if plan.kind == "ul_mu":
            plan.alive = list(plan.responders)
            self._ul_trigger(plan, 0)
            return
        if not plan.first:
            plan.alive = list(plan.responders)
            for r in plan.responders:
                r.in_exchange = True
                self._mark(r, True, now)
            self._data(plan, 0)
            return
        kind = "rts" if plan.kind == "su" else "mu_rts"
        self._send(i, plan.responders, kind, plan.first, self._rts_end, plan, nav_end=nav_end, rts_like=True)
        self._set_timeout(plan, plan.first + t.sifs + t.slot + t.cts, "cts")

    def _rts_end(self, frames, plan: Plan) -> None:
        now = self.sim.now
        tx = frames[0]
        items = []
        for rx in tx.rx:
            r = rx.radio
            if self._decoded(rx) and r.can_respond(now):
                r.in_exchange = True
                self._mark(r, True, now)
                items.append(r)
        if items:
            self._later(self.t.sifs, self._send_cts, plan, items)

    def _send_cts(self, plan: Plan, responders) -> None:
        i = plan.initiator
        nav_end = plan.t0 + plan.end
        items = [(r, (i,), [self._rx(r, i, "ctrl", (0, i.channel.tones))], (0, i.channel.tones))
                 for r in responders]
        txs = self._send_group(items, "cts", self.t.cts, self._cts_end, plan)
        for tx in txs:
            tx.nav_end = nav_end

    def _cts_end(self, frames, plan: Plan) -> None:
        alive = [tx.src for tx in frames if self._decoded(tx.rx[0])]
        if not alive:
            return
        self._clear_timeout(plan)
        plan.alive = alive
        for r in plan.responders:
            if r not in alive and r.in_exchange:
                r.in_exchange = False
                self._mark(r, False, self.sim.now)
                r.kick(self.sim.now)
        self._later(self.t.sifs, self._data, plan, 0)

    def _data(self, plan: Plan, k: int) -> None:
        i = plan.initiator
        step = plan.steps[k]
        now = self.sim.now
        parts = [p for p in step.parts if p.receiver in plan.alive]
        dropped = [p for p in step.parts if p.receiver not in plan.alive]
        for p in dropped:
            p.flow.on_returned(p.ranges)
        step.parts = parts
        if not parts:
            self._abort(plan, k + 1, failed=True)
            return
        ch = i.channel
        full = (0, ch.tones)
        rx = []
        span = full
        scale = 1.0
        if plan.kind == "dl_mu":
            used = sum(p.band[1] - p.band[0] for p in parts)
            scale = used / ch.tones
            span = (min(p.band[0] for p in parts), max(p.band[1] for p in parts))
        for p in parts:
            share = (p.band[1] - p.band[0]) / ch.tones
            rx.append(self._rx(i, p.receiver, "data", p.band, share))
        self._send(i, [p.receiver for p in parts], "data", step.ppdu, self._data_end, plan, k, rx=rx,
                   span=span, scale=scale, nav_end=plan.t0 + plan.end)
        self._set_timeout(plan, step.ppdu + self.t.sifs + self.t.slot + self.t.ba, "ba")

    def _data_end(self, frames, plan: Plan, k: int) -> None:
        tx = frames[0]
        step = plan.steps[k]
        items = []
        records = {}
        for rx, p in zip(tx.rx, step.parts):
            m = self._decoded_prefix(rx, p, tx.start)
            if m <= 0:
                continue
            acked = _take(p.ranges, m)
            self._deliver(p, acked, self.sim.now)
            records[p.receiver] = acked
            items.append(p.receiver)
        if items:
            self._later(self.t.sifs, self._send_ba, plan, k, items, records)

    def _send_ba(self, plan: Plan, k: int, responders, records) -> None:
        i = plan.initiator
        full = (0, i.channel.tones)
        items = [(r, (i,), [self._rx(r, i, "ctrl", full)], full) for r in responders]
        for tx in self._send_group(items, "ba", self.t.ba, self._ba_end, plan, k, records):
            tx.nav_end = plan.t0 + plan.end

    def _ba_end(self, frames, plan: Plan, k: int, records) -> None:
        got = {tx.src: records[tx.src] for tx in frames if self._decoded(tx.rx[0])}
        if not got:
            return
        self._clear_timeout(plan)
        now = self.sim.now
        step = plan.steps[k]
        for p in step.parts:
            acked = got.get(p.receiver)
            self._settle(p, acked, now)
        plan.any_ack = any(got.values())
        self._next_step(plan, k)

    def _settle(self, p: Part, acked: Ranges | None, now: int) -> None:
        if acked:
            p.flow.on_acked(acked, now)
            missing = _take(p.ranges, -ranges_count(acked))
        else:
            missing = p.ranges
        if missing:
            p.flow.on_failed_ranges(missing)

    def _next_step(self, plan: Plan, k: int) -> None:
        if k + 1 < len(plan.steps):
            if plan.kind == "ul_mu":
                self._later(self.t.sifs, self._ul_trigger, plan, k + 1)
            else:
                self._later(self.t.sifs, self._data, plan, k + 1)
        else:
            plan.failed = not plan.any_ack
            self._finish(plan, self.sim.now)

    def _timeout(self, plan: Plan, reason: str) -> None:
        plan.timeout = None
        now = self.sim.now
        if reason == "cts":
            self._abort(plan, 0, failed=True)
            return
        k = self._current_step(plan, now)
        for p in plan.steps[k].parts:
            if p.receiver is plan.initiator:
                continue
            p.flow.on_failed_ranges(p.ranges)
        self._abort(plan, k + 1, failed=True)

    def _current_step(self, plan: Plan, now: int) -> int:
        k = 0
        for idx, st in enumerate(plan.steps):
            if plan.t0 + st.start <= now:
                k = idx
        return k

    def _abort(self, plan: Plan, from_step: int, failed: bool) -> None:
        for st in plan.steps[from_step:]:
            for p in st.parts:
                p.flow.on_returned(p.ranges)
        del plan.steps[from_step:]
        plan.failed = failed
        self._finish(plan, self.sim.now)

    # UL trigger-based exchange, per-frame
    def _ul_trigger(self, plan: Plan, k: int) -> None:
        i = plan.initiator
        targets = plan.alive if k else plan.responders
        nav_end = plan.t0 + plan.end
        self._send(i, targets, "trigger", plan.first, self._trigger_end, plan, k, nav_end=nav_end)
        step = plan.steps[k]
        self._set_timeout(plan, plan.first + self.t.sifs + self.t.slot + step.ppdu, "tb")

    def _trigger_end(self, frames, plan: Plan, k: int) -> None:
        now = self.sim.now
        tx = frames[0]
        responders = []
        for rx in tx.rx:
            r = rx.radio
            if self._decoded(rx) and (r.in_exchange or r.can_respond(now)):
                if not r.in_exchange:
                    r.in_exchange = True
                    self._mark(r, True, now)
                responders.append(r)
        step = plan.steps[k]
        parts = [p for p in step.parts if p.sender in responders]
        if parts:
            self._later(self.t.sifs, self._send_tb, plan, k, parts)

    def _send_tb(self, plan: Plan, k: int, parts) -> None:
        i = plan.initiator
        step = plan.steps[k]
        items = [(p.sender, (i,), [self._rx(p.sender, i, "data", p.band)], p.band) for p in parts]
        for tx in self._send_group(items, "tb", step.ppdu, self._tb_end, plan, k, parts):
            tx.nav_end = plan.t0 + plan.end

    def _tb_end(self, frames, plan: Plan, k: int, parts) -> None:
        self._clear_timeout(plan)
        records = {}
        for tx, p in zip(frames, parts):
            m = self._decoded_prefix(tx.rx[0], p, tx.start)
            if m > 0:
                acked = _take(p.ranges, m)
                self._deliver(p, acked, self.sim.now)
                records[p.sender] = acked
        step = plan.steps[k]
        sent = {p.sender for p in parts}
        for p in step.parts:
            if p.sender not in sent:
                p.flow.on_returned(p.ranges)
        step.parts = list(parts)
        if not records:
            now = self.sim.now
            for p in step.parts:
                p.flow.on_failed_ranges(p.ranges)
            step.parts = []
            self._abort(plan, k + 1, failed=True)
            return
        plan.alive = [p.sender for p in parts]
        self._later(self.t.sifs, self._send_mba, plan, k, records)

    def _send_mba(self, plan: Plan, k: int, records) -> None:
        i = plan.initiator
        dsts = list(records)
        dur = self.t.multi_ba(len(plan.responders))
        self._send(i, dsts, "mba", dur, self._mba_end, plan, k, records, nav_end=plan.t0 + plan.end)

    def _mba_end(self, frames, plan: Plan, k: int, records) -> None:
        tx = frames[0]
        now = self.sim.now
        heard = {rx.radio for rx in tx.rx if self._decoded(rx)}
        step = plan.steps[k]
        for p in step.parts:
            acked = records.get(p.sender) if p.sender in heard else None
            self._settle(p, acked, now)
        plan.any_ack = bool(records)
        self._next_step(plan, k)

    # -- run ------------------------------------------------------------------
    def run(self) -> RunResult:
        for dev in sorted(self.devices.values(), key=lambda d: d.address):
            for r in dev.radios.values():
                r.kick(0)
        events = self.sim.run_until(self.duration_ns)
        self._settle_open()
        window = (self.duration_ns - self.warmup_ns) / NS_PER_S
        thr = {k: v / window for k, v in self.sap_bits.items()}
        delays = [f.delays(self.warmup_ns) for f in self.flows]
        delays_ns = np.concatenate(delays) if delays else np.empty(0, dtype=np.int64)
        ledger = {"generated": 0, "acked": 0, "dropped_retry": 0, "dropped_lifetime": 0,
                  "dropped_overflow": 0, "in_flight": 0, "queued": 0}
        for f in self.flows:
            for key, val in f.ledger().items():
                ledger[key] += val
        released = skipped = 0
        for dev in self.devices.values():
            for buf in dev.reorder.values():
                released += buf.released
                skipped += buf.skipped
        nominal = sum(phy_rate(self.entry, RuAllocation.full_band(ch.spec.width_mhz), self.cfg.nss,
                               self.cfg.gi_ns) for ch in self.channels)
        return RunResult(self.cfg, dict(self.sap_bits), thr, delays_ns, ledger, released, skipped, events,
                         self.txops, self.fast_txops, self.failures, nominal, self.frames, self.navs,
                         self.sim.trace)


def _take(ranges: Ranges, m: int) -> Ranges:
    """First ``m`` MPDUs of ``ranges``; a negative ``m`` drops that many from the front instead."""
    out: Ranges = []
    if m < 0:
        skip = -m
        for a, b in ranges:
            if skip >= b - a:
                skip -= b - a
                continue
            out.append((a + skip, b))
            skip = 0
        return out
    for a, b in ranges:
        if m <= 0:
            break
        k = min(m, b - a)
        out.append((a, a + k))
        m -= k
    return out


def simulate(cfg: ScenarioConfig, **kwargs) -> RunResult:
    return Network(cfg, **kwargs).run()
