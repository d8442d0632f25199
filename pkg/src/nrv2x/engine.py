"""Slot-stepped system simulation.

Each absolute slot runs, in order: mobility, traffic generation, sync (every
160 ms), and on sidelink pool slots the MAC (PSFCH feedback, new packets,
re-evaluation and pre-emption checks, congestion control) followed by
reception.  Every transmission of a pool slot is fixed before any receiver
looks at that slot.

MAC arithmetic runs on pool-slot indices; trace rows carry both the absolute
slot and the pool slot.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as streams
from .channel import ChannelParams, LinkBank
from .config import SimConfig
from .congestion import CongestionTable, Knobs, enforce, n_proc_slots, rssi_threshold_dbm, sl_cbr
from .mac import (
    GrantState,
    HarqProcess,
    SelectionWindow,
    SensedEntry,
    Step1Params,
    Step1Result,
    default_rsrp_thresholds,
    on_tb_cycle_end,
    preempt_check,
    reevaluate,
    reselection_counter,
    step1_exclude,
    step2_select,
    t2_min_slots,
)
from .mac.harq import Feedback, harq_step, option1_should_nack, receiver_feedback
from .mac.selection import CHAIN_WINDOW
from .phy_frame import SlotResource, absolute_slot, pool_slot_index, psfch_slot_for, t_proc0, t_proc1, zone_id
from .power import Ema, PowerConfig, dl_pathloss_db, psfch_power_dbm, pssch_power_dbm, sssb_power_dbm
from .radio import MCS_SPECTRAL_EFFICIENCY, DecodeTables, FeedbackIntent, NoiseModel, db_to_mw, default_noise_figure
from .radio import decode_many, half_duplex_filter, mw_to_db
from .scenario import Fleet, RoadLayout, Vehicle, advance_mobility, displacement, drop_vehicles, highway_layout, urban_layout
from .sync import SyncCandidate, SyncState, derive_slss_id, select_reference, should_transmit_sssb
from .trace import RowBuffer, cbr_buffer, trace_buffer
from .traffic import PERIOD_MS, Packet, PacketSource

SYNC_PERIOD_MS = 160
LinkLossFn = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class Tb:
    tb_id: int
    ue: int
    packet: Packet
    gen_p: int
    deadline_p: int
    pdb_slots: int
    mcs: int
    l_pssch: int
    resources: list[SlotResource]
    proc: HarqProcess
    announced: set[int] = field(default_factory=set)
    final: bool = False  # last cycle of its grant: control messages carry RRI 0
    on_grant: bool = False
    next_idx: int = 0
    awaiting: int = 0  # PSFCH decisions still outstanding

    def pending(self) -> list[SlotResource]:
        return self.resources[self.next_idx:]


@dataclass
class UeState:
    grant: Optional[GrantState] = None
    tbs: list[int] = field(default_factory=list)
    tx_slots: list[int] = field(default_factory=list)
    tx_usage: list[tuple[int, int]] = field(default_factory=list)  # (pool slot, sub-channels)
    pl_sl: dict[int, Ema] = field(default_factory=dict)
    sync: Optional[SyncState] = None
    sync_root: object = None


class SciLog:
    """Every control message on air, with who decoded it and at what RSRP."""

    def __init__(self) -> None:
        self.slot: list[int] = []
        self.rec: list[tuple] = []  # (tx, sc_start, sc_len, rri, priority, reserved)
        self.decoded: list[np.ndarray] = []
        self.rsrp: list[np.ndarray] = []

    def add(self, slot: int, rec: tuple, decoded: np.ndarray, rsrp: np.ndarray) -> None:
        self.slot.append(slot)
        self.rec.append(rec)
        self.decoded.append(decoded)
        self.rsrp.append(rsrp)

    def trim(self, keep_from: int) -> None:
        i = bisect.bisect_left(self.slot, keep_from)
        if i > 0:
            del self.slot[:i], self.rec[:i], self.decoded[:i], self.rsrp[:i]

    def sensed(self, ue: int, lo: int, hi: int, reach_from: int) -> list[SensedEntry]:
        """Entries decoded by ``ue`` in [lo, hi] whose slot is at least ``reach_from``."""
        a = bisect.bisect_left(self.slot, max(lo, reach_from))
        b = bisect.bisect_right(self.slot, hi)
        out = []
        for i in range(a, b):
            if self.decoded[i][ue]:
                tx, start, length, rri, prio, reserved = self.rec[i]
                out.append(SensedEntry(self.slot[i], start, length, rri, prio, float(self.rsrp[i][ue]),
                                       reserved, tx))
        return out


@dataclass
class RunResult:
    trace: RowBuffer
    cbr: RowBuffer
    num_vehicles: int
    slots: int


def build_layout(cfg: SimConfig) -> RoadLayout:
    if cfg.scenario == "highway":
        return highway_layout(cfg.road.length_m, cfg.dropping.option, cfg.road.highway_speed_kmh, cfg.lane_width_m())
    return urban_layout(cfg.dropping.option, cfg.road.block_x_m, cfg.road.block_y_m, cfg.road.blocks_x,
                        cfg.road.blocks_y, cfg.lane_width_m())


class Engine:
    def __init__(self, cfg: SimConfig, vehicles: Optional[Sequence[Vehicle]] = None,
                 link_loss_db: Optional[LinkLossFn] = None) -> None:
        self.cfg = cfg
        self.pool = cfg.build_pool()
        self.num = self.pool.numerology
        self.mu = self.num.mu
        seed = cfg.seed
        self.layout = build_layout(cfg)
        if vehicles is None:
            vehicles = drop_vehicles(self.layout, cfg.dropping.option, streams.substream(seed, streams.DROPPING),
                                     cfg.dropping.num_vehicles)
        self.fleet = Fleet.from_vehicles(self.layout, list(vehicles))
        self.n = n = len(self.fleet)
        self.link_loss_db = link_loss_db
        self.rng_mob = streams.substream(seed, streams.MOBILITY)
        self.rng_ch = streams.substream(seed, streams.CHANNEL)
        self.rng_radio = streams.substream(seed, streams.RADIO)
        self.rng_sync = streams.substream(seed, streams.SYNC)
        self.rng_mac = [streams.substream(seed, streams.MAC, u) for u in range(n)]
        spm = self.num.slots_per_subframe
        self.sources = [PacketSource(u, cfg.traffic.model, streams.substream(seed, streams.TRAFFIC, u), spm)
                        for u in range(n)]
        self.bank = LinkBank(n, ChannelParams(cfg.scenario, cfg.carrier_ghz, cfg.channel.blocker_mode,
                                              decorrelation_m=cfg.decorrelation_m(),
                                              fading_margin_db=cfg.channel.fading_margin_db))
        nf = cfg.channel.noise_figure_db
        self.noise = NoiseModel(default_noise_figure(cfg.carrier_ghz) if nf is None else nf, self.num.scs_khz)
        self.noise_psd_mw = float(db_to_mw(self.noise.psd_dbm_per_prb()))
        ch = cfg.channel
        self.tables = DecodeTables.shannon(ch.implementation_margin_db, ch.sci_offset_db, ch.tb_thresholds_db,
                                           ch.decode_mode, ch.logistic_slope)
        self.power_cfg = PowerConfig(**{k: v for k, v in cfg.power.model_dump().items() if k != "max_psfch_tx"})

        m2 = cfg.mode2
        pool = self.pool
        self.L = pool.num_subchannels
        self.m_sub = pool.subchannel_size
        self.max_l = m2.max_l_pssch or self.L
        self.priority = cfg.priority()
        self.t1 = m2.t1_slots if m2.t1_slots is not None else t_proc1(self.mu)
        self.t3 = t_proc1(self.mu)
        self.tproc0 = t_proc0(self.mu)
        self.t0 = pool.ms_to_pool_slots(m2.sensing_window_ms)
        rri_ms = m2.rri_ms if m2.rri_ms is not None else int(PERIOD_MS.get(cfg.traffic.model, 0))
        self.rri_ms = rri_ms
        self.rri_slots = pool.ms_to_pool_slots(rri_ms)
        self.rri_list = tuple(sorted({pool.ms_to_pool_slots(r) for r in cfg.pool.rri_list_ms if r > 0}))
        self.thresholds = default_rsrp_thresholds(m2.rsrp_threshold_base_dbm, m2.rsrp_threshold_step_db)
        psfch = pool.psfch
        self.psfch_on = psfch.enabled
        self.t_gap = None
        if self.psfch_on:
            self.t_gap = m2.t_gap_slots or (psfch.min_gap + 1 + t_proc1(self.mu))
        self.feedback_on = m2.harq == "feedback" and cfg.traffic.cast != "broadcast"

        cg = cfg.congestion
        self.cong_table = CongestionTable(tuple(cg.cbr_upper), tuple(tuple(r) for r in cg.cr_limit))
        self.rssi_thr = rssi_threshold_dbm(cg.rssi_threshold_index)
        self.n_proc = n_proc_slots(self.mu, cg.processing_capability)
        self.cbr_w = cg.cbr_window_slots
        ring = self.cbr_w + self.n_proc + 1
        self.rssi_ring = np.full((ring, n, self.L), np.nan, dtype=np.float32)
        self.ring_slot = np.full(ring, -1, dtype=np.int64)

        self.slot_ms = self.num.slot_ms
        self.total_slots = int(round(cfg.duration_s * 1000.0 / self.slot_ms))
        self.warmup_slots = int(round(cfg.warmup_s * 1000.0 / self.slot_ms))
        self.sync_period = self.num.ms_to_slots(SYNC_PERIOD_MS)
        self.range_m = cfg.range_m()
        self.trace_d = cfg.engine.trace_max_distance_m

        self.trace = trace_buffer()
        self.cbr_rows = cbr_buffer()
        self.ues = [UeState() for _ in range(n)]
        self.tbs: dict[int, Tb] = {}
        self.sched: dict[int, set[int]] = {}
        self.checks: dict[int, list[tuple[str, int]]] = {}
        self.feedback: dict[int, list[dict]] = {}
        self.scilog = SciLog()
        self.last_loss = np.full((n, n), np.inf)
        self.next_packet_id = 0
        self.next_tb_id = 0
        self.waiting: list[Packet] = []
        self.x = np.zeros(n)
        self.y = np.zeros(n)
        self.workers = cfg.engine.workers
        self._executor: Optional[ThreadPoolExecutor] = None

    # ------------------------------------------------------------------ helpers

    def _abs(self, p: int) -> int:
        return absolute_slot(p, self.pool)

    def _pool_floor(self, t: int) -> int:
        """Index of the last pool slot at or before absolute slot ``t`` (-1 if none)."""
        lo, hi = -1, t + 1
        # Pool index never exceeds the absolute slot; binary search on absolute_slot.
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if self._abs(mid) <= t:
                lo = mid
            else:
                hi = mid
        return lo

    def _mcs_for(self, size_bytes: int, max_l: int) -> tuple[int, int]:
        bits = 8 * size_bytes
        for m in self.cfg.mode2.mcs_list:
            for l in range(1, max_l + 1):
                if self.pool.tb_capacity_bits(MCS_SPECTRAL_EFFICIENCY[m], l) >= bits:
                    return m, l
        return max(self.cfg.mode2.mcs_list), max_l

    def _fits(self, size_bytes: int, mcs: int, l: int) -> bool:
        return self.pool.tb_capacity_bits(MCS_SPECTRAL_EFFICIENCY[mcs], l) >= 8 * size_bytes

    def _l_for_mcs(self, size_bytes: int, mcs: int, max_l: int) -> Optional[int]:
        if mcs not in self.cfg.mode2.mcs_list:
            return None
        bits = 8 * size_bytes
        for l in range(1, max_l + 1):
            if self.pool.tb_capacity_bits(MCS_SPECTRAL_EFFICIENCY[mcs], l) >= bits:
                return l
        return None

    def _dist(self, u: int) -> np.ndarray:
        dx, dy = displacement(self.layout, self.x[u], self.y[u], self.x, self.y)
        return np.hypot(dx, dy)

    def _gnb_pathloss(self, u: int) -> Optional[float]:
        anchors = self.cfg.sync.gnb_positions
        if not anchors:
            return None
        d = min(float(np.hypot(*displacement(self.layout, ax, ay, self.x[u], self.y[u]))) for ax, ay in anchors)
        return dl_pathloss_db(d, self.cfg.carrier_ghz)

    def _in_coverage(self, u: int) -> tuple[bool, Optional[float]]:
        pl = self._gnb_pathloss(u)
        if pl is None:
            return False, None
        return self.cfg.sync.gnb_power_dbm - pl >= self.cfg.sync.coverage_rsrp_dbm, pl

    def _sched_set(self, tb: Tb, old: Sequence[SlotResource], new: Sequence[SlotResource]) -> None:
        for r in old:
            s = self.sched.get(r.slot)
            if s is not None:
                s.discard(tb.tb_id)
        for r in new:
            self.sched.setdefault(r.slot, set()).add(tb.tb_id)

    def _busy_slots(self, u: int) -> set[int]:
        out = set()
        for tid in self.ues[u].tbs:
            out.update(r.slot for r in self.tbs[tid].pending())
        return out

    # ------------------------------------------------------------------ sensing & selection

    def _step1(self, u: int, window: SelectionWindow, priority: int, rri_tx: int, counter: int) -> Step1Result:
        n = window.n
        lo, hi = n - self.t0, n - self.tproc0
        max_rri = max(self.rri_list + (self.rri_slots, 1))
        reach_from = window.first_slot - (CHAIN_WINDOW + window.t2 + max_rri)
        sensed = self.scilog.sensed(u, lo, hi, reach_from)
        ue = self.ues[u]
        i = bisect.bisect_left(ue.tx_slots, lo)
        j = bisect.bisect_right(ue.tx_slots, hi)
        own = ue.tx_slots[i:j]
        params = Step1Params(priority, self.rri_list, self.thresholds, self.cfg.mode2.x_percent, rri_tx, counter)
        return step1_exclude(window, sensed, own, params)

    def _t2(self, p: int, deadline_p: int, priority: int) -> int:
        t2 = deadline_p - p
        if self.cfg.mode2.t2_policy == "t2min":
            t2min = self.pool.ms_to_pool_slots(t2_min_slots(priority, self.mu) * self.slot_ms)
            t2 = min(t2, max(t2min, self.t1))
        return t2

    def _select(self, u: int, p: int, deadline_p: int, priority: int, l: int, rri_tx: int,
                counter: int) -> tuple[list[SlotResource], Optional[Step1Result]]:
        t2 = self._t2(p, deadline_p, priority)
        if t2 < self.t1:
            return [], None
        window = SelectionWindow(p, self.t1, t2, self.L, l)
        res = self._step1(u, window, priority, rri_tx, counter)
        busy = self._busy_slots(u)
        cands = [c for c in res.candidates() if c.slot not in busy]
        k = min(self.cfg.mode2.n_tx, len(cands))
        picks = step2_select(cands, k, self.rng_mac[u], t_gap=self.t_gap)
        return picks, res

    # ------------------------------------------------------------------ traffic

    def _new_packet(self, u: int, gen_slot: int, size: int, pdb_ms: float) -> Packet:
        cfg = self.cfg
        cast = cfg.traffic.cast
        members: tuple[int, ...] = ()
        if cast != "broadcast":
            d = self._dist(u)
            d[u] = np.inf
            k = 1 if cast == "unicast" else cfg.traffic.group_size
            order = np.argsort(d, kind="stable")[: min(k, self.n - 1)]
            members = tuple(int(v) for v in order)
        pkt = Packet(self.next_packet_id, u, gen_slot, size, pdb_ms, self.priority, cast, members,
                     cfg.traffic.feedback_option if cast == "groupcast" else None, self.range_m)
        self.next_packet_id += 1
        pdb_slots = self.num.ms_to_slots(pdb_ms)
        info = f"cast={cast};prio={pkt.priority};flow={pkt.flow}"
        if members:
            info += ";members=" + "|".join(map(str, members))
        self.trace.add(slot=gen_slot, event="gen", tx_id=u, packet_id=pkt.packet_id, gen_slot=gen_slot,
                       pdb_slots=pdb_slots, size_bytes=size, info=info)
        return pkt

    def _drop_unsent(self, t: int, p: int, pkt: Packet, reason: str) -> None:
        u = pkt.source
        pdb_slots = self.num.ms_to_slots(pkt.pdb_ms)
        self.trace.add(slot=t, event="drop", tx_id=u, packet_id=pkt.packet_id, attempt=0, pool_slot=p,
                       gen_slot=pkt.gen_slot, pdb_slots=pdb_slots, size_bytes=pkt.size_bytes, info=reason)
        self._rx_rows_unsent(t, p, pkt, 0, pdb_slots, "not_sent")

    def _rx_rows_unsent(self, t: int, p: int, pkt: Packet, attempt: int, pdb_slots: int, info: str) -> None:
        u = pkt.source
        d = self._dist(u)
        members = set(pkt.members)
        for v in self._rx_set(u, d, members):
            self.trace.add(slot=t, event="rx", tx_id=u, rx_id=v, packet_id=pkt.packet_id, attempt=attempt,
                           pool_slot=p, distance_m=float(d[v]), sci_ok=False, tb_ok=False,
                           intended=self._intended(pkt, v, d[v], members), gen_slot=pkt.gen_slot,
                           pdb_slots=pdb_slots, size_bytes=pkt.size_bytes, info=info)

    def _rx_set(self, u: int, d: np.ndarray, members: set[int]) -> list[int]:
        near = (d <= self.trace_d)
        near[u] = False
        idx = set(np.flatnonzero(near).tolist()) | members
        return sorted(idx)

    def _intended(self, pkt: Packet, v: int, dist: float, members: set[int]) -> bool:
        if pkt.cast == "broadcast":
            return bool(dist <= self.range_m)
        return v in members

    # ------------------------------------------------------------------ MAC per packet

    def _on_packet(self, t: int, p: int, pkt: Packet) -> None:
        u = pkt.source
        ue = self.ues[u]
        rng = self.rng_mac[u]
        pdb_slots = self.num.ms_to_slots(pkt.pdb_ms)
        deadline_p = self._pool_floor(pkt.gen_slot + pdb_slots - 1)
        mcs, l = self._mcs_for(pkt.size_bytes, self.max_l)
        g = ue.grant
        resources: list[SlotResource] = []
        announced: set[int] = set()
        final = False
        on_grant = False
        if g is not None:
            reason = None
            if g.resources[0].slot <= p:
                reason = "unused"
            elif g.resources[-1].slot > deadline_p:
                reason = "latency"
            elif not self._fits(pkt.size_bytes, self._mcs_for(pkt.size_bytes, g.l_pssch)[0], g.l_pssch):
                # A larger TB first tries a higher MCS inside the reserved sub-channels.
                reason = "size"
            if reason is None:
                decision = on_tb_cycle_end(g, rng)
                resources = list(g.resources)
                announced = {r.slot for r in resources}
                l = g.l_pssch
                mcs = self._mcs_for(pkt.size_bytes, l)[0]
                on_grant = True
                if decision == "reselect":
                    final = True
                    ue.grant = None
                else:
                    if decision == "keep":
                        self.trace.add(slot=t, event="keep", tx_id=u, packet_id=pkt.packet_id, pool_slot=p,
                                       info=f"counter={g.counter}")
                    g.advance_cycle()
            else:
                self.trace.add(slot=t, event="reselect", tx_id=u, packet_id=pkt.packet_id, pool_slot=p,
                               info=f"reason={reason}")
                ue.grant = None
        if not resources:
            rri_tx = self.rri_slots if self.rri_ms > 0 else 0
            counter = reselection_counter(self.rri_ms, rng) if rri_tx else 0
            picks, res = self._select(u, p, deadline_p, pkt.priority, l, rri_tx, counter)
            if not picks:
                self._drop_unsent(t, p, pkt, "no_window" if res is None else "no_candidates")
                return
            resources = picks
            info = (f"rri={self.rri_ms};counter={counter};iter={res.iterations};avail={res.count}/{res.window.total};"
                    "res=" + "|".join(f"{r.slot}:{r.sc_start}:{r.sc_len}" for r in picks))
            self.trace.add(slot=t, event="select", tx_id=u, packet_id=pkt.packet_id, pool_slot=p, mcs=mcs,
                           sc_len=l, info=info)
            if rri_tx:
                g = GrantState(list(picks), float(self.rri_ms), rri_tx, counter, self.cfg.mode2.keep_probability,
                               pkt.priority, l, mcs)
                decision = on_tb_cycle_end(g, rng)
                on_grant = True
                if decision == "reselect":
                    final = True
                else:
                    g.advance_cycle()
                    ue.grant = g
        feedback = self.feedback_on
        proc = HarqProcess(pkt.packet_id, pkt.cast, len(resources), pkt.members, pkt.feedback_option, feedback)
        tb = Tb(self.next_tb_id, u, pkt, p, deadline_p, pdb_slots, mcs, l, resources, proc, announced, final, on_grant)
        self.next_tb_id += 1
        self.tbs[tb.tb_id] = tb
        ue.tbs.append(tb.tb_id)
        self._sched_set(tb, (), resources)
        self._plan_checks(tb, p)

    def _plan_checks(self, tb: Tb, p: int) -> None:
        mode = self.cfg.mode2.reevaluation
        for r in tb.pending():
            at = r.slot - self.t3
            if at <= p:
                continue
            if r.slot in tb.announced:
                if self.cfg.mode2.preemption:
                    self.checks.setdefault(at, []).append(("preempt", tb.tb_id))
            elif mode == "once":
                self.checks.setdefault(at, []).append(("reeval", tb.tb_id))
            elif mode == "every_slot":
                for s in range(p + 1, at + 1):
                    self.checks.setdefault(s, []).append(("reeval", tb.tb_id))

    def _run_check(self, t: int, p: int, kind: str, tb_id: int) -> None:
        tb = self.tbs.get(tb_id)
        if tb is None:
            return
        pending = tb.pending()
        if not pending:
            return
        t2 = tb.deadline_p - p
        if t2 < self.t1:
            return
        u = tb.ue
        every = kind == "reeval" and self.cfg.mode2.reevaluation == "every_slot"

        def due(r: SlotResource) -> bool:
            if (r.slot in tb.announced) != (kind == "preempt"):
                return False
            return r.slot - self.t3 >= p if every else r.slot - self.t3 == p

        frozen = [i for i, r in enumerate(pending) if not due(r)]
        if len(frozen) == len(pending):
            return
        g = self.ues[u].grant if tb.on_grant and not tb.final else None
        rri_tx = self.rri_slots if g is not None else 0
        counter = g.counter if g is not None else 0
        window = SelectionWindow(p, self.t1, t2, self.L, tb.l_pssch)
        fresh = self._step1(u, window, tb.packet.priority, rri_tx, counter)
        rng = self.rng_mac[u]
        if kind == "reeval":
            new, replaced = reevaluate(pending, fresh, rng, self.t_gap, frozen)
        else:
            new, replaced = preempt_check(pending, tb.packet.priority, fresh, rng,
                                          self.cfg.mode2.preemption_priority_threshold, self.t_gap, frozen)
        if not replaced:
            return
        old = pending
        tb.resources = tb.resources[:tb.next_idx] + new
        tb.proc.n_resources = len(tb.resources)
        self._sched_set(tb, old, new)
        if g is not None:
            g.resources = [SlotResource(r.slot + g.rri_slots, r.sc_start, r.sc_len) for r in tb.resources]
        self.trace.add(slot=t, event=kind, tx_id=u, packet_id=tb.packet.packet_id, pool_slot=p,
                       info="old=" + "|".join(str(old[i].slot) for i in replaced)
                       + ";res=" + "|".join(f"{r.slot}:{r.sc_start}:{r.sc_len}" for r in new))
        self._plan_checks(tb, p)

    def _finish(self, tb: Tb, t: int, p: int, outcome: str) -> None:
        left = tb.pending()
        if outcome in ("done", "drop") and tb.proc.feedback:
            self.trace.add(slot=t, event=f"harq_{outcome}", tx_id=tb.ue, packet_id=tb.packet.packet_id,
                           attempt=tb.proc.attempts, pool_slot=p, info=f"released={len(left)}")
        self._sched_set(tb, left, ())
        tb.resources = tb.resources[:tb.next_idx]
        tb.proc.finished = outcome
        self.ues[tb.ue].tbs.remove(tb.tb_id)
        del self.tbs[tb.tb_id]

    # ------------------------------------------------------------------ congestion

    def _cbr(self, u: int, q: int) -> float:
        rows = (self.ring_slot > q - self.cbr_w) & (self.ring_slot <= q) & (self.ring_slot >= 0)
        if not rows.any():
            return 0.0
        return sl_cbr(self.rssi_ring[rows, u, :], self.rssi_thr)

    def _cr_used(self, u: int, p: int) -> int:
        a = self.cfg.congestion.cr_a
        return sum(n for s, n in self.ues[u].tx_usage if p - a <= s <= p - 1)

    def _enforce(self, t: int, p: int, tb: Tb) -> Knobs:
        cg = self.cfg.congestion
        u = tb.ue
        cbr = self._cbr(u, p - self.n_proc)
        used = self._cr_used(u, p)
        pending = tb.pending()
        b = cg.cr_b

        def future(k: Knobs) -> float:
            inside = [r for r in pending[: k.n_max] if r.slot <= p + b]
            return float(k.l_pssch * len(inside))

        knobs = Knobs(tb.mcs, tb.l_pssch, min(self.max_l, tb.l_pssch), len(pending), 0.0)
        size = tb.packet.size_bytes
        res = enforce(used, cbr, tb.packet.priority, self.cong_table, knobs, self.L, cg.cr_a + cg.cr_b + 1,
                      future, lambda m: self._l_for_mcs(size, m, knobs.max_l_pssch),
                      max(self.cfg.mode2.mcs_list), cg.power_step_db)
        if res.action != "none" or res.cr_before > 0:
            self.cbr_rows.add(slot=t, ue=u, cbr=cbr, cr=res.cr_before, cr_projected=res.cr_after,
                              limit=res.limit, action=res.action)
        return res.knobs

    # ------------------------------------------------------------------ sync

    def _sync_step(self, t: int) -> None:
        """Re-evaluate every UE's reference, one UE after another.

        Each UE sees the states already updated in this pass, so a chain of
        SyncRef UEs settles on one timing instead of swapping references.
        """
        sc = self.cfg.sync
        sssb_rx: dict[int, np.ndarray] = {}

        def heard_from(v: int) -> np.ndarray:
            if v not in sssb_rx:
                cov, pl = self._in_coverage(v)
                p_tx = sssb_power_dbm(self.power_cfg, self.mu, pl, cov)
                # S-SSB spans 11 RBs; RSRP is per PRB.
                sssb_rx[v] = p_tx - 10.0 * math.log10(11) - self._loss_row(v)
            return sssb_rx[v]

        for u in range(self.n):
            cands = []
            if sc.gnss_available:
                cands.append(SyncCandidate("gnss", 0.0))
            cov, pl = self._in_coverage(u)
            if cov:
                cands.append(SyncCandidate("gnb", sc.gnb_power_dbm - pl))
            for v in range(self.n):
                other = self.ues[v].sync
                if v != u and other is not None and other.is_syncref:
                    cands.append(SyncCandidate("syncref", float(heard_from(v)[u]), other.slss_id, other.i_ic, v))
            st = select_reference(cands, sc.syncref_rsrp_threshold_dbm, sc.mode, sc.disable_levels_4_to_6)
            old = self.ues[u].sync
            if st.kind == "internal_clock" and old is not None and old.kind == "internal_clock":
                slss, iic = old.slss_id, old.i_ic
            else:
                slss, iic = derive_slss_id(st, self.rng_sync, sc.network_id)
            sends = should_transmit_sssb(sc.network_sssb, True, st.ref_rsrp_dbm, sc.sssb_rsrp_threshold_dbm,
                                         st.kind)
            st = replace(st, slss_id=slss, i_ic=iic, is_syncref=sends)
            if st.kind in ("gnss", "gnb"):
                root = st.kind
            elif st.kind == "internal_clock":
                keep = old is not None and old.kind == "internal_clock"
                root = self.ues[u].sync_root if keep else f"ue{u}"
            else:
                root = self.ues[st.ref_ue].sync_root
            self.ues[u].sync = st
            self.ues[u].sync_root = root
            self.trace.add(slot=t, event="sync", tx_id=u,
                           info=f"ref={st.kind};level={st.level};slss={slss};i_ic={iic};syncref={int(sends)}"
                           + (f";ref_ue={st.ref_ue}" if st.ref_ue is not None else ""))

    # ------------------------------------------------------------------ channel & reception

    def _loss_row(self, u: int) -> np.ndarray:
        if self.link_loss_db is not None:
            d = self._dist(u)
            loss = np.asarray(self.link_loss_db(u, d), dtype=float).copy()
            loss[u] = np.inf
        else:
            loss = self.bank.realize_row(u, self.fleet, self.layout, self.rng_ch, self.x, self.y)[0]
        self.last_loss[u] = loss
        return loss

    def _decode_block(self, cols: np.ndarray, psd_mw: np.ndarray, occ: np.ndarray, starts: np.ndarray,
                      lens: np.ndarray, mcs: np.ndarray, u_sci: Optional[np.ndarray],
                      u_tb: Optional[np.ndarray]) -> tuple[np.ndarray, ...]:
        """SINR and decode flags for the receiver columns ``cols``."""
        k = psd_mw.shape[0]
        sig = psd_mw[:, cols]
        i_tb = np.zeros_like(sig)
        i_sci = np.zeros_like(sig)
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                ov = int(np.count_nonzero(occ[i] & occ[j]))
                if ov:
                    i_tb[i] += ov * sig[j]
                if occ[j, starts[i]]:
                    i_sci[i] += sig[j]
        sinr_tb = mw_to_db(sig * lens[:, None] / (self.noise_psd_mw * lens[:, None] + i_tb))
        sinr_sci = mw_to_db(sig / (self.noise_psd_mw + i_sci))
        sci = np.zeros(sig.shape, dtype=bool)
        tb = np.zeros(sig.shape, dtype=bool)
        for i in range(k):
            sci[i] = decode_many("sci", sinr_sci[i], 0, self.tables, None if u_sci is None else u_sci[i, cols])
            tb[i] = sci[i] & decode_many("tb", sinr_tb[i], int(mcs[i]), self.tables,
                                         None if u_tb is None else u_tb[i, cols])
        rssi = np.empty((len(cols), self.L))
        for c in range(self.L):
            tot = np.full(len(cols), self.noise_psd_mw)
            for j in range(k):
                if occ[j, c]:
                    tot = tot + sig[j]
            rssi[:, c] = mw_to_db(tot * self.m_sub)
        return sinr_tb, sinr_sci, sci, tb, rssi

    def _receive(self, t: int, p: int, txs: list[dict]) -> None:
        n, k = self.n, len(txs)
        txing = np.zeros(n, dtype=bool)
        for tx in txs:
            txing[tx["ue"]] = True
        ring_i = p % len(self.ring_slot)
        self.ring_slot[ring_i] = p
        if k == 0:
            self.rssi_ring[ring_i] = mw_to_db(self.noise_psd_mw * self.m_sub)
            return
        psd_dbm = np.empty((k, n))
        occ = np.zeros((k, self.L), dtype=bool)
        starts = np.zeros(k, dtype=int)
        lens = np.zeros(k, dtype=int)
        mcs = np.zeros(k, dtype=int)
        dists = np.empty((k, n))
        for i, tx in enumerate(txs):
            loss = self._loss_row(tx["ue"])
            psd_dbm[i] = tx["power"] - 10.0 * math.log10(tx["l"] * self.m_sub) - loss
            occ[i, tx["start"]:tx["start"] + tx["l"]] = True
            starts[i], lens[i], mcs[i] = tx["start"], tx["l"], tx["mcs"]
            dists[i] = self._dist(tx["ue"])
        psd_mw = db_to_mw(psd_dbm)
        u_sci = u_tb = None
        if self.tables.mode == "logistic":
            u_sci = self.rng_radio.random((k, n))
            u_tb = self.rng_radio.random((k, n))
        cols = np.arange(n)
        if self.workers > 1 and n > 1:
            chunks = np.array_split(cols, min(self.workers, n))
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=self.workers)
            parts = list(self._executor.map(
                lambda c: self._decode_block(c, psd_mw, occ, starts, lens, mcs, u_sci, u_tb), chunks))
            sinr_tb, sinr_sci, sci, tbok = (np.concatenate([pt[i] for pt in parts], axis=1) for i in range(4))
            rssi = np.concatenate([pt[4] for pt in parts], axis=0)
        else:
            sinr_tb, sinr_sci, sci, tbok, rssi = self._decode_block(cols, psd_mw, occ, starts, lens, mcs, u_sci, u_tb)
        # Half-duplex: a transmitting UE hears nothing in this slot.
        sci[:, txing] = False
        tbok[:, txing] = False
        if self.cfg.sync.mode != "disabled" and self.cfg.sync.require_common_reference:
            roots = [ue.sync_root for ue in self.ues]
            for i, tx in enumerate(txs):
                same = np.array([r == roots[tx["ue"]] for r in roots])
                sci[i] &= same
                tbok[i] &= same
        rssi[txing] = np.nan
        self.rssi_ring[ring_i] = rssi
        for i, tx in enumerate(txs):
            self._after_tx(t, p, tx, sci[i], tbok[i], sinr_tb[i], psd_dbm[i], dists[i], txing)

    def _after_tx(self, t: int, p: int, tx: dict, sci: np.ndarray, tbok: np.ndarray, sinr: np.ndarray,
                  rsrp: np.ndarray, d: np.ndarray, txing: np.ndarray) -> None:
        tb: Tb = tx["tb"]
        u = tb.ue
        pkt = tb.packet
        res = tx["res"]
        rri = 0 if (tb.final or not tb.on_grant) else self.rri_slots
        reserved = []
        for r in tb.resources[tb.next_idx + 1: tb.next_idx + self.cfg.pool.max_n_sci]:
            off = r.slot - res.slot
            if off < CHAIN_WINDOW:
                reserved.append((off, r.sc_start, r.sc_len))
                tb.announced.add(r.slot)
        self.scilog.add(p, (u, tx["start"], tx["l"], rri, pkt.priority, tuple(reserved)), sci.copy(),
                        rsrp.astype(np.float32))
        members = set(pkt.members)
        attempt = tb.proc.attempts
        for v in self._rx_set(u, d, members):
            hd = bool(txing[v])
            self.trace.add(slot=t, event="rx", tx_id=u, rx_id=v, packet_id=pkt.packet_id, attempt=attempt,
                           pool_slot=p, sc_start=tx["start"], sc_len=tx["l"], mcs=tx["mcs"],
                           distance_m=float(d[v]), sinr_db=None if hd else float(sinr[v]),
                           rsrp_dbm=None if hd else float(rsrp[v]), sci_ok=bool(sci[v]), tb_ok=bool(tbok[v]),
                           intended=self._intended(pkt, v, d[v], members), gen_slot=pkt.gen_slot,
                           pdb_slots=tb.pdb_slots, size_bytes=pkt.size_bytes, info="half_duplex" if hd else None)
        for v in members:
            if tbok[v] and pkt.cast == "unicast":
                ema = self.ues[u].pl_sl.setdefault(v, Ema(self.power_cfg.rsrp_ema_coeff))
                ema.update(tx["power"] - 10.0 * math.log10(tx["l"] * self.m_sub) - float(rsrp[v]))
        if tb.proc.feedback:
            self._plan_feedback(t, p, tb, sci, tbok, d)
        else:
            self._progress(tb, t, p, [])

    def _plan_feedback(self, t: int, p: int, tb: Tb, sci: np.ndarray, tbok: np.ndarray, d: np.ndarray) -> None:
        pkt = tb.packet
        f = psfch_slot_for(p, self.pool)
        side = self.cfg.traffic.zone_side_m
        zid = zone_id(float(self.x[tb.ue]), float(self.y[tb.ue]), side)
        replies = []
        for v in pkt.members:
            in_range = True
            if pkt.cast == "groupcast" and pkt.feedback_option == 1:
                in_range = option1_should_nack(bool(sci[v]), bool(tbok[v]), zid, pkt.range_m,
                                               float(self.x[v]), float(self.y[v]), side)
            kind = receiver_feedback(pkt.cast, pkt.feedback_option, bool(sci[v]), bool(tbok[v]), in_range)
            if kind is not None:
                replies.append((v, kind))
        tb.awaiting += 1
        self.feedback.setdefault(f, []).append({"tb": tb.tb_id, "replies": replies, "attempt": tb.proc.attempts})
        self._advance(tb)

    def _advance(self, tb: Tb) -> None:
        tb.next_idx += 1

    def _progress(self, tb: Tb, t: int, p: int, heard: list[Feedback]) -> None:
        self._advance(tb)
        decision = harq_step(tb.proc, heard)
        if decision != "retransmit" or not tb.pending():
            self._finish(tb, t, p, "done" if decision == "retransmit" else decision)

    def _deliver_feedback(self, t: int, p: int) -> None:
        items = self.feedback.pop(p, [])
        if not items:
            return
        sends, hears = [], []
        for it in items:
            tb = self.tbs.get(it["tb"])
            if tb is None:
                continue
            for v, kind in it["replies"]:
                sends.append(FeedbackIntent(v, tb.packet.priority, (it["tb"], v, kind)))
            hears.append(FeedbackIntent(tb.ue, tb.packet.priority, (it["tb"],)))
        dec = half_duplex_filter(range(self.n), (), sends, hears, self.cfg.power.max_psfch_tx)
        sent = {}
        for v, lst in dec.psfch_tx.items():
            cov, pl = self._in_coverage(v)
            pw = psfch_power_dbm(self.power_cfg, self.mu, pl, cov, len(lst))
            for it in lst:
                sent[it.key] = pw
        listening = {it.key[0] for lst in dec.psfch_rx.values() for it in lst}
        noise_1prb = self.noise.psd_dbm_per_prb()
        thr = self.tables.threshold("sci")
        for it in items:
            tb = self.tbs.get(it["tb"])
            if tb is None:
                continue
            heard = []
            if it["tb"] in listening:
                for v, kind in it["replies"]:
                    pw = sent.get((it["tb"], v, kind))
                    if pw is None:
                        continue
                    # Reciprocal link: reuse the loss realised for the data transmission.
                    if pw - self.last_loss[tb.ue, v] - noise_1prb >= thr:
                        heard.append(Feedback(v, kind))
            tb.awaiting -= 1
            decision = harq_step(tb.proc, heard)
            if decision != "retransmit" or not tb.pending():
                self._finish(tb, t, p, decision if decision != "retransmit" else "drop")

    # ------------------------------------------------------------------ transmissions

    def _transmissions(self, t: int, p: int) -> list[dict]:
        ids = sorted(self.sched.pop(p, ()), key=lambda i: (self.tbs[i].ue, i))
        txs = []
        for tid in ids:
            tb = self.tbs[tid]
            pending = tb.pending()
            if not pending or pending[0].slot != p:
                continue
            res = pending[0]
            knobs = self._enforce(t, p, tb)
            tb.proc.attempts += 1
            u = tb.ue
            if knobs.n_max < len(pending):
                cut = pending[knobs.n_max:]
                self._sched_set(tb, cut, ())
                tb.resources = tb.resources[: tb.next_idx + knobs.n_max]
                tb.proc.n_resources = len(tb.resources)
            if knobs.dropped:
                self.trace.add(slot=t, event="cr_drop", tx_id=u, packet_id=tb.packet.packet_id,
                               attempt=tb.proc.attempts, pool_slot=p)
                self._rx_rows_unsent(t, p, tb.packet, tb.proc.attempts, tb.pdb_slots, "cr_drop")
                self._advance(tb)
                if not tb.pending():
                    self._finish(tb, t, p, "drop")
                continue
            if (knobs.mcs, knobs.l_pssch) != (tb.mcs, tb.l_pssch):
                self.trace.add(slot=t, event="cr_adjust", tx_id=u, packet_id=tb.packet.packet_id,
                               attempt=tb.proc.attempts, pool_slot=p, mcs=knobs.mcs, sc_len=knobs.l_pssch)
            l = knobs.l_pssch
            pl_dl = self._gnb_pathloss(u)
            pl_sl = None
            if tb.packet.cast == "unicast" and tb.packet.members:
                ema = self.ues[u].pl_sl.get(tb.packet.members[0])
                pl_sl = ema.value if ema is not None else None
            power = pssch_power_dbm(self.power_cfg, self.mu, l * self.m_sub, pl_dl, pl_sl)
            self.trace.add(slot=t, event="tx", tx_id=u, packet_id=tb.packet.packet_id, attempt=tb.proc.attempts,
                           pool_slot=p, sc_start=res.sc_start, sc_len=l, mcs=knobs.mcs, tx_power_dbm=power,
                           gen_slot=tb.packet.gen_slot, pdb_slots=tb.pdb_slots, size_bytes=tb.packet.size_bytes)
            ue = self.ues[u]
            ue.tx_slots.append(p)
            ue.tx_usage.append((p, l))
            txs.append({"ue": u, "tb": tb, "res": res, "start": res.sc_start, "l": l, "mcs": knobs.mcs,
                        "power": power})
        return txs

    def _trim(self, p: int) -> None:
        keep = p - self.t0 - 1
        self.scilog.trim(keep)
        a = self.cfg.congestion.cr_a
        for ue in self.ues:
            if ue.tx_slots and ue.tx_slots[0] < keep:
                i = bisect.bisect_left(ue.tx_slots, keep)
                del ue.tx_slots[:i]
            if ue.tx_usage and ue.tx_usage[0][0] < p - a - 1:
                ue.tx_usage = [x for x in ue.tx_usage if x[0] >= p - a - 1]

    def _sample_cbr(self, t: int, p: int) -> None:
        cg = self.cfg.congestion
        denom = self.L * (cg.cr_a + cg.cr_b + 1)
        for u in range(self.n):
            self.cbr_rows.add(slot=t, ue=u, cbr=self._cbr(u, p), cr=self._cr_used(u, p + 1) / denom,
                              action="sample")

    # ------------------------------------------------------------------ main loop

    def run(self) -> RunResult:
        try:
            return self._run()
        finally:
            if self._executor is not None:
                self._executor.shutdown()
                self._executor = None

    def _run(self) -> RunResult:
        dt = self.slot_ms / 1000.0
        sync_on = self.cfg.sync.mode != "disabled"
        sample_every = self.cfg.congestion.sample_every_slots
        next_gen = np.array([src.next_slot for src in self.sources], dtype=np.int64)
        for t in range(self.total_slots):
            if t > 0:
                self.fleet = advance_mobility(self.fleet, self.layout, dt, self.rng_mob)
            self.x, self.y = self.fleet.positions(self.layout)
            for u in np.flatnonzero(next_gen <= t).tolist():
                src = self.sources[u]
                while src.next_slot <= t:
                    gen, size, pdb = src.pop()
                    self.waiting.append(self._new_packet(u, t, size, pdb))
                next_gen[u] = src.next_slot
            if sync_on and t % self.sync_period == 0:
                self._sync_step(t)
            p = pool_slot_index(t, self.pool)
            if p is None:
                continue
            waiting, self.waiting = self.waiting, []
            for pkt in waiting:
                self._on_packet(t, p, pkt)
            for kind, tid in sorted(set(self.checks.pop(p, []))):
                self._run_check(t, p, kind, tid)
            txs = self._transmissions(t, p)
            self._receive(t, p, txs)
            self._deliver_feedback(t, p)
            if p % sample_every == 0:
                self._sample_cbr(t, p)
            if p % 1000 == 0:
                self._trim(p)
        return RunResult(self.trace, self.cbr_rows, self.n, self.total_slots)


def run(cfg: SimConfig, vehicles: Optional[Sequence[Vehicle]] = None,
        link_loss_db: Optional[LinkLossFn] = None) -> RunResult:
    return Engine(cfg, vehicles, link_loss_db).run()
