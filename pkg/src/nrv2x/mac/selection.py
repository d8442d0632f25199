"""Sensing-based candidate exclusion and random resource selection.

All times here are pool-slot indices; RRIs and window edges are given in
slots by the caller.  Priorities run 1..8 with 1 the highest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..phy_frame import SlotResource

CHAIN_WINDOW = 32  # a reservation reaches at most 31 slots ahead
X_PERCENT_VALUES = (20, 35, 50)
T2MIN_BASE = (1, 5, 10, 20)
NO_PRIORITY = 9  # marks "no sensed reservation" in blocking-priority grids


def reselection_counter(rri_ms: float, rng: np.random.Generator) -> int:
    if rri_ms <= 0:
        raise ValueError("the dynamic scheme (RRI 0) has no reselection counter")
    c = 1 if rri_ms >= 100 else 100 // max(20, int(rri_ms))
    return int(rng.integers(5 * c, 15 * c + 1))


def t2_min_slots(priority: int, mu: int) -> int:
    """Lower bound of T2; priorities 1-2, 3-4, 5-6 and 7-8 map to 1, 5, 10 and 20 ms."""
    return T2MIN_BASE[(priority - 1) // 2] * 2**mu


def default_rsrp_thresholds(base_dbm: float = -100.0, step_db: float = 2.0) -> np.ndarray:
    """9x9 table indexed [own priority][sensed priority], row/column 0 unused.

    Higher-priority sensed traffic (smaller number) gets a lower threshold, so
    it is protected more; higher own priority raises the threshold.
    """
    t = np.zeros((9, 9))
    for own in range(1, 9):
        for other in range(1, 9):
            t[own, other] = base_dbm + step_db * (other - own)
    return t


@dataclass(frozen=True)
class SelectionWindow:
    n: int
    t1: int
    t2: int
    num_subchannels: int
    l_pssch: int

    def __post_init__(self) -> None:
        if self.t2 < self.t1:
            raise ValueError(f"empty selection window: T2={self.t2} < T1={self.t1}")
        if not 1 <= self.l_pssch <= self.num_subchannels:
            raise ValueError(f"L_PSSCH={self.l_pssch} does not fit {self.num_subchannels} sub-channels")

    @property
    def first_slot(self) -> int:
        return self.n + self.t1

    @property
    def num_slots(self) -> int:
        return self.t2 - self.t1 + 1

    @property
    def num_starts(self) -> int:
        return self.num_subchannels - self.l_pssch + 1

    @property
    def total(self) -> int:
        return self.num_slots * self.num_starts

    def contains(self, r: SlotResource) -> bool:
        return (self.first_slot <= r.slot <= self.n + self.t2 and r.sc_len == self.l_pssch
                and r.sc_stop <= self.num_subchannels)


@dataclass(frozen=True)
class SensedEntry:
    """A decoded first-stage control message and the RSRP it was heard with.

    ``reserved`` lists the further resources the message announced for the
    same TB as (slot offset, sub-channel start, sub-channel count).
    """

    slot: int
    sc_start: int
    sc_len: int
    rri: int  # slots, 0 = no periodic reservation
    priority: int
    rsrp_dbm: float
    reserved: tuple[tuple[int, int, int], ...] = ()
    source: int = -1


@dataclass(frozen=True)
class Step1Params:
    priority: int
    rri_list: tuple[int, ...]  # permitted RRIs in slots
    thresholds: np.ndarray  # [own][sensed] dBm
    x_percent: int = 20
    rri_tx: int = 0  # slots, 0 = dynamic
    resel_counter: int = 0


@dataclass
class Step1Result:
    window: SelectionWindow
    available: np.ndarray  # bool [slots, starts]
    iterations: int
    half_duplex_applied: bool
    blocking_priority: np.ndarray = field(repr=False)  # int [slots, starts]

    @property
    def count(self) -> int:
        return int(self.available.sum())

    def candidates(self) -> list[SlotResource]:
        w = self.window
        ts, ss = np.nonzero(self.available)
        return [SlotResource(w.first_slot + int(t), int(s), w.l_pssch) for t, s in zip(ts, ss)]

    def is_available(self, r: SlotResource) -> bool:
        if not self.window.contains(r):
            return False
        return bool(self.available[r.slot - self.window.first_slot, r.sc_start])

    def conflict_priority(self, r: SlotResource) -> int:
        if not self.window.contains(r):
            return NO_PRIORITY
        return int(self.blocking_priority[r.slot - self.window.first_slot, r.sc_start])


def q_count(rri: int, s: int, n: int, t2: int) -> int:
    if rri < t2 and n - s <= rri:
        return math.ceil(t2 / rri)
    return 1


_EMPTY = np.zeros(0, dtype=np.int64)


def reservation_occurrences(e: SensedEntry, n: int, t2: int) -> list[tuple[int, int, int]]:
    """(slot, sc_start, sc_len) of every future use announced or implied by an entry."""
    out = []
    resources = [(0, e.sc_start, e.sc_len), *e.reserved]
    q = q_count(e.rri, e.slot, n, t2) if e.rri > 0 else 0
    for off, a, length in resources:
        base = e.slot + off
        if off > 0:
            out.append((base, a, length))
        for k in range(1, q + 1):
            out.append((base + k * e.rri, a, length))
    return out


def step1_exclude(window: SelectionWindow, sensed: Sequence[SensedEntry], own_tx_slots: Sequence[int],
                  params: Step1Params) -> Step1Result:
    w = window
    n_slots, n_starts, n_sc = w.num_slots, w.num_starts, w.num_subchannels
    sps = params.rri_tx > 0 and params.resel_counter > 0
    j_max = 10 * params.resel_counter - 1

    first, last = w.first_slot, w.first_slot + n_slots - 1

    def slot_mask(occ: int) -> np.ndarray:
        """Window row indices hit by a future use at ``occ`` (or by its SPS echo)."""
        if occ < first:
            return _EMPTY
        rows = [occ - first] if occ <= last else []
        if sps:
            r = params.rri_tx
            j_lo = max(1, -(-(occ - last) // r))
            j_hi = min(j_max, (occ - first) // r)
            rows.extend(occ - j * r - first for j in range(j_lo, j_hi + 1))
        # Distinct j give distinct slots, so no duplicates arise.
        return np.asarray(rows, dtype=np.int64) if rows else _EMPTY

    # (a) own transmissions: the UE could not sense there.
    hd = np.zeros(n_slots, dtype=bool)
    for s_i in own_tx_slots:
        for rri in params.rri_list:
            if rri <= 0:
                continue
            for q in range(1, q_count(rri, s_i, w.n, w.t2) + 1):
                hd[slot_mask(s_i + q * rri)] = True
    base = np.repeat(~hd[:, None], n_starts, axis=1)
    hd_applied = True
    if base.sum() * 100 < params.x_percent * w.total:
        # Too little left after the half-duplex rule alone: start from the full set.
        base[:] = True
        hd_applied = False

    # (b) sensed reservations, recorded as RSRP excess over the threshold per cell.
    excess = np.full((n_slots, n_sc), -np.inf)
    marks = []
    for e in sensed:
        val = e.rsrp_dbm - params.thresholds[params.priority, e.priority]
        for occ, a, length in reservation_occurrences(e, w.n, w.t2):
            rows = slot_mask(occ)
            if rows.size:
                cols = slice(max(a, 0), min(a + length, n_sc))
                excess[rows, cols] = np.maximum(excess[rows, cols], val)
                marks.append((val, e.priority, rows, cols))
    cand = excess[:, 0:n_starts].copy()
    for c in range(1, w.l_pssch):
        cand = np.maximum(cand, excess[:, c:c + n_starts])

    # (c) relax by 3 dB steps until X% of the candidates survive.
    k = 0
    while True:
        avail = base & ~(cand > 3.0 * k)
        if avail.sum() * 100 >= params.x_percent * w.total:
            break
        k += 1
    blocking = np.full((n_slots, n_sc), NO_PRIORITY, dtype=int)
    for val, prio, rows, cols in marks:
        if val > 3.0 * k:
            blocking[rows, cols] = np.minimum(blocking[rows, cols], prio)
    cand_block = blocking[:, 0:n_starts].copy()
    for c in range(1, w.l_pssch):
        cand_block = np.minimum(cand_block, blocking[:, c:c + n_starts])
    return Step1Result(w, avail, k, hd_applied, cand_block)


def step2_select(available: Union[Step1Result, Sequence[SlotResource]], n: int, rng: np.random.Generator,
                 t_gap: Optional[int] = None, preselected: Sequence[SlotResource] = (),
                 window: int = CHAIN_WINDOW) -> list[SlotResource]:
    """Pick ``n`` resources; returns only the new ones, sorted by slot.

    The first pick is uniform.  Later picks are uniform over candidates within
    ``window - 1`` slots of any already chosen resource, falling back to all
    valid candidates when none is that close.  No two picks share a slot, and
    with ``t_gap`` any two picks are at least ``t_gap`` slots apart.
    """
    cands = available.candidates() if isinstance(available, Step1Result) else list(available)
    if n > len(cands):
        raise ValueError(f"cannot select {n} resources from {len(cands)} candidates")
    if n <= 0 or not cands:
        return []
    slots = np.fromiter((c.slot for c in cands), dtype=np.int64, count=len(cands))
    taken = np.zeros(len(cands), dtype=bool)
    min_sep = max(1, t_gap or 1)
    chosen_slots = [r.slot for r in preselected]
    valid = np.ones(len(cands), dtype=bool)
    near = np.zeros(len(cands), dtype=bool)
    for s in chosen_slots:
        dist = np.abs(slots - s)
        valid &= dist >= min_sep
        near |= dist <= window - 1
    picks: list[SlotResource] = []
    for _ in range(n):
        ok = valid & ~taken
        if not ok.any():
            break
        pool = ok & near if chosen_slots else ok
        if not pool.any():
            pool = ok
        idx = np.flatnonzero(pool)
        i = int(idx[rng.integers(idx.size)])
        taken[i] = True
        picks.append(cands[i])
        chosen_slots.append(cands[i].slot)
        dist = np.abs(slots - cands[i].slot)
        valid &= dist >= min_sep
        near |= dist <= window - 1
    return sorted(picks, key=lambda r: r.slot)
