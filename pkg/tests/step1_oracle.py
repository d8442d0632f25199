"""Cell-by-cell reference for the sensing exclusion, plus a random instance generator.

Written for clarity rather than speed: every candidate is checked against
every reservation one slot and one sub-channel at a time.
"""

from __future__ import annotations

import math

import numpy as np

from nrv2x.mac import SelectionWindow, SensedEntry, Step1Params, default_rsrp_thresholds


def _reps(rri: int, s: int, n: int, t2: int) -> int:
    return math.ceil(t2 / rri) if (rri < t2 and n - s <= rri) else 1


def _echoes(t: int, params: Step1Params) -> set[int]:
    if params.rri_tx > 0 and params.resel_counter > 0:
        return {t + j * params.rri_tx for j in range(10 * params.resel_counter)}
    return {t}


def _occupied(e: SensedEntry, n: int, t2: int) -> set[tuple[int, int]]:
    cells = set()
    resources = [(0, e.sc_start, e.sc_len)] + list(e.reserved)
    for off, a, length in resources:
        slots = []
        if off > 0:
            slots.append(e.slot + off)
        if e.rri > 0:
            slots += [e.slot + off + k * e.rri for k in range(1, _reps(e.rri, e.slot, n, t2) + 1)]
        for s in slots:
            for c in range(a, a + length):
                cells.add((s, c))
    return cells


def brute_step1(w: SelectionWindow, sensed, own_tx, params: Step1Params) -> tuple[np.ndarray, int, bool]:
    first = w.n + w.t1
    rows = range(w.t2 - w.t1 + 1)
    starts = range(w.num_subchannels - w.l_pssch + 1)
    total = len(rows) * len(starts)

    blocked_slots = set()
    for s in own_tx:
        for rri in params.rri_list:
            for q in range(1, _reps(rri, s, w.n, w.t2) + 1):
                blocked_slots.add(s + q * rri)
    base = np.ones((len(rows), len(starts)), dtype=bool)
    for i in rows:
        if _echoes(first + i, params) & blocked_slots:
            base[i, :] = False
    hd_applied = True
    if base.sum() * 100 < params.x_percent * total:
        base[:] = True
        hd_applied = False

    marks = []
    for e in sensed:
        val = e.rsrp_dbm - params.thresholds[params.priority, e.priority]
        marks.append((val, _occupied(e, w.n, w.t2)))

    def conflict(i: int, a: int, level: float) -> bool:
        for val, cells in marks:
            if val <= level:
                continue
            for y in _echoes(first + i, params):
                for c in range(a, a + w.l_pssch):
                    if (y, c) in cells:
                        return True
        return False

    k = 0
    while True:
        avail = base.copy()
        for i in rows:
            for a in starts:
                if avail[i, a] and conflict(i, a, 3.0 * k):
                    avail[i, a] = False
        if avail.sum() * 100 >= params.x_percent * total:
            return avail, k, hd_applied
        k += 1


def random_instance(rng: np.random.Generator):
    """At most 5 UEs, a window of at most 40 slots, at most 4 sub-channels, RRIs from {20, 50, 100}."""
    n_sc = int(rng.integers(1, 5))
    l_pssch = int(rng.integers(1, n_sc + 1))
    n = int(rng.integers(200, 400))
    t1 = int(rng.integers(0, 4))
    t2 = t1 + int(rng.integers(0, 40))
    window = SelectionWindow(n, t1, t2, n_sc, l_pssch)
    rri_list = tuple(sorted(rng.choice([20, 50, 100], size=int(rng.integers(1, 4)), replace=False).tolist()))
    sensed = []
    for ue in range(int(rng.integers(0, 5))):  # up to four other UEs
        rri = int(rng.choice(rri_list + (0,)))
        for _ in range(int(rng.integers(1, 4))):
            start = int(rng.integers(0, n_sc))
            length = int(rng.integers(1, n_sc - start + 1))
            reserved = []
            for _ in range(int(rng.integers(0, 3))):
                a = int(rng.integers(0, n_sc))
                reserved.append((int(rng.integers(1, 32)), a, int(rng.integers(1, n_sc - a + 1))))
            sensed.append(SensedEntry(
                slot=n - int(rng.integers(1, 200)), sc_start=start, sc_len=length, rri=rri,
                priority=int(rng.integers(1, 9)), rsrp_dbm=float(rng.uniform(-115, -70)),
                reserved=tuple(reserved), source=ue,
            ))
    own = sorted({n - int(rng.integers(1, 150)) for _ in range(int(rng.integers(0, 4)))})
    rri_tx = int(rng.choice(rri_list + (0,)))
    params = Step1Params(
        priority=int(rng.integers(1, 9)), rri_list=rri_list,
        thresholds=default_rsrp_thresholds(float(rng.uniform(-110, -90)), 2.0),
        x_percent=int(rng.choice([20, 35, 50])), rri_tx=rri_tx,
        resel_counter=int(rng.integers(0, 3)) if rri_tx else 0,
    )
    return window, sensed, own, params
