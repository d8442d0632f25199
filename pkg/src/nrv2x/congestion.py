"""Channel busy ratio, channel occupancy ratio and CR-limit enforcement."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


def rssi_threshold_dbm(n: int) -> float:
    if not 0 <= n <= 45:
        raise ValueError(f"RSSI threshold index must lie in 0..45, got {n}")
    return -112.0 + 2.0 * n


def n_proc_slots(mu: int, capability: int = 1) -> int:
    if capability not in (1, 2):
        raise ValueError("processing capability must be 1 or 2")
    if mu == 0:
        return 2
    return 2**mu if capability == 1 else 2 * 2**mu


def sl_cbr(rssi_dbm: np.ndarray, threshold_dbm: float) -> float:
    """Share of measured (slot, sub-channel) cells above the threshold.

    ``rssi_dbm`` is [slots, sub-channels]; NaN marks cells not measured
    (slots the UE spent transmitting).  Before the window fills, the ratio is
    taken over whatever history exists.
    """
    a = np.asarray(rssi_dbm, dtype=float)
    measured = ~np.isnan(a)
    total = int(measured.sum())
    if total == 0:
        return 0.0
    return float((a[measured] > threshold_dbm).sum() / total)


def check_cr_window(a: int, b: int) -> None:
    if a <= 0 or b < 0:
        raise ValueError(f"CR window needs a > 0 and b >= 0, got a={a}, b={b}")
    if not 2 * b < a + b + 1:
        raise ValueError(f"CR window needs b < (a+b+1)/2, got a={a}, b={b}")


def sl_cr(used_past: float, selected_future: float, num_subchannels: int, a: int, b: int,
          last_selected_slot: Optional[int] = None, now: Optional[int] = None) -> float:
    """(sub-channel-slots used in [n-a, n-1] + selected in [n, n+b]) / (L (a+b+1))."""
    check_cr_window(a, b)
    if last_selected_slot is not None and now is not None and now + b > last_selected_slot:
        raise ValueError("n + b reaches past the last selected resource")
    return float((used_past + selected_future) / (num_subchannels * (a + b + 1)))


@dataclass(frozen=True)
class CongestionTable:
    """CBR range upper edges and CR limits per range and priority (index 0 = priority 1)."""

    cbr_upper: tuple[float, ...] = (1.0,)
    cr_limit: tuple[tuple[float, ...], ...] = ((1.0,) * 8,)

    def __post_init__(self) -> None:
        if not 1 <= len(self.cbr_upper) <= 16:
            raise ValueError("a congestion table holds 1 to 16 CBR ranges")
        if list(self.cbr_upper) != sorted(self.cbr_upper) or self.cbr_upper[-1] != 1.0:
            raise ValueError("CBR range edges must increase and end at 1.0")
        if len(set(self.cbr_upper)) != len(self.cbr_upper) or self.cbr_upper[0] <= 0:
            raise ValueError("CBR ranges must be non-empty")
        if len(self.cr_limit) != len(self.cbr_upper) or any(len(row) != 8 for row in self.cr_limit):
            raise ValueError("need one row of 8 priority limits per CBR range")
        for p in range(8):
            col = [row[p] for row in self.cr_limit]
            if any(b > a for a, b in zip(col, col[1:])):
                raise ValueError("CR limit must not increase with CBR")

    def limit(self, cbr: float, priority: int) -> float:
        for upper, row in zip(self.cbr_upper, self.cr_limit):
            if cbr <= upper:
                return row[priority - 1]
        return self.cr_limit[-1][priority - 1]


@dataclass(frozen=True)
class Knobs:
    mcs: int
    l_pssch: int  # sub-channels of this transmission
    max_l_pssch: int
    n_max: int  # transmissions of this TB still allowed
    power_dbm: float
    dropped: bool = False


@dataclass(frozen=True)
class EnforceResult:
    knobs: Knobs
    action: str  # none | mcs | subchannels | n_max | power | drop
    cr_before: float
    cr_after: float
    limit: float


def enforce(used_past: float, cbr: float, priority: int, table: CongestionTable, knobs: Knobs,
            num_subchannels: int, window: int, future_tx: Callable[[Knobs], float],
            l_for_mcs: Callable[[int], Optional[int]], max_mcs: int, power_step_db: float = 3.0,
            min_power_dbm: float = -30.0) -> EnforceResult:
    """Bring the projected CR under the limit using the fixed mitigation order.

    ``future_tx(knobs)`` gives the sub-channel-slots this UE would occupy in
    [n, n+b] with those knobs; ``l_for_mcs(m)`` the sub-channels the TB needs
    at MCS ``m`` (None if it does not fit).  Power reduction cannot change CR,
    so a violation that survives the first three steps ends in a drop.
    """
    limit = table.limit(cbr, priority)
    denom = num_subchannels * window

    def cr(k: Knobs) -> float:
        return (used_past + future_tx(k)) / denom

    before = cr(knobs)
    if before <= limit:
        return EnforceResult(knobs, "none", before, before, limit)
    k = knobs
    action = "none"
    # (1) higher MCS, fewer sub-channels
    m = k.mcs
    while cr(k) > limit and m < max_mcs:
        m += 1
        need = l_for_mcs(m)
        if need is not None and need < k.l_pssch:
            k = replace(k, mcs=m, l_pssch=need, max_l_pssch=min(k.max_l_pssch, need))
            action = "mcs"
    # (2) lower max L_PSSCH where the TB still fits at the chosen MCS
    while cr(k) > limit and k.max_l_pssch > 1:
        need = l_for_mcs(k.mcs)
        if need is None or k.max_l_pssch - 1 < need:
            break
        k = replace(k, max_l_pssch=k.max_l_pssch - 1, l_pssch=min(k.l_pssch, k.max_l_pssch - 1))
        action = "subchannels"
    # (3) fewer transmissions of this TB
    while cr(k) > limit and k.n_max > 1:
        k = replace(k, n_max=k.n_max - 1)
        action = "n_max"
    if cr(k) > limit:
        # (4) power step; CR is unchanged, so the transmission is dropped.
        k = replace(k, power_dbm=max(k.power_dbm - power_step_db, min_power_dbm), dropped=True)
        action = "drop"
    return EnforceResult(k, action, before, cr(k) if not k.dropped else (used_past / denom), limit)
