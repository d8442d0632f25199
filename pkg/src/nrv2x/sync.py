"""Synchronization reference selection and S-SSB triggering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

IN_COVERAGE_IDS = range(0, 336)
OUT_OF_COVERAGE_IDS = range(336, 672)
SSSB_PERIOD_MS = 160
INTERNAL_CLOCK_LEVEL = 8

# Allowed S-SSB counts per 160 ms period by (frequency range, SCS kHz).
SSSB_PER_PERIOD = {
    ("FR1", 15): (1,),
    ("FR1", 30): (1, 2),
    ("FR1", 60): (1, 2, 4),
    ("FR2", 60): (1, 2, 4, 8, 16, 32),
    ("FR2", 120): (1, 2, 4, 8, 16, 32, 64),
}


@dataclass(frozen=True)
class SyncCandidate:
    kind: str  # gnss | gnb | syncref
    rsrp_dbm: float = 0.0
    slss_id: Optional[int] = None
    i_ic: int = 0
    ue: Optional[int] = None  # source UE for syncref candidates


@dataclass(frozen=True)
class SyncState:
    kind: str  # gnss | gnb | syncref | internal_clock
    level: int
    ref_ue: Optional[int] = None
    ref_slss_id: Optional[int] = None
    ref_i_ic: int = 0
    ref_rsrp_dbm: Optional[float] = None
    slss_id: Optional[int] = None  # own id when acting as SyncRef
    i_ic: int = 0
    is_syncref: bool = False


INTERNAL_CLOCK = SyncState("internal_clock", INTERNAL_CLOCK_LEVEL)


def split_slss_id(slss_id: int) -> tuple[int, int]:
    """(N_S-PSS, N_S-SSS) with id = 336 * N_S-PSS + N_S-SSS."""
    if not 0 <= slss_id < 672:
        raise ValueError(f"SLSS id {slss_id} outside 0..671")
    return divmod(slss_id, 336)


def _syncref_group(slss_id: int, i_ic: int) -> str:
    if slss_id in OUT_OF_COVERAGE_IDS:
        return "multi_hop"
    anchor = "gnss" if slss_id == 0 else "gnb"
    return f"{anchor}_{'direct' if i_ic else 'one_hop'}"


_LEVELS = {
    "gnss_based": {"gnss": 1, "gnss_direct": 2, "gnss_one_hop": 3, "gnb": 4,
                   "gnb_direct": 5, "gnb_one_hop": 6, "multi_hop": 7},
    "gnb_based": {"gnb": 1, "gnb_direct": 2, "gnb_one_hop": 3, "gnss": 4,
                  "gnss_direct": 5, "gnss_one_hop": 6, "multi_hop": 7},
}


def priority_level(cand: SyncCandidate, mode: str, disable_levels_4_to_6: bool = False) -> Optional[int]:
    """Priority level 1..7 of a candidate, or None when its level is disabled."""
    if mode not in _LEVELS:
        raise ValueError(f"unknown sync mode {mode!r}")
    if cand.kind in ("gnss", "gnb"):
        key = cand.kind
    elif cand.kind == "syncref":
        if cand.slss_id is None:
            raise ValueError("a SyncRef candidate needs an SLSS id")
        key = _syncref_group(cand.slss_id, cand.i_ic)
    else:
        raise ValueError(f"unknown candidate kind {cand.kind!r}")
    level = _LEVELS[mode][key]
    if disable_levels_4_to_6 and mode == "gnss_based" and 4 <= level <= 6:
        return None
    return level


def select_reference(cands: Iterable[SyncCandidate], threshold_dbm: float, mode: str,
                     disable_levels_4_to_6: bool = False) -> SyncState:
    """Lowest level first, then highest RSRP; SyncRef UEs must beat the threshold."""
    best = None
    for c in cands:
        if c.kind == "syncref" and not c.rsrp_dbm > threshold_dbm:
            continue
        level = priority_level(c, mode, disable_levels_4_to_6)
        if level is None:
            continue
        # Ties on RSRP break on UE id so the result ignores input order.
        key = (level, -c.rsrp_dbm, c.ue if c.ue is not None else -1)
        if best is None or key < best[0]:
            best = (key, c)
    if best is None:
        return INTERNAL_CLOCK
    (level, _, _), c = best
    return SyncState(c.kind, level, ref_ue=c.ue, ref_slss_id=c.slss_id, ref_i_ic=c.i_ic, ref_rsrp_dbm=c.rsrp_dbm)


def should_transmit_sssb(network_cfg: Optional[str], has_sl_data: bool, ref_rsrp_dbm: Optional[float],
                         threshold_dbm: float, ref_kind: str) -> bool:
    """``network_cfg`` is "tx", "no_tx" or None when the network said nothing."""
    if network_cfg == "tx":
        return True
    if network_cfg == "no_tx":
        return False
    if network_cfg is not None:
        raise ValueError(f"unknown network S-SSB configuration {network_cfg!r}")
    if not has_sl_data:
        return False
    if ref_kind == "internal_clock":
        return True
    if ref_kind == "gnss":
        # GNSS gives no comparable RSRP; a GNSS-timed UE with data may anchor others.
        return True
    return ref_rsrp_dbm is not None and ref_rsrp_dbm < threshold_dbm


def derive_slss_id(ref: SyncState, rng: np.random.Generator, network_id: Optional[int] = None) -> tuple[int, int]:
    """(SLSS id, I_IC) a UE transmits given its selected reference.

    A direct relay of an in-coverage SyncRef keeps that id with I_IC 0; a
    relay of an out-of-coverage UE that still carries an in-coverage id adds
    336; out-of-coverage ids are copied unchanged.
    """
    if ref.kind == "gnss":
        return 0, 1
    if ref.kind == "gnb":
        if network_id is None or not 1 <= network_id <= 335:
            raise ValueError("a gNB-timed UE needs a network-assigned id in 1..335")
        return network_id, 1
    if ref.kind == "syncref":
        x = ref.ref_slss_id
        if x is None:
            raise ValueError("SyncRef reference without an SLSS id")
        if x in OUT_OF_COVERAGE_IDS:
            return x, 0
        return (x, 0) if ref.ref_i_ic else (x + 336, 0)
    if ref.kind == "internal_clock":
        return int(rng.integers(338, 672)), 0
    raise ValueError(f"unknown reference kind {ref.kind!r}")


def sssb_counts(freq_range: str, scs_khz: int) -> tuple[int, ...]:
    try:
        return SSSB_PER_PERIOD[(freq_range, scs_khz)]
    except KeyError:
        raise ValueError(f"S-SSB not defined for {freq_range} at {scs_khz} kHz") from None
