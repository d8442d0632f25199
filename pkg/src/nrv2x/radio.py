"""Received power, SINR and threshold decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

THERMAL_DBM_PER_HZ = -174.0

# Spectral efficiency (bit/s/Hz) of the 64QAM NR MCS table, indices 0..28.
MCS_SPECTRAL_EFFICIENCY = (
    0.2344, 0.3066, 0.3770, 0.4902, 0.6016, 0.7402, 0.8770, 1.0273, 1.1758, 1.3262,
    1.3281, 1.4766, 1.6953, 1.9141, 2.1602, 2.4063, 2.5703, 2.5664, 2.7305, 3.0293,
    3.3223, 3.6094, 3.9023, 4.2129, 4.5234, 4.8164, 5.1152, 5.3320, 5.5547,
)


def db_to_mw(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def mw_to_db(mw):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(mw)


@dataclass(frozen=True)
class NoiseModel:
    noise_figure_db: float = 9.0
    scs_khz: float = 15.0

    def power_dbm(self, n_prb: float) -> float:
        bw_hz = n_prb * 12 * self.scs_khz * 1e3
        return THERMAL_DBM_PER_HZ + 10.0 * math.log10(bw_hz) + self.noise_figure_db

    def psd_dbm_per_prb(self) -> float:
        return self.power_dbm(1)


def default_noise_figure(carrier_ghz: float) -> float:
    return 9.0 if carrier_ghz <= 6.0 else 13.0


def rx_power_dbm(tx_power_dbm: float, total_loss_db: float) -> float:
    return tx_power_dbm - total_loss_db


def per_prb_dbm(power_dbm: float, n_prb: int) -> float:
    return power_dbm - 10.0 * math.log10(n_prb)


@dataclass(frozen=True)
class Interferer:
    power_dbm: float  # received power over the interferer's own allocation
    overlap: float  # fraction of the interferer's PRBs that overlap the target


def sinr_db(signal_dbm: float, interferers: Iterable[Interferer], noise_dbm: float) -> float:
    """S / (N + sum I), with each interferer's power scaled by its PRB overlap fraction."""
    i_mw = sum(float(db_to_mw(it.power_dbm)) * it.overlap for it in interferers)
    denom = float(db_to_mw(noise_dbm)) + i_mw
    return float(mw_to_db(float(db_to_mw(signal_dbm)) / denom))


@dataclass(frozen=True)
class DecodeTables:
    """SINR thresholds (dB) per MCS and for the first-stage control message."""

    tb_threshold_db: tuple[float, ...]
    sci_threshold_db: float
    mode: str = "threshold"  # or "logistic"
    logistic_slope: float = 2.0  # per dB

    @classmethod
    def shannon(cls, margin_db: float = 3.0, sci_offset_db: float = 3.0,
                overrides: Optional[Sequence[float]] = None, mode: str = "threshold",
                logistic_slope: float = 2.0) -> "DecodeTables":
        if overrides is not None:
            tb = tuple(float(v) for v in overrides)
        else:
            tb = tuple(10.0 * math.log10(2.0**se - 1.0) + margin_db for se in MCS_SPECTRAL_EFFICIENCY)
        return cls(tb, min(tb) - sci_offset_db, mode, logistic_slope)

    def threshold(self, kind: str, mcs: int = 0) -> float:
        if kind == "sci":
            return self.sci_threshold_db
        if kind != "tb":
            raise ValueError(f"unknown decode kind {kind!r}")
        if not 0 <= mcs < len(self.tb_threshold_db):
            raise ValueError(f"MCS {mcs} outside table of {len(self.tb_threshold_db)} entries")
        return self.tb_threshold_db[mcs]


def decode(kind: str, sinr: float, mcs: int, tables: DecodeTables,
           rng: Optional[np.random.Generator] = None) -> bool:
    thr = tables.threshold(kind, mcs)
    if tables.mode == "threshold":
        return bool(sinr >= thr)
    if rng is None:
        raise ValueError("logistic decoding needs a random stream")
    return bool(rng.random() < success_probability(sinr, thr, tables.logistic_slope))


def success_probability(sinr, thr: float, slope: float):
    x = np.clip(slope * (np.asarray(sinr, dtype=float) - thr), -60.0, 60.0)
    return 1.0 / (1.0 + np.exp(-x))


def decode_many(kind: str, sinr: np.ndarray, mcs: int, tables: DecodeTables,
                uniforms: Optional[np.ndarray] = None) -> np.ndarray:
    thr = tables.threshold(kind, mcs)
    if tables.mode == "threshold":
        return sinr >= thr
    if uniforms is None:
        raise ValueError("logistic decoding needs uniform draws")
    return uniforms < success_probability(sinr, thr, tables.logistic_slope)


@dataclass(frozen=True)
class FeedbackIntent:
    ue: int
    priority: int
    key: object = None  # caller's handle for the associated feedback


@dataclass
class HalfDuplexDecision:
    receivers: set[int]
    psfch_tx: dict[int, list[FeedbackIntent]] = field(default_factory=dict)
    psfch_rx: dict[int, list[FeedbackIntent]] = field(default_factory=dict)
    dropped: list[FeedbackIntent] = field(default_factory=list)


def half_duplex_filter(all_ues: Iterable[int], pssch_tx: Iterable[int],
                       psfch_tx: Sequence[FeedbackIntent] = (), psfch_rx: Sequence[FeedbackIntent] = (),
                       max_psfch_tx: int = 1) -> HalfDuplexDecision:
    """Resolve one slot's intents under half-duplex.

    A UE sending PSSCH receives nothing.  A UE that must both send and receive
    PSFCH keeps the side whose best associated priority is higher (lower
    number; ties favour sending).  Sends are then capped at ``max_psfch_tx``,
    highest priority first.
    """
    txing = set(pssch_tx)
    out = HalfDuplexDecision(receivers={u for u in all_ues if u not in txing})
    by_tx: dict[int, list[FeedbackIntent]] = {}
    by_rx: dict[int, list[FeedbackIntent]] = {}
    for it in psfch_tx:
        by_tx.setdefault(it.ue, []).append(it)
    for it in psfch_rx:
        by_rx.setdefault(it.ue, []).append(it)
    for ue in sorted(set(by_tx) | set(by_rx)):
        sends = sorted(by_tx.get(ue, []), key=lambda it: it.priority)
        hears = by_rx.get(ue, [])
        if sends and hears:
            if min(it.priority for it in hears) < sends[0].priority:
                out.dropped.extend(sends)
                sends = []
            else:
                out.dropped.extend(hears)
                hears = []
        if sends:
            out.psfch_tx[ue] = sends[:max_psfch_tx]
            out.dropped.extend(sends[max_psfch_tx:])
        if hears:
            out.psfch_rx[ue] = list(hears)
    return out
