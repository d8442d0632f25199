"""Open-loop sidelink power control.

All powers are in dBm and pathlosses in dB.  A disabled pathloss term is
simply left out of the ``min``; with no terms left the result is P_MAX.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class PowerConfig:
    p_max_dbm: float = 23.0
    dl_enabled: bool = False
    p0_dl_dbm: float = -80.0
    alpha_dl: float = 1.0
    sl_enabled: bool = False
    p0_sl_dbm: float = -80.0
    alpha_sl: float = 1.0
    p0_psfch_dbm: float = -80.0
    alpha_psfch: float = 1.0
    p0_sssb_dbm: float = -80.0
    alpha_sssb: float = 1.0
    rsrp_ema_coeff: float = 0.25  # weight of the newest sample

    def __post_init__(self) -> None:
        for name in ("alpha_dl", "alpha_sl", "alpha_psfch", "alpha_sssb"):
            a = getattr(self, name)
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {a}")
        if not 0.0 < self.rsrp_ema_coeff <= 1.0:
            raise ValueError("RSRP averaging coefficient must lie in (0, 1]")


def sl_pathloss_db(avg_tx_power_dbm: float, avg_rsrp_dbm: float) -> float:
    return avg_tx_power_dbm - avg_rsrp_dbm


def sl_term_allowed(cast: str) -> bool:
    # Sidelink-pathloss based control exists for unicast only.
    return cast == "unicast"


def pssch_power_dbm(
    cfg: PowerConfig,
    mu: int,
    m_pssch: int,
    pl_dl_db: Optional[float] = None,
    pl_sl_db: Optional[float] = None,
) -> float:
    if m_pssch <= 0:
        raise ValueError(f"PSSCH bandwidth must be positive, got {m_pssch} PRBs")
    bw = 10.0 * math.log10(2**mu * m_pssch)
    p = cfg.p_max_dbm
    if cfg.dl_enabled and pl_dl_db is not None:
        p = min(p, cfg.p0_dl_dbm + bw + cfg.alpha_dl * pl_dl_db)
    if cfg.sl_enabled and pl_sl_db is not None:
        p = min(p, cfg.p0_sl_dbm + bw + cfg.alpha_sl * pl_sl_db)
    return p


def split_pscch_pssch(p_pssch1_dbm: float, m_pssch: int, m_pscch: int) -> tuple[float, float]:
    """Share P_PSSCH,1 between the PSSCH-only and PSCCH PRBs in proportion to their widths."""
    if not 0 < m_pscch < m_pssch:
        raise ValueError(f"need 0 < M_PSCCH < M_PSSCH, got {m_pscch} and {m_pssch}")
    p2 = p_pssch1_dbm + 10.0 * math.log10((m_pssch - m_pscch) / m_pssch)
    p_pscch = p_pssch1_dbm + 10.0 * math.log10(m_pscch / m_pssch)
    return p2, p_pscch


def psfch_power_dbm(
    cfg: PowerConfig,
    mu: int,
    pl_dl_db: Optional[float],
    in_coverage: bool,
    n_simultaneous: int = 1,
) -> float:
    """Power of each PSFCH when ``n_simultaneous`` are sent in one slot."""
    if n_simultaneous < 1:
        raise ValueError("need at least one PSFCH")
    if not in_coverage or pl_dl_db is None:
        total = cfg.p_max_dbm
    else:
        total = min(cfg.p_max_dbm, cfg.p0_psfch_dbm + 10.0 * math.log10(2**mu) + cfg.alpha_psfch * pl_dl_db)
    return total - 10.0 * math.log10(n_simultaneous)


def sssb_power_dbm(cfg: PowerConfig, mu: int, pl_dl_db: Optional[float], in_coverage: bool) -> float:
    if not in_coverage or pl_dl_db is None:
        return cfg.p_max_dbm
    return min(cfg.p_max_dbm, cfg.p0_sssb_dbm + 10.0 * math.log10(2**mu * 11) + cfg.alpha_sssb * pl_dl_db)


def dl_pathloss_db(d3d_m: float, fc_ghz: float) -> float:
    """Stand-in DL pathloss from a gNB anchor, using the NLOS distance law."""
    return 36.85 + 30.0 * math.log10(max(d3d_m, 1.0)) + 18.9 * math.log10(fc_ghz)


class Ema:
    """Exponential moving average in the dB domain; the first sample seeds it."""

    def __init__(self, coeff: float) -> None:
        self.coeff = coeff
        self.value: Optional[float] = None

    def update(self, sample: float) -> float:
        if self.value is None:
            self.value = sample
        else:
            self.value += self.coeff * (sample - self.value)
        return self.value
