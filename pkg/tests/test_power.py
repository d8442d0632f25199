from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrv2x.power import (
    Ema,
    PowerConfig,
    psfch_power_dbm,
    pssch_power_dbm,
    sl_pathloss_db,
    split_pscch_pssch,
    sssb_power_dbm,
)
from nrv2x.radio import rx_power_dbm

HALF_DB = 10 * math.log10(2)


def test_sl_pathloss() -> None:
    assert sl_pathloss_db(23.0, -70.0) == 93.0
    assert sl_pathloss_db(0.0, 0.0) == 0.0


def test_sl_pathloss_round_trip() -> None:
    rng = np.random.default_rng(0)
    ema = Ema(0.25)
    for _ in range(200):
        ema.update(rx_power_dbm(23.0, 93.0) + rng.normal(0.0, 1.0))
    assert sl_pathloss_db(23.0, ema.value) == pytest.approx(93.0, abs=1.0)


def test_pssch_sidelink_term() -> None:
    cfg = PowerConfig(23.0, sl_enabled=True, p0_sl_dbm=-90.0, alpha_sl=1.0)
    assert pssch_power_dbm(cfg, 0, 10, pl_sl_db=80.0) == pytest.approx(0.0)
    assert pssch_power_dbm(cfg, 0, 10, pl_sl_db=500.0) == 23.0


def test_pssch_min_of_three() -> None:
    # P0 chosen so that the DL term is 5 dBm and the SL term 10 dBm at 10 PRBs.
    cfg = PowerConfig(23.0, dl_enabled=True, p0_dl_dbm=-85.0, alpha_dl=1.0, sl_enabled=True,
                      p0_sl_dbm=-80.0, alpha_sl=1.0)
    assert pssch_power_dbm(cfg, 0, 10, pl_dl_db=80.0, pl_sl_db=80.0) == pytest.approx(5.0)


def test_pssch_disabled_terms_give_pmax() -> None:
    assert pssch_power_dbm(PowerConfig(20.0), 0, 10, 50.0, 50.0) == 20.0
    with pytest.raises(ValueError):
        pssch_power_dbm(PowerConfig(), 0, 0)


def test_split() -> None:
    p2, pc = split_pscch_pssch(17.0, 20, 10)
    assert p2 == pytest.approx(17.0 - 3.0103, abs=1e-4)
    assert pc == pytest.approx(17.0 - 3.0103, abs=1e-4)
    with pytest.raises(ValueError):
        split_pscch_pssch(17.0, 20, 0)


def test_psfch_power() -> None:
    cfg = PowerConfig(23.0, p0_psfch_dbm=-100.0, alpha_psfch=1.0)
    assert psfch_power_dbm(cfg, 0, 90.0, in_coverage=False) == 23.0
    assert psfch_power_dbm(cfg, 0, 90.0, in_coverage=True) == pytest.approx(-10.0)
    assert psfch_power_dbm(cfg, 0, 90.0, True, n_simultaneous=2) == pytest.approx(-10.0 - HALF_DB)


def test_sssb_power() -> None:
    cfg = PowerConfig(23.0, p0_sssb_dbm=-100.0, alpha_sssb=1.0)
    assert sssb_power_dbm(cfg, 0, 90.0, in_coverage=False) == 23.0
    assert sssb_power_dbm(cfg, 0, 90.0, True) == pytest.approx(-10 + 10 * math.log10(11))
    assert round(sssb_power_dbm(cfg, 0, 90.0, True), 3) == 0.414
    assert sssb_power_dbm(cfg, 1, 90.0, True) - sssb_power_dbm(cfg, 0, 90.0, True) == pytest.approx(HALF_DB)


def test_alpha_range() -> None:
    with pytest.raises(ValueError):
        PowerConfig(alpha_sl=1.2)


pl = st.floats(0.0, 200.0)
p0 = st.floats(-126.0, 31.0)
cfgs = st.builds(PowerConfig, p_max_dbm=st.floats(-10.0, 33.0), dl_enabled=st.booleans(), p0_dl_dbm=p0,
                 alpha_dl=st.floats(0.0, 1.0), sl_enabled=st.booleans(), p0_sl_dbm=p0, alpha_sl=st.floats(0.0, 1.0),
                 p0_psfch_dbm=p0, p0_sssb_dbm=p0)


@settings(max_examples=200, deadline=None)
@given(cfg=cfgs, mu=st.integers(0, 3), m=st.integers(1, 275), dl=pl, sl=pl, cov=st.booleans())
def test_every_power_capped(cfg: PowerConfig, mu: int, m: int, dl: float, sl: float, cov: bool) -> None:
    assert pssch_power_dbm(cfg, mu, m, dl, sl) <= cfg.p_max_dbm
    assert psfch_power_dbm(cfg, mu, dl, cov) <= cfg.p_max_dbm
    assert sssb_power_dbm(cfg, mu, dl, cov) <= cfg.p_max_dbm


@settings(max_examples=200, deadline=None)
@given(cfg=cfgs, mu=st.integers(0, 3), m=st.integers(1, 275), dl=pl, sl=pl, step=st.floats(0.0, 50.0))
def test_pssch_monotone_in_pathloss(cfg: PowerConfig, mu: int, m: int, dl: float, sl: float, step: float) -> None:
    base = pssch_power_dbm(cfg, mu, m, dl, sl)
    assert pssch_power_dbm(cfg, mu, m, dl + step, sl) >= base
    assert pssch_power_dbm(cfg, mu, m, dl, sl + step) >= base


@settings(max_examples=200, deadline=None)
@given(p=st.floats(-40.0, 33.0), m=st.integers(2, 275), data=st.data())
def test_split_conserves_linear_power(p: float, m: int, data) -> None:
    mc = data.draw(st.integers(1, m - 1))
    p2, pc = split_pscch_pssch(p, m, mc)
    total = 10 ** (p2 / 10) + 10 ** (pc / 10)
    assert total == pytest.approx(10 ** (p / 10), rel=1e-12)
