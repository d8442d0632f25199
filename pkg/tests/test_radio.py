from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrv2x.radio import (
    DecodeTables,
    FeedbackIntent,
    Interferer,
    NoiseModel,
    decode,
    decode_many,
    half_duplex_filter,
    per_prb_dbm,
    rx_power_dbm,
    sinr_db,
)


def test_rx_power() -> None:
    assert rx_power_dbm(23.0, 87.963) == pytest.approx(-64.963, abs=1e-9)
    assert rx_power_dbm(23.0, 0.0) == 23.0


def test_same_psd_scales_with_prb_count() -> None:
    psd = -10.0
    p10, p20 = psd + 10 * math.log10(10), psd + 10 * math.log10(20)
    assert per_prb_dbm(p10, 10) == pytest.approx(per_prb_dbm(p20, 20))
    assert p20 - p10 == pytest.approx(10 * math.log10(2))


def test_noise_power() -> None:
    nm = NoiseModel(9.0, 15.0)
    # -174 + 10 log10(12 * 15 kHz) + 9
    assert nm.power_dbm(1) == pytest.approx(-174 + 10 * math.log10(180e3) + 9)
    assert nm.power_dbm(10) - nm.power_dbm(1) == pytest.approx(10.0)


def test_sinr_examples() -> None:
    assert sinr_db(-100.0, [], -100.0) == pytest.approx(0.0)
    assert sinr_db(-60.0, [Interferer(-60.0, 1.0)], -160.0) == pytest.approx(0.0, abs=1e-6)
    # hand sum: 1e-9 / (1e-10 + 0.5 * 1e-9)
    assert sinr_db(-90.0, [Interferer(-90.0, 0.5)], -100.0) == pytest.approx(10 * math.log10(1 / 0.6))


def test_decode_boundary() -> None:
    tables = DecodeTables.shannon()
    thr = tables.threshold("tb", 9)
    assert decode("tb", thr, 9, tables)
    assert not decode("tb", thr - 1e-9, 9, tables)
    assert not decode("tb", -math.inf, 9, tables)
    assert not decode("sci", -math.inf, 0, tables)
    assert decode("sci", tables.sci_threshold_db, 0, tables)


def test_shannon_table_shape() -> None:
    tables = DecodeTables.shannon(margin_db=3.0, sci_offset_db=3.0)
    tb = np.array(tables.tb_threshold_db)
    assert len(tb) == 29
    assert tables.sci_threshold_db == pytest.approx(tb.min() - 3.0)
    # 2**se - 1 at the lowest efficiency, plus the margin
    assert tb[0] == pytest.approx(10 * math.log10(2**0.2344 - 1) + 3.0)


def test_logistic_needs_randomness() -> None:
    tables = DecodeTables.shannon(mode="logistic")
    with pytest.raises(ValueError):
        decode("tb", 0.0, 3, tables)
    ok = decode_many("tb", np.full(100_000, tables.threshold("tb", 3)), 3, tables,
                     np.random.default_rng(0).random(100_000))
    assert ok.mean() == pytest.approx(0.5, abs=0.01)


@settings(max_examples=200, deadline=None)
@given(s=st.floats(-40, 40), mcs=st.integers(0, 28))
def test_decode_monotone(s: float, mcs: int) -> None:
    tables = DecodeTables.shannon()
    if decode("tb", s, mcs, tables):
        assert decode("tb", s + 1.0, mcs, tables)


def test_pssch_sender_hears_nothing() -> None:
    out = half_duplex_filter(range(4), [1, 3])
    assert out.receivers == {0, 2}


def test_psfch_priority_wins() -> None:
    send = FeedbackIntent(0, priority=3, key="tx")
    hear = FeedbackIntent(0, priority=1, key="rx")
    out = half_duplex_filter(range(2), [], [send], [hear])
    assert out.psfch_rx == {0: [hear]}
    assert out.psfch_tx == {}
    assert out.dropped == [send]


def test_psfch_send_cap() -> None:
    due = [FeedbackIntent(2, priority=p, key=p) for p in (5, 1, 3)]
    out = half_duplex_filter(range(3), [], due, [], max_psfch_tx=2)
    assert [it.priority for it in out.psfch_tx[2]] == [1, 3]
    assert [it.priority for it in out.dropped] == [5]
