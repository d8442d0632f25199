from __future__ import annotations

from pathlib import Path

import pytest

from nrv2x.metrics import (
    MetricParams,
    outcomes,
    pir_intervals,
    prr_type1,
    prr_type2,
    read_cbr,
    read_trace,
    summarize,
    throughput,
    throughput_bps,
)
from nrv2x.trace import cbr_buffer, trace_buffer


class TraceBuilder:
    def __init__(self) -> None:
        self.buf = trace_buffer()

    def gen(self, pkt: int, tx: int, slot: int, size: int = 300, flow: int = 0) -> None:
        self.buf.add(slot=slot, event="gen", tx_id=tx, packet_id=pkt, gen_slot=slot, pdb_slots=100,
                     size_bytes=size, info=f"cast=broadcast;prio=5;flow={flow};members=")

    def rx(self, pkt: int, tx: int, rx: int, slot: int, gen: int, dist: float, ok: bool, attempt: int = 1,
           intended: bool = True, size: int = 300, pdb: int = 100) -> None:
        self.buf.add(slot=slot, event="rx", tx_id=tx, rx_id=rx, packet_id=pkt, attempt=attempt, pool_slot=slot,
                     sc_start=0, sc_len=1, mcs=9, distance_m=dist, sci_ok=ok, tb_ok=ok, intended=intended,
                     gen_slot=gen, pdb_slots=pdb, size_bytes=size)

    def frame(self, tmp: Path):
        path = tmp / "trace.csv"
        self.buf.write(path)
        return read_trace(path)


def test_prr_pooled_over_packets(tmp_path: Path) -> None:
    tb = TraceBuilder()
    for pkt in (0, 1):
        tb.gen(pkt, 0, pkt * 100)
        for rx, ok in zip((1, 2, 3, 4), (True, True, True, False)):
            tb.rx(pkt, 0, rx, pkt * 100 + 5, pkt * 100, 50.0, ok)
    bins = prr_type1(outcomes(tb.frame(tmp_path)))
    b = bins[2]  # (40, 60]
    assert (b["x"], b["y"], b["prr"]) == (6, 8, 0.75)
    assert bins[0]["prr"] is None and bins[0]["y"] == 0
    assert len(bins) == 26 and bins[-1]["hi_m"] == 520.0


def test_prr_bin_edges_are_left_open(tmp_path: Path) -> None:
    tb = TraceBuilder()
    tb.rx(0, 0, 1, 5, 0, 20.0, True)
    tb.rx(0, 0, 2, 5, 0, 20.0001, True)
    bins = prr_type1(outcomes(tb.frame(tmp_path)))
    assert bins[0]["y"] == 1 and bins[1]["y"] == 1


def test_prr_type2(tmp_path: Path) -> None:
    tb = TraceBuilder()
    for rx, ok in zip((1, 2, 3), (True, False, True)):
        tb.rx(0, 0, rx, 5, 0, 30.0, ok, intended=True)
    tb.rx(0, 0, 9, 5, 0, 30.0, False, intended=False)
    assert prr_type2(outcomes(tb.frame(tmp_path))) == pytest.approx(2 / 3)


def test_retransmission_and_late_delivery(tmp_path: Path) -> None:
    tb = TraceBuilder()
    tb.rx(0, 0, 1, 5, 0, 30.0, False, attempt=1)
    tb.rx(0, 0, 1, 9, 0, 31.0, True, attempt=2)  # second attempt decodes in time
    tb.rx(1, 0, 2, 150, 0, 30.0, True)  # decoded after the 100-slot budget
    oc = outcomes(tb.frame(tmp_path)).set_index("rx_id")
    assert bool(oc.loc[1, "success"]) and oc.loc[1, "distance_m"] == 30.0  # first-attempt distance
    assert oc.loc[1, "rx_slot"] == 9
    assert not bool(oc.loc[2, "success"])


def test_pir_examples(tmp_path: Path) -> None:
    tb = TraceBuilder()
    tb.rx(0, 0, 1, 100, 95, 50.0, True)
    tb.rx(1, 0, 1, 300, 295, 50.0, True)
    tb.rx(1, 0, 1, 301, 295, 50.0, True, attempt=2)  # duplicate of packet 1
    gaps = pir_intervals(outcomes(tb.frame(tmp_path)), 0.001, 1, 320.0)
    assert gaps == [pytest.approx(0.2)]


def test_pir_single_success_has_no_interval(tmp_path: Path) -> None:
    tb = TraceBuilder()
    tb.rx(0, 0, 1, 100, 95, 50.0, True)
    tb.rx(1, 0, 1, 200, 195, 50.0, False)
    assert pir_intervals(outcomes(tb.frame(tmp_path)), 0.001, 1, 320.0) == []


def test_pir_periodic_and_distance_gate(tmp_path: Path) -> None:
    tb = TraceBuilder()
    for k in range(10):
        tb.rx(k, 0, 1, 100 * k + 3, 100 * k, 50.0, True)
        tb.rx(k, 0, 2, 100 * k + 3, 100 * k, 50.0 if k < 5 else 400.0, True)
    oc = outcomes(tb.frame(tmp_path))
    near = pir_intervals(oc[oc["rx_id"] == 1], 0.001, 1, 320.0)
    assert len(near) == 9 and sum(near) / len(near) == pytest.approx(0.1)
    # receiver 2 leaves the 320 m range after packet 4
    assert len(pir_intervals(oc[oc["rx_id"] == 2], 0.001, 1, 320.0)) == 4
    assert len(pir_intervals(oc[oc["rx_id"] == 2], 0.001, 2)) == 9


def test_pir_type_validation(tmp_path: Path) -> None:
    tb = TraceBuilder()
    tb.rx(0, 0, 1, 100, 95, 50.0, True)
    with pytest.raises(ValueError):
        pir_intervals(outcomes(tb.frame(tmp_path)), 0.001, 3)


def test_throughput(tmp_path: Path) -> None:
    assert throughput_bps(1000, 0.01, 0.001) == pytest.approx(800_000)
    assert throughput_bps(1000, 0.0, 0.001) == pytest.approx(8_000_000)  # one-slot floor
    tb = TraceBuilder()
    tb.rx(0, 0, 1, 9, 0, 50.0, True, size=1000)  # ends 10 ms after generation
    tb.rx(1, 0, 1, 109, 100, 50.0, False, size=1000)  # never delivered
    out = throughput(outcomes(tb.frame(tmp_path)), 0.001)
    assert out == {"mean_bps": pytest.approx(800_000), "flows": 1}


def test_summary_of_empty_trace(tmp_path: Path) -> None:
    TraceBuilder().frame(tmp_path)
    cbr_path = tmp_path / "cbr.csv"
    cbr_buffer().write(cbr_path)
    s = summarize(read_trace(tmp_path / "trace.csv"), read_cbr(cbr_path), MetricParams(0.001))
    assert s["packets"] == 0 and s["receptions"] == 0
    assert s["prr_type2"] is None and s["mean_cbr"] is None
    assert s["pir_type1"]["count"] == 0
    assert s["throughput"]["mean_bps"] is None


def test_warmup_excludes_early_packets(tmp_path: Path) -> None:
    tb = TraceBuilder()
    tb.gen(0, 0, 10)
    tb.rx(0, 0, 1, 12, 10, 50.0, False)
    tb.gen(1, 0, 1010)
    tb.rx(1, 0, 1, 1012, 1010, 50.0, True)
    cbr_path = tmp_path / "cbr.csv"
    cbr_buffer().write(cbr_path)
    s = summarize(tb.frame(tmp_path), read_cbr(cbr_path), MetricParams(0.001, warmup_slot=1000))
    assert s["packets"] == 1 and s["receptions"] == 1
    assert s["prr_bins"][2]["prr"] == 1.0
