"""PRR, PIR, throughput and CBR statistics computed from the written trace.

Everything here reads the CSV columns only, so a summary can be rebuilt from
``trace.csv`` and ``cbr_timeseries.csv`` at any time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

BIN_M = 20.0
NUM_BINS = 26


@dataclass(frozen=True)
class MetricParams:
    slot_s: float
    warmup_slot: int = 0
    baseline_range_m: float = 320.0
    pir_distance_m: Optional[float] = None  # None: baseline range


def read_trace(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=False, na_values=[""], dtype={"event": str, "info": str})


def read_cbr(path: Path) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=False, na_values=[""], dtype={"action": str})


def _flows(trace: pd.DataFrame) -> pd.Series:
    gen = trace[trace["event"] == "gen"]
    flow = gen["info"].fillna("").str.extract(r"flow=(\d+)")[0].fillna(0).astype(int)
    return pd.Series(flow.to_numpy(), index=gen["packet_id"].astype(int).to_numpy())


def outcomes(trace: pd.DataFrame, warmup_slot: int = 0) -> pd.DataFrame:
    """One row per (packet, receiver): distance at the first attempt, intended flag, success.

    A receiver succeeds if any attempt decodes within the delay budget.
    """
    cols = ["packet_id", "tx_id", "rx_id", "gen_slot", "size_bytes", "distance_m", "intended", "success",
            "rx_slot", "rx_distance_m", "flow"]
    rx = trace[trace["event"] == "rx"]
    if warmup_slot:
        rx = rx[rx["gen_slot"] >= warmup_slot]
    if rx.empty:
        return pd.DataFrame({c: pd.Series(dtype=bool if c in ("intended", "success") else float) for c in cols})
    rx = rx.astype({"packet_id": int, "tx_id": int, "rx_id": int, "attempt": int, "gen_slot": int,
                    "pdb_slots": int})
    ok = (rx["tb_ok"].fillna(0) > 0) & ((rx["slot"] - rx["gen_slot"]) < rx["pdb_slots"])
    rx = rx.assign(ok=ok)
    key = ["packet_id", "rx_id"]
    rx = rx.sort_values(key + ["attempt", "slot"], kind="stable")
    first = rx.groupby(key, sort=True).first()
    hits = rx[rx["ok"]].groupby(key, sort=True).first()
    out = pd.DataFrame({
        "packet_id": first.index.get_level_values(0),
        "tx_id": first["tx_id"].to_numpy(),
        "rx_id": first.index.get_level_values(1),
        "gen_slot": first["gen_slot"].to_numpy(),
        "size_bytes": first["size_bytes"].to_numpy(),
        "distance_m": first["distance_m"].to_numpy(),
        "intended": first["intended"].fillna(0).to_numpy() > 0,
    })
    idx = pd.MultiIndex.from_frame(out[["packet_id", "rx_id"]])
    out["success"] = idx.isin(hits.index)
    out["rx_slot"] = hits["slot"].reindex(idx).to_numpy()
    out["rx_distance_m"] = hits["distance_m"].reindex(idx).to_numpy()
    flows = _flows(trace)
    out["flow"] = flows.reindex(out["packet_id"].to_numpy()).fillna(0).astype(int).to_numpy()
    return out[cols].reset_index(drop=True)


def prr_type1(oc: pd.DataFrame, bin_m: float = BIN_M, num_bins: int = NUM_BINS) -> list[dict]:
    """Per distance bin (i*bin, (i+1)*bin]: X/Y pooled over all packets; empty bins have prr None."""
    d = oc["distance_m"].to_numpy(dtype=float)
    ok = oc["success"].to_numpy(dtype=bool)
    out = []
    for i in range(num_bins):
        lo, hi = i * bin_m, (i + 1) * bin_m
        m = (d > lo) & (d <= hi)
        y = int(m.sum())
        x = int((m & ok).sum())
        out.append({"lo_m": lo, "hi_m": hi, "x": x, "y": y, "prr": x / y if y else None})
    return out


def prr_type2(oc: pd.DataFrame) -> Optional[float]:
    """S/Z over intended receivers."""
    z = oc[oc["intended"]]
    if z.empty:
        return None
    return float(z["success"].sum() / len(z))


def prr_cdf(oc: pd.DataFrame, range_m: float) -> dict:
    """Empirical CDF of per-packet PRR over receivers within (0, range]."""
    inr = oc[(oc["distance_m"] > 0) & (oc["distance_m"] <= range_m)]
    if inr.empty:
        return {"values": [], "cdf": []}
    per = inr.groupby("packet_id")["success"].mean().to_numpy(dtype=float)
    return _cdf(list(per))


def pir_intervals(oc: pd.DataFrame, slot_s: float, kind: int = 1, distance_m: Optional[float] = None) -> list[float]:
    """Gaps (s) between successive successes of different packets per (tx, rx, flow).

    Type 1 keeps pairs within (0, D] at both reception times; type 2 keeps
    intended receivers.
    """
    ok = oc[oc["success"]]
    if kind == 2:
        ok = ok[ok["intended"]]
    elif kind != 1:
        raise ValueError(f"PIR type must be 1 or 2, got {kind}")
    ok = ok.sort_values(["tx_id", "rx_id", "flow", "rx_slot", "packet_id"], kind="stable")
    gaps: list[float] = []
    for _, g in ok.groupby(["tx_id", "rx_id", "flow"], sort=True):
        slots = g["rx_slot"].to_numpy(dtype=float)
        dist = g["rx_distance_m"].to_numpy(dtype=float)
        for a in range(1, len(g)):
            if kind == 1 and distance_m is not None:
                if not (0 < dist[a - 1] <= distance_m and 0 < dist[a] <= distance_m):
                    continue
            gaps.append(float((slots[a] - slots[a - 1]) * slot_s))
    return gaps


def throughput_bps(size_bytes: float, delay_s: float, slot_s: float) -> float:
    return size_bytes * 8.0 / max(delay_s, slot_s)


def throughput(oc: pd.DataFrame, slot_s: float) -> dict:
    """Mean per-packet throughput of delivered packets, per (tx, flow) and overall."""
    ok = oc[oc["success"]]
    if ok.empty:
        return {"mean_bps": None, "flows": 0}
    # Delivery completes at the end of the receiving slot.
    delay = (ok["rx_slot"] - ok["gen_slot"] + 1) * slot_s
    bps = ok["size_bytes"].to_numpy(dtype=float) * 8.0 / np.maximum(delay.to_numpy(dtype=float), slot_s)
    per_flow = pd.Series(bps).groupby([ok["tx_id"].to_numpy(), ok["flow"].to_numpy()]).mean()
    return {"mean_bps": float(per_flow.mean()), "flows": int(len(per_flow))}


def _mean(xs: list[float]) -> Optional[float]:
    return float(sum(xs) / len(xs)) if xs else None


def _cdf(xs: list[float]) -> dict:
    # Intervals are whole slots, so the distinct values stay few.
    vals, counts = np.unique(np.round(xs, 9), return_counts=True)
    cum = np.cumsum(counts) / max(len(xs), 1)
    return {"values": [float(v) for v in vals], "cdf": [float(c) for c in cum]}


def mean_cbr(cbr: pd.DataFrame, warmup_slot: int = 0) -> Optional[float]:
    s = cbr[(cbr["action"] == "sample") & (cbr["slot"] >= warmup_slot)]
    if s.empty:
        return None
    return float(s["cbr"].mean())


def summarize(trace: pd.DataFrame, cbr: pd.DataFrame, params: MetricParams) -> dict:
    gen = trace[trace["event"] == "gen"]
    gen = gen[gen["slot"] >= params.warmup_slot]
    oc = outcomes(trace, params.warmup_slot)
    d = params.pir_distance_m if params.pir_distance_m is not None else params.baseline_range_m
    pir1 = pir_intervals(oc, params.slot_s, 1, d)
    pir2 = pir_intervals(oc, params.slot_s, 2)
    return {
        "packets": int(len(gen)),
        "receptions": int(len(oc)),
        "prr_bins": prr_type1(oc),
        "prr_type2": prr_type2(oc),
        "prr_cdf": prr_cdf(oc, params.baseline_range_m),
        "pir_type1": {"distance_m": d, "mean_s": _mean(pir1), "count": len(pir1),
                      **_cdf(pir1)},
        "pir_type2": {"mean_s": _mean(pir2), "count": len(pir2), **_cdf(pir2)},
        "throughput": throughput(oc, params.slot_s),
        "mean_cbr": mean_cbr(cbr, params.warmup_slot),
    }
