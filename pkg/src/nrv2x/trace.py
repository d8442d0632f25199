"""Row buffers and CSV writers for trace.csv and cbr_timeseries.csv.

Floats are rounded to a fixed number of decimals and written with a fixed
format so that identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Any, Sequence

TRACE_COLUMNS = (
    "slot", "event", "tx_id", "rx_id", "packet_id", "attempt", "pool_slot", "sc_start", "sc_len",
    "mcs", "tx_power_dbm", "distance_m", "sinr_db", "rsrp_dbm", "sci_ok", "tb_ok", "intended",
    "gen_slot", "pdb_slots", "size_bytes", "info",
)

CBR_COLUMNS = ("slot", "ue", "cbr", "cr", "cr_projected", "limit", "action")

DECIMALS = 4


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        r = round(v, DECIMALS)
        return f"{r + 0.0:.{DECIMALS}f}"  # + 0.0 folds -0.0 into 0.0
    return str(v)


class RowBuffer:
    def __init__(self, columns: Sequence[str]) -> None:
        self.columns = tuple(columns)
        self._index = {c: i for i, c in enumerate(self.columns)}
        self.rows: list[tuple] = []

    def add(self, **fields: Any) -> None:
        row = [None] * len(self.columns)
        for k, v in fields.items():
            row[self._index[k]] = v
        self.rows.append(tuple(row))

    def __len__(self) -> int:
        return len(self.rows)

    def write(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            w.writerows([_fmt(v) for v in row] for row in self.rows)


def trace_buffer() -> RowBuffer:
    return RowBuffer(TRACE_COLUMNS)


def cbr_buffer() -> RowBuffer:
    return RowBuffer(CBR_COLUMNS)
