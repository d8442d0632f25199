"""Command-line entry point: ``simulate --config <path> --out <dir>``."""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, SimConfig, load_config, validate_config
from .engine import run
from .metrics import MetricParams, read_cbr, read_trace, summarize


def metric_params(cfg: SimConfig) -> MetricParams:
    slot_s = cfg.build_pool().numerology.slot_ms / 1000.0
    warmup = int(round(cfg.warmup_s / slot_s))
    return MetricParams(slot_s=slot_s, warmup_slot=warmup, baseline_range_m=cfg.range_m())


def run_and_emit(cfg: SimConfig, out_dir: Path) -> int:
    """Run, write trace.csv / cbr_timeseries.csv / summary.json, return an exit status."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        result = run(cfg)
        trace_path = out_dir / "trace.csv"
        cbr_path = out_dir / "cbr_timeseries.csv"
        result.trace.write(trace_path)
        result.cbr.write(cbr_path)
        # Metrics come from the files just written so the summary is a function of them.
        metrics = summarize(read_trace(trace_path), read_cbr(cbr_path), metric_params(cfg))
        summary = {
            "seed": cfg.seed,
            "num_vehicles": result.num_vehicles,
            "slots": result.slots,
            "metrics": metrics,
            "config": cfg.model_dump(mode="json"),
        }
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    except OSError as exc:
        print(f"simulate: I/O error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # engine failure: report and exit nonzero
        print(f"simulate: run failed: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        traceback.print_exc(file=sys.stderr)
        return 4
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simulate", description="NR sidelink mode-2 system-level simulator")
    p.add_argument("--config", required=True, type=Path, help="JSON configuration file")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--duration", type=float, help="simulated seconds (overrides the config)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.duration is not None:
            overrides["duration_s"] = args.duration
        if overrides:
            cfg = validate_config({**cfg.model_dump(mode="json"), **overrides})
    except ConfigError as exc:
        print(f"simulate: {exc.kind} error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"simulate: cannot read config: {exc}", file=sys.stderr)
        return 2
    return run_and_emit(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
