"""Run configuration: schema, loading and validation.

A configuration is a JSON object.  Every field has a default, so ``{}`` is a
valid highway run.  ``load_config`` reports the first problem as a
``ConfigError`` naming the dotted key path, the allowed values and the value
that was given.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .phy_frame import (
    COMM_RANGES_M,
    PSCCH_PRB_SIZES,
    PSCCH_SYMBOLS,
    PSFCH_CS_PAIRS,
    PSFCH_MIN_GAPS,
    PSFCH_PERIODS,
    RRI_VALUES_MS,
    SUBCHANNEL_SIZES,
    ZONE_SIDES_M,
    Numerology,
    PsfchConfig,
    ResourcePool,
    allowed_scs_khz,
    frequency_range,
)
from .radio import MCS_SPECTRAL_EFFICIENCY
from .traffic import DEFAULT_PRIORITY, MODELS


class ConfigError(Exception):
    """Invalid configuration; ``path`` is the dotted key, or empty for parse errors."""

    def __init__(self, message: str, path: str = "", allowed: Any = None, value: Any = None,
                 kind: str = "validation") -> None:
        self.path = path
        self.allowed = allowed
        self.value = value
        self.kind = kind
        super().__init__(message)


def _one_of(name: str, value: Any, allowed) -> Any:
    if value not in allowed:
        raise ValueError(f"{name} must be one of {_fmt_allowed(allowed)}")
    return value


def _fmt_allowed(allowed) -> str:
    vals = list(allowed)
    if len(vals) > 12:
        return f"{{{vals[0]}, {vals[1]}, ..., {vals[-1]}}}"
    return "{" + ", ".join(str(v) for v in vals) + "}"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class RoadConfig(_Model):
    length_m: float = Field(2000.0, ge=0)
    highway_speed_kmh: float = 140.0
    lane_width_m: Optional[float] = Field(None, gt=0)  # 4 m highway, 3.5 m urban
    block_x_m: float = Field(433.0, gt=0)
    block_y_m: float = Field(250.0, gt=0)
    blocks_x: int = Field(3, ge=3)
    blocks_y: int = Field(3, ge=3)

    @field_validator("highway_speed_kmh")
    @classmethod
    def _speed(cls, v: float) -> float:
        return _one_of("highway speed", v, (70, 140))


class DroppingConfig(_Model):
    option: Literal["A", "B", "C"] = "A"
    num_vehicles: Optional[int] = Field(None, ge=0)


class NumerologyConfig(_Model):
    mu: int = 0
    scs_khz: Optional[int] = None
    extended_cp: bool = False

    @field_validator("mu")
    @classmethod
    def _mu(cls, v: int) -> int:
        return _one_of("mu", v, (0, 1, 2, 3))

    @model_validator(mode="after")
    def _scs(self) -> "NumerologyConfig":
        derived = 15 * 2**self.mu
        if self.scs_khz is None:
            self.scs_khz = derived
        elif self.scs_khz != derived:
            raise ValueError(f"scs_khz {self.scs_khz} contradicts mu={self.mu} ({derived} kHz)")
        if self.extended_cp and self.mu != 2:
            raise ValueError("extended_cp is only allowed with mu=2")
        return self


class PsfchSection(_Model):
    period: int = 0
    min_gap: int = 2
    cs_pairs: int = 1
    per_pssch_subchannels: bool = True
    prb_bitmap: Optional[list[int]] = None
    offset: int = Field(0, ge=0)

    @field_validator("period")
    @classmethod
    def _period(cls, v: int) -> int:
        return _one_of("PSFCH period", v, PSFCH_PERIODS)

    @field_validator("min_gap")
    @classmethod
    def _gap(cls, v: int) -> int:
        return _one_of("PSFCH minimum gap", v, PSFCH_MIN_GAPS)

    @field_validator("cs_pairs")
    @classmethod
    def _cs(cls, v: int) -> int:
        return _one_of("cyclic-shift pairs", v, PSFCH_CS_PAIRS)


class PoolConfig(_Model):
    num_subchannels: int = Field(5, ge=1, le=27)
    subchannel_size: int = 10
    slot_bitmap: list[int] = Field(default_factory=lambda: [1] * 10)
    sl_symbols: int = 14
    pscch_symbols: int = 2
    pscch_prbs: int = 10
    psfch: PsfchSection = Field(default_factory=PsfchSection)
    rri_list_ms: list[int] = Field(default_factory=lambda: [100])
    n_max: int = Field(32, ge=1, le=32)
    max_n_sci: int = 3

    @field_validator("subchannel_size")
    @classmethod
    def _sub(cls, v: int) -> int:
        return _one_of("sub-channel size", v, SUBCHANNEL_SIZES)

    @field_validator("pscch_symbols")
    @classmethod
    def _ps(cls, v: int) -> int:
        return _one_of("PSCCH symbols", v, PSCCH_SYMBOLS)

    @field_validator("pscch_prbs")
    @classmethod
    def _pp(cls, v: int) -> int:
        return _one_of("PSCCH PRBs", v, PSCCH_PRB_SIZES)

    @field_validator("max_n_sci")
    @classmethod
    def _nsci(cls, v: int) -> int:
        return _one_of("max_n_sci", v, (2, 3))

    @field_validator("rri_list_ms")
    @classmethod
    def _rri(cls, v: list[int]) -> list[int]:
        if not 1 <= len(v) <= 16:
            raise ValueError("rri_list_ms holds 1 to 16 values")
        for r in v:
            _one_of("each RRI", r, RRI_VALUES_MS)
        return v


class TrafficConfig(_Model):
    model: str = "P1"
    priority: Optional[int] = Field(None, ge=1, le=8)
    cast: Literal["broadcast", "groupcast", "unicast"] = "broadcast"
    group_size: int = Field(3, ge=1)
    feedback_option: Optional[int] = None
    range_m: Optional[int] = None  # default: 320 highway, 150 urban
    zone_side_m: int = 50

    @field_validator("model")
    @classmethod
    def _model(cls, v: str) -> str:
        return _one_of("traffic model", v, MODELS)

    @field_validator("feedback_option")
    @classmethod
    def _fo(cls, v: Optional[int]) -> Optional[int]:
        return v if v is None else _one_of("feedback option", v, (1, 2))

    @field_validator("range_m")
    @classmethod
    def _range(cls, v: Optional[int]) -> Optional[int]:
        return v if v is None else _one_of("communication range", v, COMM_RANGES_M)

    @field_validator("zone_side_m")
    @classmethod
    def _zone(cls, v: int) -> int:
        return _one_of("zone side", v, ZONE_SIDES_M)


class Mode2Config(_Model):
    t1_slots: Optional[int] = Field(None, ge=0)  # default: T_proc,1
    t2_policy: Literal["pdb", "t2min"] = "pdb"
    rri_ms: Optional[int] = None  # default: model period, or 0 for aperiodic models
    keep_probability: float = Field(0.0, ge=0.0, le=0.8)
    n_tx: int = Field(1, ge=1, le=32)
    harq: Literal["blind", "feedback"] = "blind"
    x_percent: int = 20
    rsrp_threshold_base_dbm: float = -100.0
    rsrp_threshold_step_db: float = 2.0
    sensing_window_ms: int = 1100
    mcs_list: list[int] = Field(default_factory=lambda: [9, 13, 17, 20, 24, 27])
    max_l_pssch: Optional[int] = Field(None, ge=1)
    t_gap_slots: Optional[int] = Field(None, ge=1)
    reevaluation: Literal["off", "once", "every_slot"] = "once"
    preemption: bool = False
    preemption_priority_threshold: Optional[int] = Field(None, ge=1, le=8)

    @field_validator("x_percent")
    @classmethod
    def _x(cls, v: int) -> int:
        return _one_of("x_percent", v, (20, 35, 50))

    @field_validator("sensing_window_ms")
    @classmethod
    def _t0(cls, v: int) -> int:
        return _one_of("sensing window", v, (100, 1100))

    @field_validator("mcs_list")
    @classmethod
    def _mcs(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("mcs_list must not be empty")
        for m in v:
            _one_of("each MCS", m, range(len(MCS_SPECTRAL_EFFICIENCY)))
        return sorted(set(v))

    @field_validator("rri_ms")
    @classmethod
    def _rri(cls, v: Optional[int]) -> Optional[int]:
        return v if v is None else _one_of("rri_ms", v, RRI_VALUES_MS)


class PowerSection(_Model):
    p_max_dbm: float = Field(23.0, le=33.0)
    dl_enabled: bool = False
    p0_dl_dbm: float = -80.0
    alpha_dl: float = Field(1.0, ge=0.0, le=1.0)
    sl_enabled: bool = False
    p0_sl_dbm: float = -80.0
    alpha_sl: float = Field(1.0, ge=0.0, le=1.0)
    p0_psfch_dbm: float = -80.0
    alpha_psfch: float = Field(1.0, ge=0.0, le=1.0)
    p0_sssb_dbm: float = -80.0
    alpha_sssb: float = Field(1.0, ge=0.0, le=1.0)
    rsrp_ema_coeff: float = Field(0.25, gt=0.0, le=1.0)
    max_psfch_tx: int = Field(1, ge=1)


class CongestionSection(_Model):
    rssi_threshold_index: int = Field(9, ge=0, le=45)
    cbr_window_slots: int = Field(100, ge=1)
    cr_a: int = Field(999, ge=1)
    cr_b: int = Field(0, ge=0)
    cbr_upper: list[float] = Field(default_factory=lambda: [1.0])
    cr_limit: list[list[float]] = Field(default_factory=lambda: [[1.0] * 8])
    processing_capability: int = 1
    power_step_db: float = Field(3.0, gt=0)
    sample_every_slots: int = Field(100, ge=1)

    @field_validator("processing_capability")
    @classmethod
    def _cap(cls, v: int) -> int:
        return _one_of("processing capability", v, (1, 2))

    @model_validator(mode="after")
    def _window(self) -> "CongestionSection":
        if not 2 * self.cr_b < self.cr_a + self.cr_b + 1:
            raise ValueError("cr_b must be below (cr_a + cr_b + 1) / 2")
        return self


class SyncSection(_Model):
    mode: Literal["gnss_based", "gnb_based", "disabled"] = "disabled"
    gnss_available: bool = True
    gnb_positions: list[tuple[float, float]] = Field(default_factory=list)
    gnb_power_dbm: float = 46.0
    coverage_rsrp_dbm: float = -110.0
    network_id: int = Field(7, ge=1, le=335)
    network_sssb: Optional[Literal["tx", "no_tx"]] = None
    syncref_rsrp_threshold_dbm: float = -115.0
    sssb_rsrp_threshold_dbm: float = -95.0
    disable_levels_4_to_6: bool = False
    require_common_reference: bool = False


class ChannelSection(_Model):
    blocker_mode: Literal["probabilistic", "geometric"] = "probabilistic"
    decorrelation_m: Optional[float] = Field(None, gt=0)  # 25 m highway, 10 m urban
    fading_margin_db: float = 0.0
    noise_figure_db: Optional[float] = None
    decode_mode: Literal["threshold", "logistic"] = "threshold"
    logistic_slope: float = Field(2.0, gt=0)
    implementation_margin_db: float = 3.0
    sci_offset_db: float = 3.0
    tb_thresholds_db: Optional[list[float]] = None


class EngineSection(_Model):
    workers: int = Field(1, ge=1)
    trace_max_distance_m: float = Field(520.0, gt=0)


class SimConfig(_Model):
    scenario: Literal["highway", "urban_grid"] = "highway"
    road: RoadConfig = Field(default_factory=RoadConfig)
    dropping: DroppingConfig = Field(default_factory=DroppingConfig)
    numerology: NumerologyConfig = Field(default_factory=NumerologyConfig)
    carrier_ghz: float = 6.0
    pool: PoolConfig = Field(default_factory=PoolConfig)
    traffic: TrafficConfig = Field(default_factory=TrafficConfig)
    mode2: Mode2Config = Field(default_factory=Mode2Config)
    power: PowerSection = Field(default_factory=PowerSection)
    congestion: CongestionSection = Field(default_factory=CongestionSection)
    sync: SyncSection = Field(default_factory=SyncSection)
    channel: ChannelSection = Field(default_factory=ChannelSection)
    engine: EngineSection = Field(default_factory=EngineSection)
    seed: int = Field(1, ge=0, lt=2**64)
    duration_s: float = Field(10.0, ge=0)
    warmup_s: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _cross(self) -> "SimConfig":
        fr = frequency_range(self.carrier_ghz)
        scs = self.numerology.scs_khz
        if scs not in allowed_scs_khz(self.carrier_ghz):
            raise ValueError(f"{scs} kHz SCS is not allowed in {fr}; allowed {allowed_scs_khz(self.carrier_ghz)}")
        if self.scenario == "urban_grid" and self.dropping.option == "C":
            raise ValueError("dropping option C is defined for the highway only")
        if self.mode2.n_tx > self.pool.n_max:
            raise ValueError(f"n_tx {self.mode2.n_tx} exceeds pool n_max {self.pool.n_max}")
        if self.traffic.cast == "groupcast" and self.mode2.harq == "feedback" and self.traffic.feedback_option is None:
            raise ValueError("groupcast with feedback needs traffic.feedback_option")
        if self.mode2.harq == "feedback" and self.pool.psfch.period == 0:
            raise ValueError("HARQ feedback needs PSFCH (pool.psfch.period > 0)")
        if self.mode2.max_l_pssch is not None and self.mode2.max_l_pssch > self.pool.num_subchannels:
            raise ValueError("max_l_pssch exceeds the pool's sub-channels")
        self.build_pool()  # surfaces pool-level constraints such as M = k * N * L
        return self

    # Derived views used by the engine -------------------------------------------------

    def build_pool(self) -> ResourcePool:
        p = self.pool
        return ResourcePool(
            numerology=Numerology(self.numerology.mu, self.numerology.extended_cp),
            num_subchannels=p.num_subchannels,
            subchannel_size=p.subchannel_size,
            slot_bitmap=tuple(p.slot_bitmap),
            sl_symbols=p.sl_symbols,
            pscch_symbols=p.pscch_symbols,
            pscch_prbs=p.pscch_prbs,
            psfch=PsfchConfig(
                period=p.psfch.period,
                min_gap=p.psfch.min_gap,
                cs_pairs=p.psfch.cs_pairs,
                per_pssch_subchannels=p.psfch.per_pssch_subchannels,
                prb_bitmap=None if p.psfch.prb_bitmap is None else tuple(p.psfch.prb_bitmap),
                offset=p.psfch.offset,
            ),
        )

    def priority(self) -> int:
        return self.traffic.priority or DEFAULT_PRIORITY[self.traffic.model]

    def range_m(self) -> float:
        if self.traffic.range_m is not None:
            return float(self.traffic.range_m)
        return 320.0 if self.scenario == "highway" else 150.0

    def decorrelation_m(self) -> float:
        if self.channel.decorrelation_m is not None:
            return self.channel.decorrelation_m
        return 25.0 if self.scenario == "highway" else 10.0

    def lane_width_m(self) -> float:
        if self.road.lane_width_m is not None:
            return self.road.lane_width_m
        return 4.0 if self.scenario == "highway" else 3.5


def _path(loc: tuple) -> str:
    return ".".join(str(p) for p in loc if not str(p).startswith("function-"))


def validate_config(data: Any) -> SimConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be an object", kind="parse", value=data)
    try:
        return SimConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _path(err["loc"])
        ctx = err.get("ctx") or {}
        allowed = ctx.get("expected")
        msg = err["msg"].removeprefix("Value error, ")
        where = path or "<root>"
        raise ConfigError(f"{where}: {msg} (given {err.get('input')!r})", path=path, allowed=allowed,
                          value=err.get("input")) from None
    except ValueError as exc:  # raised by pool construction inside validators
        raise ConfigError(str(exc)) from None


def load_config(path: Union[str, Path]) -> SimConfig:
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise ConfigError(f"{path}: empty configuration file", kind="parse")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}", kind="parse") from None
    return validate_config(data)


def json_schema() -> dict:
    return SimConfig.model_json_schema()
