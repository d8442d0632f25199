"""Time/frequency structure of a sidelink resource pool.

Covers numerology, the pool's slot bitmap, sub-channel geometry, PSFCH timing
and resource mapping, and zone identifiers.  Everything here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

SUBCHANNEL_SIZES = (10, 12, 15, 20, 25, 50, 75, 100)
PSCCH_PRB_SIZES = (10, 12, 15, 20, 25)
PSCCH_SYMBOLS = (2, 3)
PSFCH_PERIODS = (0, 1, 2, 4)
PSFCH_MIN_GAPS = (2, 3)
PSFCH_CS_PAIRS = (1, 2, 3, 6)
ZONE_SIDES_M = (5, 10, 20, 30, 40, 50)
COMM_RANGES_M = (
    20, 50, 80, 100, 120, 150, 180, 200, 220, 250, 270, 300,
    320, 350, 370, 400, 420, 450, 480, 500, 550, 600, 700, 1000,
)
RRI_VALUES_MS = (0, *range(1, 100), *range(100, 1001, 100))
BITMAP_PERIOD_MS = 10240
ZONE_GRID = 64  # 64 x 64 tiles = 2**12 ids

# Initial cyclic shift m0 per pair, indexed by the number of pairs Q.
_M0_BY_Q = {1: (0,), 2: (0, 3), 3: (0, 2, 4), 6: (0, 1, 2, 3, 4, 5)}
_ACK_SHIFT = 6


@dataclass(frozen=True)
class Numerology:
    mu: int
    extended_cp: bool = False

    def __post_init__(self) -> None:
        if self.mu not in (0, 1, 2, 3):
            raise ValueError(f"numerology mu must be in 0..3, got {self.mu}")
        if self.extended_cp and self.mu != 2:
            raise ValueError("extended cyclic prefix is only defined for mu=2 (60 kHz)")

    @property
    def scs_khz(self) -> int:
        return 15 * 2**self.mu

    @property
    def slots_per_subframe(self) -> int:
        return 2**self.mu

    @property
    def slot_ms(self) -> float:
        return 2.0**-self.mu

    @property
    def symbols_per_slot(self) -> int:
        return 12 if self.extended_cp else 14

    def ms_to_slots(self, ms: float) -> int:
        return int(round(ms * 2**self.mu))


def frequency_range(carrier_ghz: float) -> str:
    if 0.41 <= carrier_ghz <= 7.125:
        return "FR1"
    if 24.25 <= carrier_ghz <= 52.6:
        return "FR2"
    raise ValueError(f"carrier {carrier_ghz} GHz is outside FR1 (0.41-7.125) and FR2 (24.25-52.6)")


def allowed_scs_khz(carrier_ghz: float) -> tuple[int, ...]:
    return (15, 30, 60) if frequency_range(carrier_ghz) == "FR1" else (60, 120)


def t_proc0(mu: int) -> int:
    return (1, 1, 2, 4)[mu]


def t_proc1(mu: int) -> int:
    return (3, 5, 9, 17)[mu]


@dataclass(frozen=True)
class SlotResource:
    """One transmission opportunity: a pool slot and a run of sub-channels."""

    slot: int
    sc_start: int
    sc_len: int

    def __post_init__(self) -> None:
        if self.sc_len < 1 or self.sc_start < 0:
            raise ValueError(f"invalid sub-channel run start={self.sc_start} len={self.sc_len}")

    @property
    def sc_stop(self) -> int:
        return self.sc_start + self.sc_len

    def overlaps(self, other: "SlotResource") -> bool:
        return (
            self.slot == other.slot
            and self.sc_start < other.sc_stop
            and other.sc_start < self.sc_stop
        )


@dataclass(frozen=True)
class PsfchConfig:
    period: int = 0  # 0 disables PSFCH
    min_gap: int = 2
    cs_pairs: int = 1
    per_pssch_subchannels: bool = True  # False: start sub-channel only
    prb_bitmap: Optional[tuple[int, ...]] = None  # None: every pool PRB usable
    offset: int = 0  # PSFCH-bearing pool slots are those with index % period == offset

    @property
    def enabled(self) -> bool:
        return self.period > 0


@dataclass(frozen=True)
class ResourcePool:
    numerology: Numerology
    num_subchannels: int
    subchannel_size: int
    slot_bitmap: tuple[int, ...] = (1,) * 10
    sl_symbols: int = 14
    pscch_symbols: int = 2
    pscch_prbs: int = 10
    psfch: PsfchConfig = field(default_factory=PsfchConfig)

    def __post_init__(self) -> None:
        if self.subchannel_size not in SUBCHANNEL_SIZES:
            raise ValueError(f"sub-channel size must be one of {SUBCHANNEL_SIZES}, got {self.subchannel_size}")
        if self.num_subchannels < 1:
            raise ValueError("pool needs at least one sub-channel")
        if not 10 <= len(self.slot_bitmap) <= 160:
            raise ValueError(f"slot bitmap length must be in 10..160, got {len(self.slot_bitmap)}")
        if any(b not in (0, 1) for b in self.slot_bitmap) or not any(self.slot_bitmap):
            raise ValueError("slot bitmap must be 0/1 with at least one sidelink slot")
        if not 7 <= self.sl_symbols <= self.numerology.symbols_per_slot:
            raise ValueError(f"sidelink symbols must be in 7..{self.numerology.symbols_per_slot}")
        if self.pscch_symbols not in PSCCH_SYMBOLS:
            raise ValueError(f"PSCCH symbols must be one of {PSCCH_SYMBOLS}")
        if self.pscch_prbs not in PSCCH_PRB_SIZES:
            raise ValueError(f"PSCCH PRBs must be one of {PSCCH_PRB_SIZES}")
        # Equality is allowed so that 10-PRB sub-channels remain usable.
        if self.pscch_prbs > self.subchannel_size:
            raise ValueError("PSCCH cannot be wider than one sub-channel")
        p = self.psfch
        if p.period not in PSFCH_PERIODS:
            raise ValueError(f"PSFCH period must be one of {PSFCH_PERIODS}")
        if p.enabled:
            if p.min_gap not in PSFCH_MIN_GAPS:
                raise ValueError(f"PSFCH minimum gap K must be one of {PSFCH_MIN_GAPS}")
            if p.cs_pairs not in PSFCH_CS_PAIRS:
                raise ValueError(f"PSFCH cyclic-shift pairs must be one of {PSFCH_CS_PAIRS}")
            if not 0 <= p.offset < p.period:
                raise ValueError("PSFCH slot offset must lie in [0, period)")
            if p.prb_bitmap is not None and len(p.prb_bitmap) != self.num_prbs:
                raise ValueError("PSFCH PRB bitmap length must equal the pool PRB count")
            if self.psfch_prb_count % (p.period * self.num_subchannels) != 0:
                raise ValueError(
                    f"PSFCH PRB count {self.psfch_prb_count} is not a multiple of "
                    f"N*L = {p.period * self.num_subchannels}"
                )

    @property
    def num_prbs(self) -> int:
        return self.num_subchannels * self.subchannel_size

    @cached_property
    def psfch_prbs(self) -> tuple[int, ...]:
        bitmap = self.psfch.prb_bitmap
        if bitmap is None:
            return tuple(range(self.num_prbs))
        return tuple(i for i, b in enumerate(bitmap) if b)

    @property
    def psfch_prb_count(self) -> int:
        return len(self.psfch_prbs)

    @cached_property
    def m_set(self) -> int:
        return self.psfch_prb_count // (self.psfch.period * self.num_subchannels)

    def pool_slots_per_ms(self) -> float:
        return self.numerology.slots_per_subframe * sum(self.slot_bitmap) / len(self.slot_bitmap)

    def ms_to_pool_slots(self, ms: float) -> int:
        """Duration in ms expressed as a count of pool slots (ceil, at least 1 if ms > 0)."""
        if ms <= 0:
            return 0
        return max(1, math.ceil(ms * self.pool_slots_per_ms() - 1e-9))

    def data_res_per_prb(self) -> int:
        """PSSCH resource elements per PRB in a slot, worst case over slot kinds.

        Two symbols are lost to AGC and guard, two to DMRS, and three more
        (PSFCH, its AGC copy and a guard) when PSFCH is configured.
        """
        symbols = self.sl_symbols - 4
        if self.psfch.enabled:
            symbols -= 3
        return 12 * max(symbols, 1)

    def tb_capacity_bits(self, spectral_efficiency: float, n_subchannels: int) -> int:
        res = self.data_res_per_prb() * n_subchannels * self.subchannel_size
        res -= 12 * self.pscch_symbols * self.pscch_prbs
        return int(spectral_efficiency * max(res, 0))


def _ones_before(bitmap: Sequence[int], k: int) -> int:
    b = len(bitmap)
    full, rem = divmod(k, b)
    return full * sum(bitmap) + sum(bitmap[:rem])


def pool_slot_index(absolute_slot: int, pool: ResourcePool) -> Optional[int]:
    """Ordinal of an absolute slot among the pool's sidelink slots, or None."""
    if absolute_slot < 0:
        raise ValueError("absolute slot must be non-negative")
    period = BITMAP_PERIOD_MS * pool.numerology.slots_per_subframe
    bitmap = pool.slot_bitmap
    cycle, k = divmod(absolute_slot, period)
    if not bitmap[k % len(bitmap)]:
        return None
    return cycle * _ones_before(bitmap, period) + _ones_before(bitmap, k)


def absolute_slot(pool_index: int, pool: ResourcePool) -> int:
    """Inverse of pool_slot_index."""
    period = BITMAP_PERIOD_MS * pool.numerology.slots_per_subframe
    per_period = _ones_before(pool.slot_bitmap, period)
    cycle, r = divmod(pool_index, per_period)
    bitmap = pool.slot_bitmap
    ones = sum(bitmap)
    reps, r = divmod(r, ones)
    k = reps * len(bitmap)
    for pos, bit in enumerate(bitmap):
        if bit:
            if r == 0:
                return cycle * period + k + pos
            r -= 1
    raise AssertionError("unreachable")


def is_psfch_slot(pool_slot: int, pool: ResourcePool) -> bool:
    p = pool.psfch
    return p.enabled and pool_slot % p.period == p.offset


def psfch_slot_for(pssch_slot: int, pool: ResourcePool) -> int:
    """First PSFCH-bearing pool slot at least K slots after the PSSCH slot."""
    p = pool.psfch
    if not p.enabled:
        raise ValueError("PSFCH is disabled in this pool")
    m = pssch_slot + p.min_gap
    return m + (p.offset - m) % p.period


def psfch_window_index(pssch_slot: int, pool: ResourcePool) -> int:
    """Position (0..N-1) of a PSSCH slot among the N slots mapped to its PSFCH slot."""
    p = pool.psfch
    f = psfch_slot_for(pssch_slot, pool)
    first = f - p.min_gap - p.period + 1
    return pssch_slot - first


def psfch_prb_set(slot_in_window: int, subchannel: int, pool: ResourcePool) -> tuple[int, ...]:
    """PRBs owned by one (PSSCH slot, sub-channel) pair.

    Sets are laid out slot-fastest: the first M_set PRBs go to sub-channel 0 of
    the first slot, the next M_set to sub-channel 0 of the second slot, and so on.
    """
    n = pool.psfch.period
    if not 0 <= slot_in_window < n:
        raise ValueError(f"slot-in-window index {slot_in_window} outside 0..{n - 1}")
    if not 0 <= subchannel < pool.num_subchannels:
        raise ValueError(f"sub-channel {subchannel} outside pool")
    m_set = pool.m_set
    first = (subchannel * n + slot_in_window) * m_set
    return pool.psfch_prbs[first:first + m_set]


@dataclass(frozen=True)
class PsfchResource:
    prb: int  # PRB number within the pool
    layout_index: int  # position within the candidate PRB layout
    pair: int
    cyclic_shift: int


def psfch_resource_count(pssch: SlotResource, pool: ResourcePool) -> tuple[int, int]:
    """(number of candidate PRBs, F) for a PSSCH allocation."""
    n_sc = pssch.sc_len if pool.psfch.per_pssch_subchannels else 1
    n_prb = n_sc * pool.m_set
    return n_prb, n_prb * pool.psfch.cs_pairs


def psfch_resource(
    tx_id: int,
    rx_group_id: int,
    pssch: SlotResource,
    slot_in_window: int,
    pool: ResourcePool,
    ack: bool,
    option: str = "unicast",
    group_size: Optional[int] = None,
) -> PsfchResource:
    """PSFCH PRB and cyclic shift for one feedback message.

    ``option`` is ``"unicast"``, ``"option1"`` or ``"option2"``.  Indexing is
    zero-based: index i selects PRB ``i mod n_prb`` and pair ``i div n_prb``.
    """
    if not pool.psfch.enabled:
        raise ValueError("PSFCH is disabled in this pool")
    if option not in ("unicast", "option1", "option2"):
        raise ValueError(f"unknown feedback option {option!r}")
    if option == "option1" and ack:
        raise ValueError("NACK-only feedback has no ACK cyclic shift")
    if option != "option2" and rx_group_id != 0:
        raise ValueError("member id must be 0 for unicast and NACK-only feedback")
    if pssch.sc_stop > pool.num_subchannels:
        raise ValueError("PSSCH allocation exceeds the pool")
    n_prb, f = psfch_resource_count(pssch, pool)
    if option == "option2" and group_size is not None and group_size > n_prb:
        raise ValueError(f"group of {group_size} exceeds {n_prb} PSFCH PRBs")
    n_sc = pssch.sc_len if pool.psfch.per_pssch_subchannels else 1
    layout: list[int] = []
    for c in range(pssch.sc_start, pssch.sc_start + n_sc):
        layout.extend(psfch_prb_set(slot_in_window, c, pool))
    i = (tx_id + rx_group_id) % f
    pos, pair = i % n_prb, i // n_prb
    m0 = _M0_BY_Q[pool.psfch.cs_pairs][pair]
    shift = (m0 + (_ACK_SHIFT if ack else 0)) % 12
    return PsfchResource(prb=layout[pos], layout_index=pos, pair=pair, cyclic_shift=shift)


def _check_side(side_m: float) -> None:
    if side_m not in ZONE_SIDES_M:
        raise ValueError(f"zone side must be one of {ZONE_SIDES_M}, got {side_m}")


def zone_id(x: float, y: float, side_m: float) -> int:
    """12-bit zone id; tiles are anchored at the scenario origin."""
    _check_side(side_m)
    zx = math.floor(x / side_m) % ZONE_GRID
    zy = math.floor(y / side_m) % ZONE_GRID
    return zy * ZONE_GRID + zx


def zone_distance(x: float, y: float, zid: int, side_m: float) -> float:
    """Distance from (x, y) to the centre of the nearest tile carrying ``zid``."""
    _check_side(side_m)
    if not 0 <= zid < ZONE_GRID * ZONE_GRID:
        raise ValueError(f"zone id {zid} outside 0..4095")
    zy, zx = divmod(zid, ZONE_GRID)

    def axis(coord: float, z: int) -> float:
        # Centres sit at (z + 0.5 + 64k) * side; the problem is separable per axis.
        period = ZONE_GRID * side_m
        k = round((coord - (z + 0.5) * side_m) / period)
        return min(abs(coord - (z + 0.5 + ZONE_GRID * kk) * side_m) for kk in (k - 1, k, k + 1))

    return math.hypot(axis(x, zx), axis(y, zy))
