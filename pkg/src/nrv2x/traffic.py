"""Application traffic models and per-UE packet sources."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

P1_PATTERN = (300, 190, 190, 190, 190)
P2_SIZES = (1200, 800)
P2_PROBS = (0.2, 0.8)
P3_SIZES = (30000, 40000, 50000, 60000)
A1_SIZES = tuple(range(200, 2001, 200))
A2_SIZES = tuple(range(10000, 30001, 4000))

MODELS = ("P1", "P2", "P3", "A1", "A2")
PDB_MS = {"P1": 100.0, "P2": 10.0, "P3": 30.0, "A1": 50.0, "A2": 10.0}
PERIOD_MS = {"P1": 100.0, "P2": 10.0, "P3": 30.0}
DEFAULT_PRIORITY = {"P1": 5, "P2": 4, "P3": 3, "A1": 4, "A2": 3}


def support(model: str) -> tuple[int, ...]:
    return {"P1": P1_PATTERN, "P2": P2_SIZES, "P3": P3_SIZES, "A1": A1_SIZES, "A2": A2_SIZES}[model]


def is_periodic(model: str) -> bool:
    return model in PERIOD_MS


@dataclass
class TrafficState:
    cursor: int = 0  # position in the P1 size pattern


def next_arrival(model: str, state: TrafficState, rng: np.random.Generator) -> tuple[float, int, float]:
    """(inter-arrival ms, payload bytes, PDB ms) of the next packet."""
    if model == "P1":
        size = P1_PATTERN[state.cursor]
        state.cursor = (state.cursor + 1) % len(P1_PATTERN)
        return 100.0, size, PDB_MS[model]
    if model == "P2":
        return 10.0, P2_SIZES[0] if rng.random() < P2_PROBS[0] else P2_SIZES[1], PDB_MS[model]
    if model == "P3":
        return 30.0, int(rng.choice(P3_SIZES)), PDB_MS[model]
    if model == "A1":
        return 50.0 + rng.exponential(50.0), int(rng.choice(A1_SIZES)), PDB_MS[model]
    if model == "A2":
        return 10.0 + rng.exponential(10.0), int(rng.choice(A2_SIZES)), PDB_MS[model]
    raise ValueError(f"unknown traffic model {model!r}")


@dataclass
class Packet:
    packet_id: int
    source: int
    gen_slot: int
    size_bytes: int
    pdb_ms: float
    priority: int
    cast: str = "broadcast"  # broadcast | groupcast | unicast
    members: tuple[int, ...] = ()  # intended receivers for groupcast / unicast
    feedback_option: Optional[int] = None  # 1 or 2 for groupcast with feedback
    range_m: Optional[float] = None
    flow: int = 0


@dataclass
class PacketSource:
    """One periodic or aperiodic flow at one UE.

    Periodic models start at a uniform random phase within one period and the
    P1 size pattern starts at a uniform random position.
    """

    ue: int
    model: str
    rng: np.random.Generator
    slots_per_ms: float
    flow: int = 0
    state: TrafficState = field(default_factory=TrafficState)
    next_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.model not in MODELS:
            raise ValueError(f"unknown traffic model {self.model!r}")
        if self.model == "P1":
            self.state.cursor = int(self.rng.integers(len(P1_PATTERN)))
        if is_periodic(self.model):
            self.next_ms = float(self.rng.uniform(0.0, PERIOD_MS[self.model]))
        else:
            self.next_ms = float(self.rng.uniform(0.0, 50.0 if self.model == "A1" else 10.0))
        self._pending = self._draw()

    def _draw(self) -> tuple[float, int, float]:
        return next_arrival(self.model, self.state, self.rng)

    @property
    def next_slot(self) -> int:
        return int(np.ceil(self.next_ms * self.slots_per_ms - 1e-9))

    def pop(self) -> tuple[int, int, float]:
        """Emit the due packet as (generation slot, size, PDB ms) and schedule the next."""
        slot = self.next_slot
        gap, size, pdb = self._pending
        self.next_ms += gap
        self._pending = self._draw()
        return slot, size, pdb
