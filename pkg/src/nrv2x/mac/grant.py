"""Per-UE grant lifecycle: keep/reselect at cycle end, re-evaluation and pre-emption."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ..phy_frame import SlotResource
from .selection import Step1Result, reselection_counter, step2_select


@dataclass
class GrantState:
    resources: list[SlotResource]  # current TB cycle, time ordered
    rri_ms: float = 0.0  # 0 = dynamic
    rri_slots: int = 0
    counter: int = 0
    keep_probability: float = 0.0
    priority: int = 5
    l_pssch: int = 1
    mcs: int = 0
    announced: set[int] = field(default_factory=set)  # slots already signalled in an SCI

    def __post_init__(self) -> None:
        if not 0.0 <= self.keep_probability <= 0.8:
            raise ValueError("keep probability must lie in [0, 0.8]")

    def advance_cycle(self) -> None:
        """Shift the reservation pattern by one RRI for the next TB."""
        self.resources = [SlotResource(r.slot + self.rri_slots, r.sc_start, r.sc_len) for r in self.resources]
        self.announced = set()


def on_tb_cycle_end(grant: GrantState, rng: np.random.Generator) -> str:
    """Count down after a TB and its retransmissions; returns continue, keep or reselect.

    At zero the grant is kept with probability P (counter redrawn); otherwise
    the caller reselects and signals RRI 0 in its last control message.
    """
    if grant.rri_ms <= 0:
        return "reselect"
    grant.counter = max(grant.counter - 1, 0)
    if grant.counter > 0:
        return "continue"
    if rng.random() < grant.keep_probability:
        grant.counter = reselection_counter(grant.rri_ms, rng)
        return "keep"
    return "reselect"


def _replace(pending: list[SlotResource], drop: list[int], fresh: Step1Result, rng: np.random.Generator,
             t_gap: Optional[int]) -> list[SlotResource]:
    kept = [r for i, r in enumerate(pending) if i not in drop]
    avail = [c for c in fresh.candidates() if all(c.slot != k.slot for k in kept)]
    n_new = min(len(drop), len(avail))
    new = step2_select(avail, n_new, rng, t_gap=t_gap, preselected=kept)
    return sorted(kept + new, key=lambda r: r.slot)


def reevaluate(pending: list[SlotResource], fresh: Step1Result, rng: np.random.Generator,
               t_gap: Optional[int] = None, frozen: Iterable[int] = ()) -> tuple[list[SlotResource], list[int]]:
    """Replace pending resources that the fresh step-1 pass no longer offers.

    Resources outside the fresh window (too close to be moved) and indices in
    ``frozen`` are kept.  Returns the new resource list and the indices of
    replaced resources.
    """
    w = fresh.window
    skip = set(frozen)
    drop = [i for i, r in enumerate(pending)
            if i not in skip and w.first_slot <= r.slot <= w.n + w.t2 and not fresh.is_available(r)]
    if not drop:
        return list(pending), []
    return _replace(pending, drop, fresh, rng, t_gap), drop


def preemption_applies(own_priority: int, other_priority: int, pool_threshold: Optional[int]) -> bool:
    # Smaller number = higher priority.
    if other_priority >= own_priority:
        return False
    return pool_threshold is None or other_priority < pool_threshold


def preempt_check(pending: list[SlotResource], own_priority: int, fresh: Step1Result, rng: np.random.Generator,
                  pool_threshold: Optional[int] = None, t_gap: Optional[int] = None,
                  frozen: Iterable[int] = ()) -> tuple[list[SlotResource], list[int]]:
    """Free reserved resources now claimed by a higher-priority UE and reselect them."""
    w = fresh.window
    skip = set(frozen)
    drop = []
    for i, r in enumerate(pending):
        if i in skip or not (w.first_slot <= r.slot <= w.n + w.t2) or fresh.is_available(r):
            continue
        if preemption_applies(own_priority, fresh.conflict_priority(r), pool_threshold):
            drop.append(i)
    if not drop:
        return list(pending), []
    return _replace(pending, drop, fresh, rng, t_gap), drop
