"""HARQ process bookkeeping and feedback decisions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..phy_frame import zone_distance

ACK = "ack"
NACK = "nack"


@dataclass
class HarqProcess:
    packet_id: int
    cast: str  # broadcast | unicast | groupcast
    n_resources: int
    members: tuple[int, ...] = ()
    option: Optional[int] = None  # groupcast feedback option 1 or 2
    feedback: bool = True  # False: blind retransmissions
    attempts: int = 0
    acked: set[int] = field(default_factory=set)
    finished: Optional[str] = None  # done | drop


@dataclass(frozen=True)
class Feedback:
    rx: int
    kind: str  # ack | nack


def harq_step(proc: HarqProcess, feedback: Iterable[Feedback]) -> str:
    """Decide after one attempt: retransmit, done or drop.

    ``feedback`` holds what the TX actually heard on PSFCH for that attempt;
    missing replies are silence.
    """
    heard = list(feedback)
    more = proc.attempts < proc.n_resources
    if not proc.feedback or proc.cast == "broadcast":
        return "retransmit" if more else "done"
    if proc.cast == "unicast":
        if any(f.kind == ACK for f in heard):
            return "done"
    elif proc.option == 2:
        proc.acked |= {f.rx for f in heard if f.kind == ACK}
        if set(proc.members) <= proc.acked:
            return "done"
    elif proc.option == 1:
        if not any(f.kind == NACK for f in heard):
            return "done"
    else:
        raise ValueError(f"groupcast feedback option must be 1 or 2, got {proc.option}")
    return "retransmit" if more else "drop"


def option1_should_nack(sci_decoded: bool, tb_decoded: bool, zone_id: int, range_m: float,
                        rx_x: float, rx_y: float, zone_side_m: float) -> bool:
    if not sci_decoded or tb_decoded:
        return False
    return zone_distance(rx_x, rx_y, zone_id, zone_side_m) <= range_m


def receiver_feedback(cast: str, option: Optional[int], sci_decoded: bool, tb_decoded: bool,
                      in_range: bool = True) -> Optional[str]:
    """What one receiver sends back for one attempt (None = nothing)."""
    if not sci_decoded or cast == "broadcast":
        return None
    if cast == "unicast" or option == 2:
        return ACK if tb_decoded else NACK
    if option == 1:
        return NACK if (not tb_decoded and in_range) else None
    raise ValueError(f"groupcast feedback option must be 1 or 2, got {option}")
