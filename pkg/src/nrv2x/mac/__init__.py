"""Mode-2 MAC: sensing, selection, grants and HARQ."""

from .grant import GrantState, on_tb_cycle_end, preempt_check, preemption_applies, reevaluate
from .harq import Feedback, HarqProcess, harq_step, option1_should_nack, receiver_feedback
from .selection import (
    SelectionWindow,
    SensedEntry,
    Step1Params,
    Step1Result,
    default_rsrp_thresholds,
    reselection_counter,
    step1_exclude,
    step2_select,
    t2_min_slots,
)

__all__ = [
    "Feedback",
    "GrantState",
    "HarqProcess",
    "SelectionWindow",
    "SensedEntry",
    "Step1Params",
    "Step1Result",
    "default_rsrp_thresholds",
    "harq_step",
    "on_tb_cycle_end",
    "option1_should_nack",
    "preempt_check",
    "preemption_applies",
    "receiver_feedback",
    "reevaluate",
    "reselection_counter",
    "step1_exclude",
    "step2_select",
    "t2_min_slots",
]
