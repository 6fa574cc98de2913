"""Deterministic scenario simulator."""

from .engine import (
    Action,
    AssertionResult,
    Compare,
    Expect,
    Report,
    ScheduledEvent,
    Simulation,
    Transcript,
    TranscriptEntry,
    assert_trace,
)
from .scenarios import SCENARIOS, check_issuance, export_fixtures, run_scenario, run_simulation

__all__ = [
    "Action",
    "AssertionResult",
    "Compare",
    "Expect",
    "Report",
    "SCENARIOS",
    "ScheduledEvent",
    "Simulation",
    "Transcript",
    "TranscriptEntry",
    "assert_trace",
    "check_issuance",
    "export_fixtures",
    "run_scenario",
    "run_simulation",
]
