"""Redundant, checkpointed processing of a partitioning by worker processes."""

from .coordinator import (
    Coordinator,
    GridResult,
    LedgerEntry,
    Outcome,
    ReplicaState,
    Validation,
    Verdict,
    generate_work,
    load_journal,
    num_units,
    run_grid,
    sat_claim_holds,
    validate_result,
)
from .protocol import MsgType, ProtocolError, ResultStatus, WorkResult, WorkUnit

__all__ = [
    "Coordinator",
    "GridResult",
    "LedgerEntry",
    "MsgType",
    "Outcome",
    "ProtocolError",
    "ReplicaState",
    "ResultStatus",
    "Validation",
    "Verdict",
    "WorkResult",
    "WorkUnit",
    "generate_work",
    "load_journal",
    "num_units",
    "run_grid",
    "sat_claim_holds",
    "validate_result",
]
