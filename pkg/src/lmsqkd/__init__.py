"""Simulator and security analysis for a Bell-state mediated semi-quantum key distribution protocol."""
from .errors import AbortInsufficientSample, ContractViolation
from .protocol import RoundRecord, SessionConfig, SessionTranscript, run_session
from .strategies import AttackStrategy, CollectiveParams

__all__ = [
    "AbortInsufficientSample",
    "AttackStrategy",
    "CollectiveParams",
    "ContractViolation",
    "RoundRecord",
    "SessionConfig",
    "SessionTranscript",
    "run_session",
]
__version__ = "0.1.0"
