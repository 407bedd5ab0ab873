from .engine import (
    HONEST,
    ByzantineBehavior,
    PrivateAggregationRound,
    ProtocolConfig,
    RoundResult,
    check_sizes,
    plaintext_round,
    run_round,
)
from .transcript import FEDERATOR, CommReport, Message, Transcript, comm_accounting, fit_exponent

__all__ = [
    "FEDERATOR",
    "HONEST",
    "ByzantineBehavior",
    "CommReport",
    "Message",
    "PrivateAggregationRound",
    "ProtocolConfig",
    "RoundResult",
    "Transcript",
    "check_sizes",
    "comm_accounting",
    "fit_exponent",
    "plaintext_round",
    "run_round",
]
