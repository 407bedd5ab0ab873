"""Exception hierarchy shared by every byzagg module."""


class ByzAggError(Exception):
    """Base class for all library errors."""


class DivisionByZero(ByzAggError, ZeroDivisionError):
    pass


class EmbeddingOverflow(ByzAggError, OverflowError):
    pass


class DuplicateEvalPoint(ByzAggError, ValueError):
    pass


class DecodingFailure(ByzAggError):
    """More corrupted evaluations than the decoder was allowed to correct."""


class InvalidGradient(ByzAggError, ValueError):
    pass


class OverflowSuspected(ByzAggError, OverflowError):
    pass


class FieldTooSmall(ByzAggError, ValueError):
    def __init__(self, q: int, minimal: int):
        super().__init__(f"field size {q} below required minimum {minimal}")
        self.q = q
        self.minimal = minimal


class InsufficientClients(ByzAggError, ValueError):
    pass


class DealerExcluded(ByzAggError):
    def __init__(self, dealer: int, reason: str = ""):
        super().__init__(f"dealer {dealer} excluded" + (f": {reason}" if reason else ""))
        self.dealer = dealer


class ConfigInvalid(ByzAggError, ValueError):
    pass


class ProtocolAbort(ByzAggError):
    def __init__(self, step: str, reason: str):
        super().__init__(f"protocol aborted at {step}: {reason}")
        self.step = step
        self.reason = reason


class InvalidAttackTarget(ByzAggError, ValueError):
    pass


class InvalidLoss(ByzAggError, ValueError):
    pass
