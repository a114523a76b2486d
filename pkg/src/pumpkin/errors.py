"""Exception types shared across the toolkit."""


class PumpkinError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PumpkinError):
    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class UnboundSymbol(PumpkinError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"unbound symbol {name!r}")


class NonAffine(PumpkinError):
    pass


class SequenceTooLong(PumpkinError):
    pass


class NotFound(PumpkinError):
    pass


class EmptySelection(PumpkinError):
    pass


class VectorizeError(PumpkinError):
    def __init__(self, reason, detail=""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class StreamifyError(PumpkinError):
    def __init__(self, edge, reason):
        self.edge = edge
        self.reason = reason
        super().__init__(f"cannot stream {edge}: {reason}")


class MultipumpError(PumpkinError):
    def __init__(self, reason, detail=""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class DeadlockError(PumpkinError):
    def __init__(self, message, snapshot=None):
        self.snapshot = snapshot or {}
        super().__init__(message)


class BudgetExceeded(PumpkinError):
    pass


class TraceNotEnabled(PumpkinError):
    pass


class UnknownOpCost(PumpkinError):
    pass


class ReportError(PumpkinError):
    pass


class SpecError(PumpkinError):
    pass
