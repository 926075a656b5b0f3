"""Exception hierarchy shared by every module of the package."""


class FedTSError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FedTSError, ValueError):
    pass


class EmptyWindowError(FedTSError, ValueError):
    """Requested window length exceeds the available rows."""


class DegenerateSignalError(FedTSError, ArithmeticError):
    """Signal has zero variance (or the regression is singular)."""


class InsufficientDataError(FedTSError, ValueError):
    pass


class NumericOverflowError(FedTSError, FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite values produced in layer {layer!r}")
        self.layer = layer


class CorruptPayloadError(FedTSError, ValueError):
    pass


class ParseError(FedTSError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}, line {line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class ShortfallError(FedTSError, ValueError):
    """Not enough simulation runs to satisfy a partition request."""


class ConfigError(FedTSError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TrainingError(FedTSError, RuntimeError):
    def __init__(self, participant: int, cause: BaseException):
        super().__init__(f"participant {participant}: {cause}")
        self.participant = participant
        self.cause = cause


class IntegrityError(FedTSError):
    pass
