"""Exception taxonomy shared across the package."""


class AdvTraceError(Exception):
    """Base class for all package errors."""


class ShapeError(AdvTraceError):
    """Array dimensions do not match what the operation requires."""


class LabelError(AdvTraceError):
    """Class index out of range or otherwise invalid."""


class DegenerateOutputError(AdvTraceError):
    """A tracer produced a zero-norm output; the similarity loss is undefined."""


class BudgetExhaustedError(AdvTraceError):
    """A hard-label oracle refused a query because its budget is spent."""


class InitFailureError(AdvTraceError):
    """No misclassified starting point could be found for an attack."""


class DatasetExhaustedError(AdvTraceError):
    """The dataset ran out of usable samples before enough records were made."""


class InvalidRecordError(AdvTraceError):
    """An adversarial record is internally inconsistent (e.g. att == true)."""


class ConfigError(AdvTraceError):
    """Experiment configuration is missing fields or fails validation."""


class StageInputError(AdvTraceError):
    """A pipeline stage's declared input artifact is missing."""


class CsvFormatError(AdvTraceError):
    """A CSV dataset file is malformed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
