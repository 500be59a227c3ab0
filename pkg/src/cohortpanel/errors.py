"""Exception types shared across the toolkit."""


class CohortPanelError(Exception):
    """Base class for all toolkit errors."""


class RankDeficientError(CohortPanelError):
    """Design matrix lost full column rank during factorization."""

    def __init__(self, column: int, message: str | None = None):
        self.column = column
        super().__init__(message or f"rank deficient design matrix (column {column})")


class DomainError(CohortPanelError):
    """Argument outside the mathematical domain of a function."""


class EmptyInputError(CohortPanelError):
    """An operation that needs data received none."""


class UnknownCategoryError(CohortPanelError):
    """Unrecognized categorical label in input data."""

    def __init__(self, label: str):
        self.label = label
        super().__init__(f"unknown category: {label!r}")


class UnknownProvinceError(CohortPanelError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"province not in region map: {name!r}")


class MissingCpiYearError(CohortPanelError):
    def __init__(self, year: int):
        self.year = year
        super().__init__(f"CPI table has no entry for year {year}")


class MissingColumnError(CohortPanelError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"required column missing from file header: {name!r}")


class OutOfRangeError(CohortPanelError):
    """Value outside the configured cohort design range."""


class UnknownVariableError(CohortPanelError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"variable not present in panel: {name!r}")


class InsufficientObservationsError(CohortPanelError):
    """Too few usable rows to estimate the requested model."""


class MismatchedSpecsError(CohortPanelError):
    """Two results that must share a specification do not."""


class TooFewPeriodsError(CohortPanelError):
    """Panel is too short in the time dimension for the requested transform."""


class EmptyInstrumentColumnError(CohortPanelError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"instrument column is identically zero: {label!r}")


class UnderIdentifiedError(CohortPanelError):
    """Fewer instruments than parameters."""


class InsufficientPeriodsError(CohortPanelError):
    """Serial-correlation test order exceeds the available residual span."""


class InvalidParamsError(CohortPanelError):
    """Synthetic data-generating parameters are inconsistent."""


class ConfigError(CohortPanelError):
    """Run configuration failed validation."""


class StageError(CohortPanelError):
    """Pipeline stage failure, tagged with the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
