"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ClickPersistError(Exception):
    """Base class for all package errors."""


class ParseError(ClickPersistError):
    """A tabular input row could not be parsed."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(ClickPersistError):
    """Input parsed but violates a structural rule (duplicates, bad config, ...)."""


class MissingScenarioError(ValidationError, KeyError):
    def __init__(self, scenario_id):
        self.scenario_id = scenario_id
        ValidationError.__init__(self, f"no scenario code for scenario {scenario_id!r}")

    def __str__(self) -> str:
        return self.args[0]


class EstimationError(ClickPersistError):
    """Base class for model-fitting failures."""


class SeparationError(EstimationError):
    def __init__(self, column: str, detail: str = ""):
        self.column = column
        msg = f"perfect separation on column {column!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class CollinearityError(EstimationError):
    """Design matrix is rank deficient.

    ``dependent_sets`` holds one tuple of column names per detected linear
    dependence; each tuple is a minimal dependent set.
    """

    def __init__(self, dependent_sets: list[tuple[str, ...]]):
        self.dependent_sets = [tuple(s) for s in dependent_sets]
        sets = "; ".join("{" + ", ".join(s) + "}" for s in self.dependent_sets)
        super().__init__(f"collinear design columns: {sets}")


class ConvergenceError(EstimationError):
    def __init__(self, message: str, trace: list[dict] | None = None):
        self.trace = trace or []
        super().__init__(message)


class SingularHessianError(EstimationError):
    pass


class PositivityError(EstimationError):
    def __init__(self, employee_id, exposure_index, probability: float, floor: float):
        self.employee_id = employee_id
        self.exposure_index = exposure_index
        self.probability = probability
        super().__init__(
            f"positivity violation: employee {employee_id!r} exposure {exposure_index} "
            f"has denominator probability {probability:.3g} < {floor:g}"
        )


class WaldRankError(EstimationError):
    def __init__(self, terms: list[str], dependent: list[str]):
        self.terms = list(terms)
        self.dependent = list(dependent)
        super().__init__(
            "Wald restrictions are linearly dependent: " + ", ".join(self.dependent)
        )
