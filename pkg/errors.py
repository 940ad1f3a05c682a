# errors.py
from __future__ import annotations

from typing import Any, List


class SeamgraphError(RuntimeError):
    """Base class for every failure raised by this project."""


class DataError(SeamgraphError):
    """Bad input data: syntax, schema, validation, geometry or files."""


# ---------- pattern documents ----------
class PatternSyntaxError(DataError):
    pass


class PatternSchemaError(DataError):
    pass


class PatternValidationError(DataError):
    def __init__(self, violations: List[Any]):
        self.violations = list(violations)
        shown = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"Pattern failed validation: {shown}{more}")


class UnsupportedConstructError(DataError):
    def __init__(self, construct: str, detail: str = ""):
        self.construct = construct
        msg = f"Unsupported construct '{construct}'"
        super().__init__(f"{msg}: {detail}" if detail else msg)


# ---------- geometry / transforms ----------
class PreprocessingError(DataError):
    pass


class MergeError(DataError):
    pass


class TransformError(DataError):
    pass


# ---------- learning / io ----------
class DatasetError(DataError):
    pass


class CheckpointError(DataError):
    pass


class ConfigError(DataError):
    pass


class ShapeMismatchError(DataError, ValueError):
    pass


class NumericalError(SeamgraphError, ArithmeticError):
    """Non-finite values inside the solver (pathological scores)."""


class EmptyEvaluationWarning(UserWarning):
    """A metric was asked to summarise zero patterns."""
