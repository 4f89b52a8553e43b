"""
Error Types Module

Exception hierarchy shared by every stage of the estimation pipeline.
Each error class carries the CLI exit code and a short machine token so the
command-line layer can report failures on a single parsable line.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional


class EffDidError(Exception):
    """Base class for all effdid errors"""
    exit_code: int = 1
    code: str = "error"

    def __init__(self, message: str, context: Optional[Dict] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    def one_line(self) -> str:
        """Render as `error:<code>:<class>:<message>` with newlines stripped."""
        text = " ".join(self.message.split())
        return f"error:{self.code}:{type(self).__name__}:{text}"


# --- Input errors (exit 2) ---

class PanelError(EffDidError):
    """Malformed or invalid panel input"""
    exit_code = 2
    code = "input"


class MissingColumnError(PanelError):
    pass


class NonNumericError(PanelError):
    pass


class UnbalancedPanelError(PanelError):
    pass


class TimeVaryingCovariateError(PanelError):
    pass


class PeriodOrderError(PanelError):
    pass


class SpecificationError(EffDidError, ValueError):
    """Invalid effective-treatment specification, cell or argument"""
    exit_code = 2
    code = "input"


# --- Estimation errors (exit 3) ---

class EstimationError(EffDidError):
    """Failure while fitting nuisances or evaluating an estimator"""
    exit_code = 3
    code = "estimation"


class EmptyCellError(EstimationError):
    pass


class InsufficientUnitsError(EstimationError):
    pass


class CollinearityError(EstimationError):
    pass


class SeparationError(EstimationError):
    pass


class ConvergenceError(EstimationError):
    pass


class AggregationError(EstimationError):
    pass


class ReplicationFailureError(EstimationError):
    """Too many Monte Carlo replications failed"""


# --- Inference errors (exit 4) ---

class InferenceError(EffDidError):
    """Failure in bootstrap inference"""
    exit_code = 4
    code = "inference"


class DegenerateInfluenceError(InferenceError):
    def __init__(self, cells: Iterable[str]):
        cells = list(cells)
        super().__init__(
            f"degenerate influence (zero bootstrap SE) for cells: {', '.join(cells)}",
            {"cells": cells},
        )
        self.cells = cells


class BootstrapSizeError(InferenceError):
    pass


class NoPretrendCellsError(InferenceError):
    pass


# --- Non-fatal warning records ---

@dataclass(frozen=True)
class WarningRecord:
    """Structured non-fatal condition returned alongside results"""
    code: str
    message: str
    context: Dict = field(default_factory=dict)


def record_warning(records: List[WarningRecord], logger: logging.Logger,
                   code: str, message: str, **context) -> WarningRecord:
    """Log a warning and append the matching record."""
    logger.warning(message)
    record = WarningRecord(code=code, message=message, context=context)
    records.append(record)
    return record
