"""Exception types raised across the package."""


class W1Error(Exception):
    """Base class for all package errors."""


class ParseError(W1Error, ValueError):
    """Malformed input file or record."""


class SizeLimitError(W1Error):
    """Problem too large for the exact solver."""


class SolverError(W1Error, RuntimeError):
    """Internal solver failure (infeasibility, numerical breakdown)."""


class InfeasiblePipelineError(W1Error):
    """No pipeline configuration reaches the requested recall."""


class PipelineStageError(W1Error):
    """An estimator failed inside a pipeline stage."""

    def __init__(self, stage: int, label: str, cause: Exception):
        super().__init__(f"stage {stage} ({label}): {cause}")
        self.stage = stage
        self.label = label
