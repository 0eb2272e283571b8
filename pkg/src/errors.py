"""
Exception hierarchy for CoverageLens.

Each error carries the CLI exit code it maps to (see main.py).
"""


class CoverageLensError(Exception):
    """Base class for all CoverageLens errors."""

    exit_code = 2


class ValidationError(CoverageLensError):
    """Input data or arguments violate a documented invariant."""


class DegenerateInputError(CoverageLensError):
    """Too few rows, entities or distinct values for the operation."""


class ConfigError(CoverageLensError):
    """Inconsistent configuration (e.g. score kind vs. sigma presence)."""


class DomainError(CoverageLensError):
    """Argument outside the mathematical domain of an operation."""


class InfeasibleSplitError(CoverageLensError):
    """A split strategy produced an empty subset; a new seed may help."""

    exit_code = 3


class ArtifactIOError(CoverageLensError):
    """Reading or writing an artifact failed."""

    exit_code = 4


class StageError(CoverageLensError):
    """A pipeline stage failed; names the stage and the offending artifact."""

    def __init__(self, stage: str, artifact: str, cause: Exception):
        self.stage = stage
        self.artifact = artifact
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4 if isinstance(cause, OSError) else 2)
        super().__init__(f"stage '{stage}' failed on {artifact}: {cause}")
