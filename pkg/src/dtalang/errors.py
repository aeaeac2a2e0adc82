"""Exception hierarchy shared by every module.

The CLI maps the three top-level families onto process exit codes.
"""


class DtaError(Exception):
    exit_code = 1


class ConfigError(DtaError):
    """Bad configuration, missing artifact, or unusable parameters."""

    exit_code = 2


class DataError(DtaError):
    """Input data that cannot be processed."""

    exit_code = 3


class InvariantError(DtaError):
    """An internal invariant was violated."""

    exit_code = 4


class InvalidInputError(DataError, ValueError):
    pass


class EmptyVocabularyError(DataError):
    pass


class DegenerateSequenceError(DataError):
    def __init__(self, protein_id):
        super().__init__(f"protein {protein_id!r} has a zero self-alignment score")
        self.protein_id = protein_id


class UndefinedMetricError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class StageError(DtaError):
    """Wraps a failure inside one experiment stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4)
