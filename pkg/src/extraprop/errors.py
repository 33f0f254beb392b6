"""Exception types shared across the package.

Every error carries a short machine-parsable ``code`` so the CLI can emit a
single-line diagnostic and a stable non-zero exit status.
"""


class ExtrapropError(Exception):
    code = "E_GENERIC"


class SchemaError(ExtrapropError):
    code = "E_SCHEMA"


class RecordError(ExtrapropError):
    """Row-level ingestion failure: bad target, duplicate id, bad feature cell."""

    code = "E_RECORD"


class FormulaError(ExtrapropError):
    """Formula parse failure; ``offset`` is the character position in the input."""

    code = "E_FORMULA"

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)
        self.offset = offset


class DedupError(ExtrapropError):
    code = "E_DEDUP"


class SplitError(ExtrapropError):
    code = "E_SPLIT"


class FeaturizeError(ExtrapropError):
    code = "E_FEATURIZE"


class ScalerError(ExtrapropError):
    code = "E_SCALER"


class NetsError(ExtrapropError):
    code = "E_NETS"


class TrainingDivergedError(ExtrapropError):
    code = "E_DIVERGED"

    def __init__(self, message: str, epoch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)
        self.epoch = epoch


class TransductionError(ExtrapropError):
    code = "E_TRANSDUCTION"


class BaselineError(ExtrapropError):
    code = "E_BASELINE"


class EvalError(ExtrapropError):
    code = "E_EVAL"


class ConfigError(ExtrapropError):
    code = "E_CONFIG"


class ArtifactError(ExtrapropError):
    code = "E_ARTIFACT"
