"""Exception hierarchy shared across the package.

Every error carries a short machine-parseable code; the CLI prints it as a
single `error: <CODE>: <message>` line and exits nonzero.
"""


class GenvcError(Exception):
    code = "E_GENERIC"


class DimensionError(GenvcError):
    code = "E_DIMENSION"


class RateError(GenvcError):
    code = "E_RATE"


class LengthError(GenvcError):
    code = "E_LENGTH"


class IndexRangeError(GenvcError):
    code = "E_INDEX"


class ParseError(GenvcError):
    code = "E_PARSE"


class ConfigError(GenvcError):
    code = "E_CONFIG"


class DependencyError(GenvcError):
    code = "E_DEPENDENCY"


class TrainingError(GenvcError):
    code = "E_TRAINING"


class NumericError(GenvcError):
    code = "E_NUMERIC"


class TrialError(GenvcError):
    code = "E_TRIALS"


class SimilarityError(GenvcError):
    code = "E_SIMILARITY"


class CheckpointError(GenvcError):
    code = "E_CHECKPOINT"
