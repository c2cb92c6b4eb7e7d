"""Exception hierarchy shared by every module.

Each class carries a short ``category`` used by the CLI to print a
machine-parseable one-line error.
"""


class SanasError(Exception):
    category = "error"


class DimensionError(SanasError, ValueError):
    category = "dimension"


class ConfigError(SanasError, ValueError):
    category = "config"


class ContractError(SanasError, ValueError):
    category = "contract"


class ValidationError(SanasError, ValueError):
    category = "validation"


class InfeasibleError(SanasError):
    category = "infeasible"


class TrainingError(SanasError, FloatingPointError):
    category = "training"


class FormatError(SanasError, ValueError):
    category = "format"
