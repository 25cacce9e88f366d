"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class GraphSumError(Exception):
    code = "error"
    exit_code = 1


class ConfigError(GraphSumError, ValueError):
    code = "config"
    exit_code = 3


class ValidationError(GraphSumError, ValueError):
    code = "validation"
    exit_code = 3


class ShapeError(ValidationError):
    code = "shape"


class NumericError(GraphSumError, ArithmeticError):
    code = "numeric"
    exit_code = 4


class IntegrityError(GraphSumError, IOError):
    code = "integrity"
    exit_code = 5


class TapeError(GraphSumError, RuntimeError):
    code = "tape"
    exit_code = 1
