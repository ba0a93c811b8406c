"""Exception hierarchy. Each class maps to one CLI exit code."""


class FastFaceError(Exception):
    exit_code = 1


class ConfigError(FastFaceError, ValueError):
    exit_code = 2


class DataIOError(FastFaceError, OSError):
    exit_code = 3


class TensorFormatError(DataIOError):
    pass


class NumericError(FastFaceError, ArithmeticError):
    exit_code = 4
