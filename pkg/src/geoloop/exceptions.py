"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class GeoloopError(Exception):
    exit_code = 1


class ConfigError(GeoloopError, ValueError):
    exit_code = 1


class DataError(GeoloopError, ValueError):
    exit_code = 2


class NumericalError(GeoloopError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass
