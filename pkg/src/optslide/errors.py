class OptslideError(Exception):
    pass


class DimensionMismatch(OptslideError, ValueError):
    pass


class IndexOutOfRange(OptslideError, IndexError):
    pass


class NonFiniteValue(OptslideError, ArithmeticError):
    def __init__(self, what: str, coordinate: int) -> None:
        super().__init__(f'{what}: non-finite entry at coordinate {coordinate}')
        self.what = what
        self.coordinate = coordinate


class InconsistentConstants(OptslideError, ValueError):
    pass


class NotQuadratic(OptslideError):
    pass


class SingularSystem(OptslideError):
    pass


class SolverDiverged(OptslideError):
    pass


class InnerSolverFailure(OptslideError):
    def __init__(self, level: str, iteration: int) -> None:
        super().__init__(f'{level} failed at iteration {iteration}')
        self.level = level
        self.iteration = iteration


class ConfigError(OptslideError, ValueError):
    pass


class ResultsWriteError(OptslideError, OSError):
    pass
