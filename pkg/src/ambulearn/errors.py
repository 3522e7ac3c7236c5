"""Exception hierarchy. CLI exit codes hang off these classes."""


class AmbulearnError(Exception):
    exit_code = 1


class InputError(AmbulearnError, ValueError):
    exit_code = 3


class UndefinedMetricError(AmbulearnError):
    exit_code = 3


class InfeasibleError(AmbulearnError):
    exit_code = 4

    def __init__(self, message, unservable=()):
        super().__init__(message)
        self.unservable = list(unservable)


class ContractError(AmbulearnError):
    """An internal invariant or a caller contract was violated."""

    exit_code = 5


class TrainingDivergedError(AmbulearnError):
    exit_code = 5
