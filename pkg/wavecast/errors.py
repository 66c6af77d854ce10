"""Exception hierarchy. The CLI maps each class to its exit code."""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONTRACT = 4


class WavecastError(Exception):
    exit_code = 1


class ConfigError(WavecastError):
    exit_code = EXIT_USAGE


class DataError(WavecastError):
    exit_code = EXIT_DATA


class FormatError(DataError):
    def __init__(self, message: str, offset: int = -1):
        if offset >= 0:
            message = f'{message} (byte offset {offset})'
        super().__init__(message)
        self.offset = offset


class DomainError(DataError):
    pass


class StatsError(DataError):
    pass


class MissingWindError(DataError):
    def __init__(self, time: str):
        super().__init__(f'No wind forcing available for {time}')
        self.time = time


class EmptySelectionError(DataError):
    pass


class UndefinedScoreError(DataError):
    pass


class NonFiniteGradientError(DataError):
    def __init__(self, name: str):
        super().__init__(f'Non-finite gradient in parameter {name}; step rejected')
        self.name = name


class ContractError(WavecastError):
    exit_code = EXIT_CONTRACT


class ShapeError(ContractError):
    pass


class GridMismatchError(ContractError):
    def __init__(self, expected, got):
        super().__init__(f'Grid mismatch: expected {expected}, got {got}')
        self.expected = expected
        self.got = got


class BoundsError(ContractError):
    pass


class ConfigConflictError(ContractError):
    pass
