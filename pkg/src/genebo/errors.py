"""Exception hierarchy shared by every genebo module."""


class GeneBOError(Exception):
    """Base class for input and domain errors (CLI exit code 1)."""


class EmptyInput(GeneBOError, ValueError):
    pass


class InvalidBase(GeneBOError, ValueError):
    def __init__(self, record_id, position, char):
        self.record_id = record_id
        self.position = position
        self.char = char
        super().__init__(
            f"record {record_id!r}: invalid base {char!r} at position {position}"
        )


class LengthNotMultipleOfThree(GeneBOError, ValueError):
    def __init__(self, record_id, length):
        self.record_id = record_id
        self.length = length
        super().__init__(
            f"record {record_id!r}: length {length} is not a positive multiple of 3"
        )


class DimensionMismatch(GeneBOError, ValueError):
    pass


class NonPositiveLengthscale(GeneBOError, ValueError):
    pass


class FactorizationFailure(GeneBOError, ArithmeticError):
    pass


class AllRestartsFailed(GeneBOError, RuntimeError):
    pass


class EmptyCandidates(GeneBOError, ValueError):
    pass


class NotEnoughDifficultGenes(GeneBOError, ValueError):
    def __init__(self, n_qualifying, k):
        self.n_qualifying = n_qualifying
        self.k = k
        super().__init__(
            f"only {n_qualifying} genes fall below the threshold, {k} requested"
        )


class NonPositiveRate(GeneBOError, ValueError):
    pass


class OracleError(GeneBOError, RuntimeError):
    def __init__(self, iteration, cause):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"oracle failed at iteration {iteration}: {cause}")


class ConfigError(GeneBOError, ValueError):
    pass
