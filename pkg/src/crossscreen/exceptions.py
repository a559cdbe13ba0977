"""Exception hierarchy.

Every error raised on bad input data or bad configuration derives from
:class:`CrossScreenError`, which the CLI maps to exit code 3.
"""


class CrossScreenError(ValueError):
    """Base class for every error the toolkit raises on bad input."""


# ingestion / splitting
class MalformedRow(CrossScreenError):
    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class UnknownColumn(CrossScreenError):
    pass


class DuplicateId(CrossScreenError):
    pass


class TreatedWithoutTime(CrossScreenError):
    pass


class MissingSplitLevel(CrossScreenError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"missing split level for ids: {', '.join(self.ids)}")


class BadFractions(CrossScreenError):
    pass


# matching
class NoCovariates(CrossScreenError):
    pass


class EmptyPairs(CrossScreenError):
    pass


# statistics
class NTooSmall(CrossScreenError):
    pass


class BadParams(CrossScreenError):
    pass


class AllZeroDiffs(CrossScreenError):
    pass


class ZeroVariance(CrossScreenError):
    pass


class TooLargeForExact(CrossScreenError):
    pass


class EmptyGroup(CrossScreenError):
    pass


class BadDraws(CrossScreenError):
    pass


# plans and orchestration
class SchemaViolation(CrossScreenError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class MissingOutcome(CrossScreenError):
    pass


class TestFailed(CrossScreenError):
    """A statistics error raised while evaluating one test of a plan."""

    __test__ = False  # not a pytest class

    def __init__(self, stage, position, outcome, cause):
        self.stage = stage
        self.position = position
        self.outcome = outcome
        self.cause = cause
        super().__init__(
            f"stage {stage}, test {position} ({outcome}): "
            f"{type(cause).__name__}: {cause}"
        )


class BudgetExceeded(CrossScreenError):
    pass


class OverlapViolation(CrossScreenError):
    pass


class NoOutcomes(CrossScreenError):
    pass


class BadP(CrossScreenError):
    pass


# intervals and simulation
class SelectionLeak(CrossScreenError):
    pass


class EmptyData(CrossScreenError):
    pass


class BadScenario(CrossScreenError):
    pass


class ReplicationFailed(CrossScreenError):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"replication {index}: {type(cause).__name__}: {cause}")
