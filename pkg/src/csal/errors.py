"""Exception hierarchy.

Every error carries an ``exit_code`` that the command-line front end
returns: 2 for configuration problems, 3 for data problems and 4 for
missing artifacts.
"""


class CsalError(Exception):
    exit_code = 1


class ConfigError(CsalError, ValueError):
    exit_code = 2


class DataError(CsalError, ValueError):
    exit_code = 3


class MissingArtifact(CsalError, FileNotFoundError):
    exit_code = 4


# datamodel / datasources
class NonFiniteFeature(DataError):
    pass


class RaggedRows(DataError):
    pass


class LabelOutOfRange(DataError):
    pass


class DuplicateId(DataError):
    pass


class FormatError(DataError):
    pass


class ProbOutOfRange(DataError):
    pass


class DegenerateSpec(DataError):
    pass


class MissingLabels(DataError):
    pass


class OracleAccessError(CsalError, RuntimeError):
    """A label read happened inside a block that forbids oracle access."""


# contrastive
class ZeroVector(DataError):
    pass


class NonFiniteLoss(CsalError, ArithmeticError):
    exit_code = 3

    def __init__(self, epoch, batch, value):
        super().__init__(f"loss became {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# clustering
class KTooLarge(DataError):
    pass


class NonFinitePoints(DataError):
    pass


# strategies
class BudgetTooLarge(DataError):
    pass


class IdMismatch(DataError):
    pass


class UntrainedClassifier(DataError):
    pass


class DropoutUnavailable(ConfigError):
    pass


# harness
class EmptyLabeledSet(DataError):
    pass


class EmptyTestSet(DataError):
    pass


class ScheduleTooLarge(ConfigError):
    pass


class ZeroVariance(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoRunsFound(MissingArtifact):
    pass
