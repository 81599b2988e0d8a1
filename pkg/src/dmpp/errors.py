"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
1 for usage/configuration problems, 2 for bad input data, 3 for numerical
failures.
"""


class DmppError(Exception):
    exit_code = 1


class ConfigurationError(DmppError):
    exit_code = 1


class InvalidDomainError(ConfigurationError):
    pass


class ShapeError(ConfigurationError):
    pass


class IncompatibleCheckpointError(ConfigurationError):
    pass


class DataError(DmppError):
    exit_code = 2


class OutOfDomainError(DataError):
    pass


class OutOfRegionError(DataError):
    pass


class OutOfRasterError(DataError):
    pass


class VocabularyError(DataError):
    pass


class ParseError(DataError):
    pass


class PartitionMismatchError(DataError):
    pass


class NumericalError(DmppError):
    exit_code = 3


class TapeEmptyError(NumericalError):
    pass


class DegenerateLikelihoodError(NumericalError):
    pass


class DivergedStepError(NumericalError):
    pass


class DominatingRateError(NumericalError):
    pass
