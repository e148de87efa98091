"""Exception hierarchy shared across the package.

Three broad families map onto the CLI exit codes: configuration problems
(exit 1), data problems (exit 2) and numerical failures (exit 3).
"""


class ConcnnError(Exception):
    """Base class for all package errors."""


class ConfigError(ConcnnError):
    """Invalid configuration, arguments or model setup."""


class DataError(ConcnnError):
    """Invalid or inconsistent input data."""


class NumericalError(ConcnnError):
    """Numerical failure (divergence, non-finite values)."""


# -- data module -------------------------------------------------------------

class MissingColumn(DataError):
    pass


class NegativeSales(DataError):
    pass


class ConflictingDuplicate(DataError):
    pass


class EmptyFile(DataError):
    pass


class NonPositiveOracleValue(DataError):
    pass


class WindowTooLarge(ConfigError):
    pass


class LengthMismatch(DataError):
    pass


class InvalidSplit(ConfigError):
    pass


# -- simulator ---------------------------------------------------------------

class NegativeWeightFromPhi(NumericalError):
    pass


# -- neural net --------------------------------------------------------------

class InvalidArchitecture(ConfigError):
    pass


class NonFiniteInput(NumericalError):
    pass


# -- concurrent layer --------------------------------------------------------

class EmptyBatch(DataError):
    pass


class NonPositivePrediction(NumericalError):
    pass


# -- trainer -----------------------------------------------------------------

class InsufficientHistory(DataError):
    pass


class DivergedLoss(NumericalError):
    pass


class AllCandidatesDiverged(NumericalError):
    pass


class ArchitectureMismatch(ConfigError):
    pass


# -- baselines / evaluation --------------------------------------------------

class HorizonExceedsHistory(DataError):
    pass


class ZeroActualTotal(DataError):
    pass


class UnknownFeature(ConfigError):
    pass


# -- theory ------------------------------------------------------------------

class EmptyThetaSamples(ConfigError):
    pass


class IdenticalStates(ConfigError):
    pass


class InvalidDelta(ConfigError):
    pass


class RhoOutOfRange(ConfigError):
    pass


class TrainingDiverged(NumericalError):
    pass
