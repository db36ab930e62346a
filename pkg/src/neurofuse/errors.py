"""Typed exceptions.

Every error carries an ``exit_code`` so the command line can map failures to
its stable exit-code contract (2 config, 3 io, 4 data/shape, 5 markers).
"""


class NeurofuseError(Exception):
    exit_code = 4


class ConfigError(NeurofuseError, ValueError):
    exit_code = 2


class InvalidConfig(ConfigError):
    pass


class IoFailure(NeurofuseError, OSError):
    exit_code = 3


class DataError(NeurofuseError, ValueError):
    """Malformed or inconsistent data (exit code 4)."""


class MarkerError(NeurofuseError, ValueError):
    exit_code = 5


# datamodel
class UnknownChannel(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ShapeMismatch(DataError):
    pass


class RateMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoMarkers(MarkerError):
    pass


# formats
class FormatError(DataError):
    pass


class MissingSection(FormatError):
    pass


class UnsupportedFormat(FormatError):
    pass


class PayloadSizeMismatch(FormatError):
    pass


class BadMarkerLine(FormatError):
    pass


class BadMagic(FormatError):
    pass


class UnsupportedDatatype(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class RaggedRows(DataError):
    pass


# dsp
class InvalidBand(DataError):
    pass


class UnstableDesign(DataError):
    pass


class SignalTooShort(DataError):
    pass


class CoverageTooShort(DataError):
    pass


# artifacts
class IrregularTriggers(MarkerError):
    pass


class TooFewEpochs(MarkerError):
    pass


class FlatSignal(DataError):
    pass


# ica
class RankDeficient(DataError):
    pass


class UnknownComponent(DataError):
    pass


class NonConvergenceWarning(UserWarning):
    """Raised as a warning: one or more ICA components hit ``max_iter``."""


# fusion
class NonIntegerBlock(DataError):
    pass


class DegenerateSample(DataError):
    pass


class SingularDesign(DataError):
    pass


class GridMismatch(DataError):
    pass


class MontageMismatch(DataError):
    pass
