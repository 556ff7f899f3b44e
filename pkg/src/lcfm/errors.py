"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`LCFMError`.
The CLI maps the four groups below onto its exit codes.
"""


class LCFMError(Exception):
    """Base class for all package errors."""


class InputError(LCFMError):
    """Bad or unreadable input data (CLI exit code 2)."""


class NumericError(LCFMError):
    """Numerical failure during training or inference (CLI exit code 3)."""


class ConfigError(LCFMError):
    """Invalid configuration or incompatible artefacts (CLI exit code 4)."""


# dataio
class EmptyFile(InputError):
    pass


class NonMonotonicTime(InputError):
    pass


class TooFewPoints(InputError):
    pass


class BadRatios(ConfigError):
    pass


class MissingLabels(InputError):
    pass


# encoding / tensors
class PositionOutOfRange(ValueError, LCFMError):
    pass


class ShapeMismatch(ValueError, LCFMError):
    pass


# model
class BadConfig(ConfigError):
    pass


class NoHead(LCFMError):
    pass


class IncompatibleCheckpoint(ConfigError):
    pass


# training
class EmptyDataset(InputError):
    pass


class NonFiniteLoss(NumericError):
    pass


class EmptyMask(ValueError, LCFMError):
    pass


class BadMaskKind(ValueError, LCFMError):
    pass


class BadFraction(ValueError, LCFMError):
    pass


class UnlabelledData(InputError):
    pass


class VocabMismatch(InputError):
    pass


# metrics / inference / generation
class SingleClass(ValueError, LCFMError):
    pass


class EmptySet(InputError):
    pass


class NoReferences(LCFMError):
    pass


class BadFamily(ConfigError):
    pass
