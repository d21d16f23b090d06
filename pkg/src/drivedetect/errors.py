"""Exception types raised across the package.

Everything derives from :class:`DriveDetectError` so callers can catch one
base class at the CLI boundary. I/O problems from the filesystem itself are
left as plain ``OSError``.
"""

from sklearn.exceptions import NotFittedError as _SklearnNotFittedError


class DriveDetectError(Exception):
    """Base class for all package-specific failures."""


class InvalidConfigError(DriveDetectError, ValueError):
    """A configuration object violates its own invariants."""


class OverlappingIntervalsError(DriveDetectError, ValueError):
    """Two event intervals claim the same tick."""


class IntervalOutOfRangeError(DriveDetectError, ValueError):
    """An event interval extends outside the session."""


class TooFewSessionsError(DriveDetectError, ValueError):
    """A dataset split needs at least two sessions."""


class NoSessionsError(DriveDetectError, ValueError):
    """An operation that iterates sessions received none."""


class MissingManifestError(DriveDetectError):
    """A session directory has no manifest file."""


class ShapeMismatchError(DriveDetectError, ValueError):
    """Array shapes (or on-disk byte counts) disagree with expectations."""


class UnknownDtypeError(DriveDetectError, ValueError):
    """A manifest names a dtype this format does not define."""


class EmptyStreamError(DriveDetectError, ValueError):
    """A raw stream to be resampled carries no samples."""


class CoverageGapError(DriveDetectError, ValueError):
    """A raw stream has no sample at or before the first output tick."""


class BatchTooSmallError(DriveDetectError, ValueError):
    """Train-mode batch statistics need at least two rows."""


class BadTargetError(DriveDetectError, ValueError):
    """A loss target id is outside the class range."""


class MissingStreamError(DriveDetectError, ValueError):
    """A model variant requires a stream the configuration does not provide."""


class StreamMismatchError(DriveDetectError, ValueError):
    """A model's input streams disagree with a dataset's streams."""


class CacheMissingError(DriveDetectError):
    """backward was called without the matching forward cache."""


class ConfigMismatchError(DriveDetectError):
    """A checkpoint's manifest disagrees with its payload or its consumer."""


class NoPositivesError(DriveDetectError, ValueError):
    """Average precision is undefined without at least one positive label."""


class NotFittedError(DriveDetectError, _SklearnNotFittedError):
    """Estimator method requires a prior successful fit.

    Also catchable as ``sklearn.exceptions.NotFittedError`` so the wrapper
    estimator behaves like any other scikit-learn estimator.
    """
