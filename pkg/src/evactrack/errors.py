"""Exception types raised across the pipeline.

Every error carries a ``category`` string (the class name) so the CLI can
report failures in a machine-readable way.
"""


class EvacTrackError(Exception):
    """Base class for all pipeline errors."""

    @property
    def category(self) -> str:
        return type(self).__name__


# geometry
class InsufficientPoints(EvacTrackError, ValueError):
    pass


class NonMonotoneFit(EvacTrackError, ValueError):
    pass


class IllConditioned(EvacTrackError, ValueError):
    pass


class NonPositiveScale(EvacTrackError, ValueError):
    pass


class InvalidCalibration(EvacTrackError, ValueError):
    pass


class OutOfCalibratedRange(EvacTrackError, ValueError):
    pass


class ConflictingObservations(EvacTrackError, ValueError):
    pass


# ingest
class MalformedRecord(EvacTrackError, ValueError):
    pass


class NoUsableKeypoints(EvacTrackError, ValueError):
    pass


class TooFewObservations(EvacTrackError, ValueError):
    pass


# filter
class InvalidConfig(EvacTrackError, ValueError):
    pass


class TrackTooShort(EvacTrackError, ValueError):
    pass


# dataset
class MisalignedTracks(EvacTrackError, ValueError):
    pass


class TrackShorterThanLag(EvacTrackError, ValueError):
    pass


class EmptyInput(EvacTrackError, ValueError):
    pass


class DimensionMismatch(EvacTrackError, ValueError):
    pass


# gbt
class EmptyDataset(EvacTrackError, ValueError):
    pass


class NonFiniteFeature(EvacTrackError, ValueError):
    pass


class VersionMismatch(EvacTrackError, ValueError):
    pass


class CorruptModel(EvacTrackError, ValueError):
    pass


# eval
class LengthMismatch(EvacTrackError, ValueError):
    pass


class TooFewSubjects(EvacTrackError, ValueError):
    pass


# simgen
class DegeneratePath(EvacTrackError, ValueError):
    pass


class NotInvertible(EvacTrackError, ValueError):
    pass
