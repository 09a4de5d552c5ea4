"""Exception hierarchy shared by every stage of the pipeline."""


class LrrSpmError(Exception):
    """Base class for all errors raised by this package."""


class DecodeError(LrrSpmError):
    """An image file could not be read or decoded."""


class InvalidInputError(LrrSpmError, ValueError):
    """An argument violates the documented preconditions."""


class InvalidDatasetError(LrrSpmError):
    """The dataset directory layout or content is unusable."""


class InsufficientSamplesError(InvalidDatasetError):
    """A class holds too few samples for the requested split."""


class LinearAlgebraError(LrrSpmError):
    """A linear system could not be solved to the required accuracy."""


class ArtifactError(LrrSpmError):
    """Base class for artifact file problems."""


class KindMismatchError(ArtifactError):
    """The artifact file holds a different kind than requested."""


class HashMismatchError(ArtifactError):
    """A dependent artifact was built from a different codebook."""


class ConsistencyError(LrrSpmError):
    """Experiments that must share a codebook do not."""
