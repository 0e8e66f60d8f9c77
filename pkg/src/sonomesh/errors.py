"""Exception hierarchy shared across the package."""


class SonomeshError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SonomeshError, ValueError):
    """Bad input or configuration detected before any work started."""


class MetaParseError(ValidationError):
    """A MetaImage header is malformed or missing a required tag."""


class UnsupportedElementTypeError(MetaParseError):
    """The MetaImage payload uses a voxel type other than unsigned 16-bit."""


class PayloadSizeError(ValidationError):
    """The raw payload does not match the voxel count declared in the header."""


class PlyFormatError(ValidationError):
    """A PLY stream is malformed or uses an unsupported encoding."""


class MeshIntegrityError(ValidationError):
    """Mesh data violates its own structural invariants (e.g. bad face index)."""


class ShapeError(ValidationError):
    """An array argument has the wrong shape for the requested operation."""


class SpecMismatchError(ValidationError):
    """A checkpoint's embedded network spec differs from the expected one."""


class EmptyCloudError(ValidationError):
    """A point-cloud distance is undefined because one cloud is empty."""


class DivergenceError(SonomeshError):
    """Training produced a non-finite validation loss.

    Carries the loss curves observed so far so callers (notably the trial
    harness) can record the failed run instead of losing it.
    """

    def __init__(self, message, train_curve=None, val_curve=None):
        super().__init__(message)
        self.train_curve = list(train_curve or [])
        self.val_curve = list(val_curve or [])
