"""Exception hierarchy shared by every codec stage.

The CLI maps each family to an exit code: format problems exit 2, a
weights/bitstream mismatch exits 3 and corrupt streams exit 4.
"""


class FcgsError(Exception):
    """Base class for all codec errors."""

    exit_code = 1


class FormatError(FcgsError):
    """Input does not follow an expected on-disk layout."""

    exit_code = 2


class SchemaError(FormatError):
    """A PLY file is missing (or carries unknown) required properties."""

    def __init__(self, message, names=()):
        super().__init__(message)
        self.names = list(names)


class TruncationError(FormatError):
    """Fewer (or more) bytes than the header announces."""


class SerializationError(FcgsError):
    """A value cannot be written (e.g. non-finite attribute)."""


class WeightsError(FormatError):
    """Weights container is malformed or violates a shape/step invariant."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


class WeightsMismatchError(FcgsError):
    """Bitstream was produced with different weights than the ones supplied."""

    exit_code = 3


class CorruptionError(FcgsError):
    """Bitstream body is damaged: desync, bad occupancy, impossible state."""

    exit_code = 4

    def __init__(self, message, section=None):
        if section is not None:
            message = f"{message} (section: {section})"
        super().__init__(message)
        self.section = section


class CoderError(FcgsError):
    """Encoder-side misuse, e.g. a symbol outside its distribution window."""
