"""Exception types raised across the package.

The CLI maps :class:`PsfnetError` subclasses (and ``FileNotFoundError``) to exit
code 2; everything else propagates.
"""


class PsfnetError(Exception):
    pass


class InvalidArgumentError(PsfnetError, ValueError):
    """A caller-supplied parameter is out of its valid range."""


class InvalidDataError(PsfnetError, ValueError):
    """Array contents violate a data invariant (NaN, out of range, bad shape)."""


class ConfigurationError(PsfnetError):
    """Config values, checkpoints, or datasets are inconsistent."""


class DecodeError(PsfnetError):
    """An image file could not be decoded."""


class ParseError(PsfnetError, ValueError):
    """A text file (exposure list, config, matrix) is malformed."""


class TrainingDivergedError(PsfnetError, FloatingPointError):
    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
