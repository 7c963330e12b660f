"""Exception hierarchy shared by the whole pipeline.

Everything raised on bad data (broken files, shape mismatches, violated
preconditions) derives from ScrollbinError so the CLI can map it to a
single "data error" exit code.
"""


class ScrollbinError(Exception):
    """Base class for all data/validation errors in scrollbin."""


class PnmDecodeError(ScrollbinError):
    """Malformed or truncated PNM input. Carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DimensionMismatchError(ScrollbinError):
    """Two operands that must share dimensions do not."""


class WeightsFormatError(ScrollbinError):
    """Weights file is corrupt: bad magic, truncated payload, or bogus dims."""


class WeightsVersionError(WeightsFormatError):
    """Weights file has an unsupported format version."""
