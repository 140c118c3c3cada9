"""Exception hierarchy shared across the package.

ContractViolationError covers bad arguments and geometry mismatches (maps to
CLI exit code 4). FormatError covers unreadable or inconsistent on-disk
artifacts and bitstreams (CLI exit code 3).
"""


class FvqError(Exception):
    pass


class ContractViolationError(FvqError, ValueError):
    """A precondition or invariant of the public API was violated."""


class FormatError(FvqError):
    """A file or byte stream does not conform to its declared format."""


class MalformedBitstreamError(FormatError):
    """Bitstream is truncated or internally inconsistent."""


class DigestMismatchError(FormatError):
    """Bitstream was produced under a different profile than supplied."""
