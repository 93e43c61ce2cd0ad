"""Exception types shared across the package.

Everything raised for bad user input derives from :class:`MergeSplitError`,
so callers (notably the CLI) can distinguish input problems from bugs.
"""


class MergeSplitError(Exception):
    """Base class for all input/validation errors raised by this package."""


class FormatError(MergeSplitError):
    """A file could not be parsed. Carries the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedDatatypeError(MergeSplitError):
    """A NIfTI datatype code this package does not handle."""

    def __init__(self, code):
        super().__init__(f"unsupported NIfTI datatype code {code}")
        self.code = code


class GridMismatchError(MergeSplitError):
    """Two volumes that must share a grid do not."""


class UnknownLabelError(MergeSplitError):
    """A label ID that is not present where it is required to be."""


class DegenerateLabelError(MergeSplitError):
    """A label with no support / zero mean volume where one is required."""


class DigestMismatchError(MergeSplitError):
    """A serialized artefact does not match the plan it claims to belong to."""
