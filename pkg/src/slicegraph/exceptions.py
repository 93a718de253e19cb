class SliceGraphError(Exception):
    """Base class for errors raised by slicegraph."""


class CacheFormatError(SliceGraphError):
    """Cache file has a bad magic string, version, or truncated payload."""


class ValidationError(SliceGraphError, ValueError):
    """Input violates a data-model invariant."""


class DegenerateCellError(SliceGraphError, ValueError):
    """Cell has too few slices or runs for the requested analysis."""
