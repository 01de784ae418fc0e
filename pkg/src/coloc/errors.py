"""Exception hierarchy shared across the package."""


class ColocError(Exception):
    """Base class for every error this package raises deliberately."""


class FrameMismatchError(ColocError):
    """Two poses were combined whose frame tags do not line up."""


class DataError(ColocError):
    """Malformed or inconsistent input data (files, configs, streams)."""


class NumericError(ColocError):
    """A numerical operation failed: singular matrix, non-finite values."""


class OutOfOrderError(ColocError):
    """An event arrived with a timestamp older than the filter state.

    Recoverable: the event is rejected, the filter state is untouched and
    the caller may keep feeding newer events.
    """
