"""Exception hierarchy shared across the package."""


class DriftEnsembleError(Exception):
    """Base class for every error raised by this package."""


class InputError(DriftEnsembleError, ValueError):
    """A caller supplied a value outside the accepted domain."""


class FormatError(InputError):
    """A file or message could not be parsed."""


class StateError(DriftEnsembleError, RuntimeError):
    """An operation was attempted on an object in the wrong state."""


class BusyError(StateError):
    """A drift injection was requested while another one is still active."""


class BusClosedError(StateError):
    """Publish or subscribe on a closed bus."""
