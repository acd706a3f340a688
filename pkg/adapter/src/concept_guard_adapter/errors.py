class AdapterError(Exception):
    """Base class for everything this package raises on purpose."""


class HostError(AdapterError):
    """The host pipeline's encoder or scheduler failed."""


class UnsupportedHost(AdapterError):
    """The host lacks the callback surface the hooks need."""


class CoreError(AdapterError):
    """The core CLI exited with a non-zero status."""


class FormatError(AdapterError):
    """Container bytes do not parse or fail their checksum."""
