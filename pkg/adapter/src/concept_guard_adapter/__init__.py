from .errors import AdapterError, CoreError, FormatError, HostError, UnsupportedHost
from .hosts import END_TOKEN, START_TOKEN, ToyHost
from .session import AdapterConfig, AdapterSession, default_core_command
from .sfeb import decode_container, encode_container, read_container, write_container

__all__ = [
    "AdapterConfig",
    "AdapterError",
    "AdapterSession",
    "CoreError",
    "END_TOKEN",
    "FormatError",
    "HostError",
    "START_TOKEN",
    "ToyHost",
    "UnsupportedHost",
    "decode_container",
    "default_core_command",
    "encode_container",
    "read_container",
    "write_container",
]

__version__ = "0.1.0"
