from .bridge import MAX_TOKENS, BridgeConfig, BridgeStats, parse_file, tokenize, write_stats
from .backends import get_backend
from .errors import BackendUnavailable, BridgeError, EmptyInput

__all__ = [
    "MAX_TOKENS",
    "BridgeConfig",
    "BridgeStats",
    "BackendUnavailable",
    "BridgeError",
    "EmptyInput",
    "get_backend",
    "parse_file",
    "tokenize",
    "write_stats",
]
