class BridgeError(Exception):
    """Base class for bridge failures."""


class BackendUnavailable(BridgeError):
    """The requested parser backend cannot be loaded."""


class EmptyInput(BridgeError):
    """The caption file contains no parseable lines."""
