"""Shared exception hierarchy.

CogtError marks input/validation failures (CLI exit code 3); anything else
escaping to the CLI is a runtime error (exit code 1).
"""


class CogtError(Exception):
    """Base class for validation failures raised by this package."""
