"""Exception hierarchy shared by the toolkit and the command line."""


class ToolkitError(Exception):
    """Base class for every error the toolkit reports to the user."""

    exit_code = 1


class InputError(ToolkitError, ValueError):
    """Malformed files, invalid configuration or violated preconditions."""

    exit_code = 1


class DegenerateDataError(ToolkitError, ValueError):
    """Data that is well-formed but cannot be processed meaningfully.

    Zero-energy signals, zero-norm vectors, constant score systems and
    single-class trial lists all end up here.
    """

    exit_code = 2
