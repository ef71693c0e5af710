"""Exception hierarchy shared by all modules.

The CLI maps ``InputError`` and ``NumericalError`` to distinct exit codes.
"""


class CiteffectError(Exception):
    """Base class for package errors."""


class InputError(CiteffectError, ValueError):
    """Malformed or inconsistent input data (records, trajectories, dims)."""


class DomainError(CiteffectError, ValueError):
    """A numerical argument lies outside the domain of a function."""


class NumericalError(CiteffectError, RuntimeError):
    """A computation failed numerically (non-finite density, no convergence)."""


class InitializationError(NumericalError):
    """The sampler could not find a finite starting point."""
