"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: InputError (and subclasses) to 3,
NumericError (and subclasses) to 4.
"""


class FactorcovError(Exception):
    """Base class for all package errors."""


class InputError(FactorcovError, ValueError):
    """Invalid argument, malformed file, or violated precondition."""


class RefitError(InputError):
    """Refit requested on a fit that cannot be refit (e.g. rank zero)."""


class NumericError(FactorcovError, RuntimeError):
    """Numerical failure: non-finite iterates, non-PD matrix, singularity."""


class DegenerateSpectrumError(NumericError):
    """A required leading eigenvalue is zero or negative."""


class CollinearityError(NumericError):
    """A cross-product matrix that must be invertible is singular."""


class SelectionError(NumericError):
    """No admissible candidate in a model-selection sweep."""


class GenerationError(NumericError):
    """Ground-truth generation failed (e.g. PD repair exhausted retries)."""


class StudyError(NumericError):
    """Too many replicate failures for a study to be trustworthy."""
