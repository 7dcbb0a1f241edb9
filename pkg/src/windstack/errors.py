"""Exception types shared across the package.

The CLI maps these onto process exit codes: validation problems exit 1,
unusable input data exits 2, training divergence exits 3.
"""

from __future__ import annotations


class WindstackError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(WindstackError, ValueError):
    """Operands have incompatible shapes. The message names both shapes."""


class ParameterError(WindstackError, ValueError):
    """A scalar argument is out of its legal range."""


class ConfigError(WindstackError, ValueError):
    """Invalid run configuration. Collects every problem, not just the first."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(WindstackError, ValueError):
    """Input data cannot be used (missing header, all-missing feature, ...)."""


class DivergenceError(WindstackError, RuntimeError):
    """Training loss became non-finite. Carries the epoch it happened in."""

    def __init__(self, epoch: int, message: str | None = None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
