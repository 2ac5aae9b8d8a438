"""Exception types shared across the package.

Error-to-exit-code mapping for the CLI lives in cli.py: configuration and
usage problems exit 2, I/O and file-format problems exit 3, numerical
divergence exits 4.
"""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class ConfigurationError(ValueError):
    """A configuration value violates its contract (e.g. even conv kernel)."""


class InputError(ValueError):
    """An input value is out of range (e.g. phoneme id >= vocab size)."""


class AlignmentError(ValueError):
    """Paired sequences disagree on frame count."""


class ContractError(RuntimeError):
    """An internal API contract was violated (e.g. non-scalar loss)."""


class EmptyOutputError(ValueError):
    """An operation produced a degenerate empty result (all-zero durations)."""


class DurationOverflowError(RuntimeError):
    """Regulated frame count exceeded the configured cap."""


class FormatError(ValueError):
    """A binary file failed to parse; carries the byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the failing step."""

    def __init__(self, step, message="non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step
