"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes: config errors exit 2,
precondition failures exit 3, anything else raised from here exits 4.
"""


class AlignsimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AlignsimError):
    """A config file is malformed. Carries file / field context when known."""

    def __init__(self, message, *, path=None, field=None, line=None):
        parts = []
        if path is not None:
            parts.append(str(path))
        if line is not None:
            parts.append(f"line {line}")
        if field is not None:
            parts.append(f"field '{field}'")
        prefix = ": ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.path = path
        self.field = field
        self.line = line


class SchemaError(ConfigError):
    """An input document declares a schema version we do not understand."""


class PreconditionError(AlignsimError):
    """An operation was invoked in a state that violates its contract."""


class SimulationError(AlignsimError):
    """The simulation detected an inconsistent configuration or internal state."""


class CalibrationError(SimulationError):
    """Throughput calibration cannot produce positive rates."""


class JournalError(AlignsimError):
    """A run-state journal is corrupt or inconsistent with the campaign config."""
