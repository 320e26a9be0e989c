"""Exception types shared across the package."""


class SimError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SimError, ValueError):
    """Invalid physical or run configuration.

    Carries an optional key path and line number so config-file errors
    can point at the offending entry.
    """

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        prefix = ""
        if key is not None:
            prefix += f"{key}: "
        if line is not None:
            prefix = f"line {line}: " + prefix
        super().__init__(prefix + message)


class ResonanceError(ConfigError):
    """Effective-model request inside the lattice/trap resonance guard band."""

    def __init__(self, message):
        super().__init__(message)


class IntegratorError(SimError, RuntimeError):
    """Time evolution left its accuracy budget.

    ``diagnostics`` holds the state of the failed run (time reached, step
    size, norm or trace drift) for post-mortem inspection.
    """

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class TruncationError(SimError, RuntimeError):
    """Motional population climbed too close to the Fock-space edge."""


class FitError(SimError, RuntimeError):
    """A fit could not be set up (not enough points, degenerate data)."""
