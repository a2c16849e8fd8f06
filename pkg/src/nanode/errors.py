"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was called with arguments outside its contract."""


class DegenerateVectorError(ContractViolationError):
    """A Householder reflection vector is too close to zero."""


class DivergenceError(RuntimeError):
    """A trajectory or backward pass left the finite regime.

    Carries the step index and time at which the blow-up was detected so
    runners can report where a model went unstable.
    """

    def __init__(self, message, step=None, time=None, example=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.example = example


class NumericOverflowError(DivergenceError):
    """A dynamics evaluation produced a non-finite intermediate value."""


class ConfigValidationError(ValueError):
    """A run configuration violates the schema; lists every offending key."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n" + "\n".join(f"  - {v}" for v in self.violations))
