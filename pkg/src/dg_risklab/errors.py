"""Exception hierarchy shared by every module."""


class RiskLabError(Exception):
    """Base class for all errors raised by dg_risklab."""


class ValidationError(RiskLabError, ValueError):
    """A distribution, config or argument violates its invariants."""


class SpecParseError(ValidationError):
    """Malformed spec/config text. Carries the section and row of the fault."""

    def __init__(self, message, section=None, row=None, line=None):
        self.section = section
        self.row = row
        self.line = line
        where = []
        if section is not None:
            where.append(f"[{section}]")
        if row is not None:
            where.append(f"row {row}")
        if line is not None:
            where.append(f"(line {line})")
        prefix = " ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class UnsupportedEventError(RiskLabError):
    """Conditioning on an event of zero probability."""


class ConsistencyError(RiskLabError):
    """Two independent computations of the same quantity disagree."""


class InfeasibleError(RiskLabError):
    """A generator could not produce an instance meeting its targets."""


class BoundViolation(RiskLabError, AssertionError):
    """A proven inequality failed numerically; indicates a computation bug."""
