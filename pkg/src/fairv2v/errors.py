"""Exception types shared across the package."""


class FairV2VError(Exception):
    """Base class for all package errors."""


class DimensionError(FairV2VError, ValueError):
    """A per-slot series does not match the time grid."""


class InfeasibleTarget(FairV2VError):
    """At least one EV cannot reach its departure target by charging alone."""

    def __init__(self, shortfalls):
        self.shortfalls = dict(shortfalls)
        detail = ", ".join(f"{k} ({v:+.6g} kWh)" for k, v in self.shortfalls.items())
        super().__init__(f"departure target unreachable for: {detail}")


class PolicyModeMismatch(UserWarning):
    """A fairness policy was supplied for a mode without discharge."""


class NotAllocated(FairV2VError, KeyError):
    """The requested variable has no column in this layout."""

    def __str__(self):
        return str(self.args[0]) if self.args else "not allocated"


class TooLarge(FairV2VError):
    """Brute-force enumeration would exceed its size bound."""


class NoFeasiblePoint(FairV2VError):
    """Brute-force enumeration found no feasible assignment."""


class InvariantViolation(FairV2VError):
    """A solved schedule breaks one of its structural invariants."""

    def __init__(self, what, ev=None, slot=None, residual=None):
        self.what, self.ev, self.slot, self.residual = what, ev, slot, residual
        loc = f" at ev={ev!r} slot={slot}" if ev is not None else ""
        res = f" (residual {residual:.3e})" if residual is not None else ""
        super().__init__(f"{what}{loc}{res}")


class CoverageError(FairV2VError, ValueError):
    """Tariff windows leave a slot uncovered or cover it twice."""


class ParseError(FairV2VError, ValueError):
    """Malformed input file."""


class AlignmentError(FairV2VError, ValueError):
    """A price series cannot be tiled onto the time grid."""


class ZeroBaseline(FairV2VError, ZeroDivisionError):
    """Percentage comparison against a zero-cost baseline."""


class InvalidScenario(FairV2VError, ValueError):
    """Scenario fails validation; ``violations`` lists every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"invalid scenario: {lines}{more}")
