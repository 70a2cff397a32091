"""Exception types shared across the package."""


class ExogaitError(Exception):
    """Base class for all package errors."""


class AttitudeSingular(ExogaitError):
    """Orientation decomposition hit a gimbal-lock configuration."""


class SingularJacobian(ExogaitError):
    """Newton iteration encountered a (near-)singular Jacobian."""


class NoConvergence(ExogaitError):
    """Iterative solver exhausted its iteration budget."""


class PhaseOutOfRange(ExogaitError):
    """Gait phase argument outside [0, 1]."""


class ParseError(ExogaitError):
    """A config or data file failed to parse; message names the field."""


class SchemaVersionMismatch(ExogaitError):
    """Data file carries an unsupported schema version."""


class RankDeficientConstraint(ExogaitError):
    """Contact constraint Jacobian lost rank."""


class Diverged(ExogaitError):
    """Simulation state blew up (velocity bound exceeded)."""


class NoContact(ExogaitError):
    """Center-of-pressure requested with no normal force on the foot."""


class NotHurwitz(ExogaitError):
    """Matrix has an eigenvalue with non-negative real part."""

    def __init__(self, msg, eigenvalue=None):
        super().__init__(msg)
        self.eigenvalue = eigenvalue


class SolveFailed(ExogaitError):
    """A linear-algebra solve did not produce a usable result."""


class NoFeasiblePoint(ExogaitError):
    """Constrained optimization could not drive penalties below tolerance."""


class DegenerateBall(ExogaitError):
    """Estimated validity radius collapsed below the resolvable floor."""


class BudgetExhausted(ExogaitError):
    """Search ran out of evaluation budget; best candidate is attached."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class ScenarioError(ExogaitError):
    """Scenario file invalid; message names the offending key."""
