"""Exception hierarchy.

Every error raised by the package derives from :class:`NahmkitError`.  The
three direct subclasses correspond to the command-line exit codes: bad input
or configuration, a numerical procedure that did not deliver, and a violated
mathematical precondition.
"""

from __future__ import annotations


class NahmkitError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(NahmkitError):
    """Malformed input, unknown option or inconsistent parameters."""

    exit_code = 2


class NumericalFailure(NahmkitError):
    """An iterative or adaptive procedure failed to meet its tolerance."""

    exit_code = 3


class PreconditionViolation(NahmkitError):
    """Input lies outside the mathematical domain of an operation."""

    exit_code = 4


class NewtonDiverged(NumericalFailure):
    """A Newton iteration stagnated or blew up; base of the solver-specific errors."""


# lie_core
class NotNilpotent(PreconditionViolation):
    pass


class ZeroNilpotent(PreconditionViolation):
    pass


class MismatchedN(PreconditionViolation):
    pass


# adjoint_quotient
class StratumViolation(PreconditionViolation):
    pass


class NewtonFailure(NewtonDiverged):
    pass


class DimensionMismatch(PreconditionViolation):
    pass


# higgs_divisor
class NonMonic(PreconditionViolation):
    pass


class DegreeMismatch(PreconditionViolation):
    pass


class FactorisationUnstable(NumericalFailure):
    pass


class InvalidWeight(PreconditionViolation):
    pass


# model_solutions
class OutsideDomain(PreconditionViolation):
    pass


DomainError = OutsideDomain


class UnsupportedConfig(ConfigError):
    pass


# ebe_solver
class NonConvergence(NewtonDiverged):
    pass


class GridTooCoarse(ConfigError):
    pass


class SingularOperator(NumericalFailure):
    pass


class MotionNotPeriodic(PreconditionViolation):
    pass


class NegativeOrder(ConfigError):
    pass


class LengthMismatch(ConfigError):
    pass


# braids
class ParseError(ConfigError):
    pass


class InvalidGenerator(ConfigError):
    pass


class CollisionDetected(PreconditionViolation):
    pass


class ArcsNotDisjoint(PreconditionViolation):
    pass


class OddStrandCount(PreconditionViolation):
    pass


# transport
class StepUnderflow(NumericalFailure):
    pass


class Diverged(NumericalFailure):
    pass


class SingularJacobian(NumericalFailure):
    pass


class IndeterminateConvergence(NumericalFailure):
    pass


class SamplingFailed(NumericalFailure):
    pass


class NotTransverse(NumericalFailure):
    pass


class NoSamplesConverged(SamplingFailed):
    """No sampled fibre point could be transported around the loop."""


class InsufficientSeeds(SamplingFailed):
    """Too few seeds survived the vanishing-cycle filter."""
