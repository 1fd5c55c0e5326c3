"""Exception hierarchy shared by all mate modules."""


class MateError(Exception):
    """Base class for every error raised by mate."""


# geometry
class PointNotOnBoundary(MateError, ValueError):
    pass


class CornerPoint(MateError, ValueError):
    pass


# model
class EvaluationFailure(MateError):
    pass


class NonFiniteValue(MateError, ArithmeticError):
    pass


class InversionDiverged(MateError):
    pass


class SingularMixedHessian(MateError):
    pass


class ExpressionSyntaxError(MateError, SyntaxError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifier(MateError, NameError):
    def __init__(self, name, position, hint=""):
        super().__init__(f"unknown identifier {name!r} at position {position}{hint}")
        self.name = name
        self.position = position


# conditions
class JetFailure(MateError):
    pass


class NegativeDensity(MateError, ValueError):
    pass


class NonpositiveGamma(MateError, ValueError):
    pass


# discretize
class ResolutionTooCoarse(MateError, ValueError):
    pass


# solver
class SolverError(MateError):
    """Solver failure; ``report`` carries the partial SolveReport when known."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EllipticityLoss(SolverError):
    pass


class NonpositiveB(MateError, ValueError):
    pass


class SingularW(SolverError):
    pass


class LinearSolveFailure(SolverError):
    pass


class MaxIterations(SolverError):
    pass


class SingularSystem(SolverError):
    pass


class NoEllipticSeed(SolverError):
    pass


class ContinuationStalled(SolverError):
    pass


# verify
class GridMismatch(MateError, ValueError):
    pass


# cli
class ConfigError(MateError):
    exit_code = 4
