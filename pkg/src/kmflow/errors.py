"""Exception types shared across the solver modules."""


class KmflowError(Exception):
    """Base class for all errors raised by this package."""


class CutLocusViolation(KmflowError):
    """A point pair fell inside the guarded band around the antipode."""

    def __init__(self, x, xbar, margin):
        self.x = x
        self.xbar = xbar
        self.margin = margin
        super().__init__(
            f"pair x={x}, xbar={xbar} violates the cut-locus guard (margin={margin})"
        )


class UnsupportedOrder(KmflowError):
    """Requested derivative order exceeds what the cost model provides."""


class SingularHessian(KmflowError):
    """Mixed cost Hessian is numerically singular or not positive."""


class NonpositiveDensity(KmflowError):
    """Density value must be strictly positive."""


class NullPairUnavailable(KmflowError):
    """No nonvanishing orthogonal direction pair exists at this point."""


class NewtonDivergence(KmflowError):
    """Pointwise Newton solve failed to reach the residual target."""

    def __init__(self, node, residual, iterations):
        self.node = node
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"Newton failed at node {node}: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class SpacelikeViolation(KmflowError):
    """Induced metric lost positive definiteness at some node."""

    def __init__(self, node, eigenvalue):
        self.node = node
        self.eigenvalue = eigenvalue
        super().__init__(
            f"induced metric not positive definite at node {node} "
            f"(min eigenvalue {eigenvalue:.3e})"
        )


class RouteMismatch(KmflowError):
    """The two algebraically equivalent angle formulas disagree."""


class MassMismatch(KmflowError):
    """Source and target densities carry different total mass."""


class NonConvergence(KmflowError):
    """Iterative solver hit its iteration cap before reaching tolerance."""


class GridMismatch(KmflowError):
    """Two fields that must share a grid do not."""


class InsufficientTail(KmflowError):
    """Not enough usable samples in the requested fit window."""


class ParseError(KmflowError):
    """Run configuration file could not be parsed."""


class ValidationError(KmflowError):
    """Run configuration parsed but failed validation.

    Carries the full list of problems, not just the first one.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
