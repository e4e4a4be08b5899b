"""Exception types shared by the numerical modules."""


class TwistorLabError(Exception):
    """Base class for all errors raised by the package."""


class GraphFailure(TwistorLabError):
    """The transported surface is not a graph over the working annulus."""


class EvaluationFailure(TwistorLabError):
    """A graph function was requested outside the annulus where it is defined."""


class NoConvergence(TwistorLabError):
    """Newton iteration did not reach the requested tolerance."""


class IllConditioned(TwistorLabError):
    """The real Jacobian of a Newton system is numerically singular."""


class DegenerateBoundary(TwistorLabError):
    """Boundary velocity of a disk came too close to zero."""


class EmbeddingBoundError(TwistorLabError):
    """Perturbation amplitude beyond the configured solver bound."""


class DegenerateCone(TwistorLabError):
    """Null cone fit did not produce a one-dimensional solution space."""


class FitFailure(TwistorLabError):
    """A frame or lift fit failed its residual check."""


class RankFailure(TwistorLabError):
    """The differential of the disk family is not surjective at a sample."""


class ConsistencyFailure(TwistorLabError):
    """Structure relations of the connection assembly failed."""


class StencilOutOfRange(TwistorLabError):
    """A finite difference stencil left the sampled grid."""


class LeftDomain(TwistorLabError):
    """A geodesic left the region where the connection is sampled."""

    def __init__(self, message, exit_point=None):
        super().__init__(message)
        self.exit_point = exit_point


class FoliationFailure(TwistorLabError):
    """An incidence root find found zero or several solutions."""


class ZeroVector(TwistorLabError):
    """Causal classification of the zero vector was requested."""


class ConfigError(TwistorLabError):
    """Invalid run configuration."""
