"""Exception hierarchy shared by all zrpflow modules."""


class ZrpflowError(Exception):
    """Base class for all errors raised by this package."""


class NotIrreducible(ZrpflowError):
    """The directed graph of positive rates is not strongly connected."""


class DegenerateModel(ZrpflowError):
    """Fewer than two sites of maximal stationary mass; no metastability."""


class AlphaOutOfRange(ZrpflowError):
    """Interaction exponent must satisfy alpha > 2."""


class SetsOverlapOrEmpty(ZrpflowError):
    """Source/target sets for a potential problem overlap or are empty."""


class SolverFailure(ZrpflowError):
    """A linear solve did not reach the requested residual."""


class RankOverflow(ZrpflowError):
    """Configuration-space cardinality exceeds the index width."""


class EdgeOutsideGraph(ZrpflowError):
    """A flow value was addressed on a pair that is not a graph edge."""


class UndefinedOnNeighborhood(ZrpflowError):
    """Restricted Dirichlet form needs the function on the 1-neighborhood."""


class EmptyOrFullValley(ZrpflowError):
    """A collapse target must be a non-empty proper subset."""


class NotConstantOnValley(ZrpflowError):
    """Collapsing a function requires it to be constant on the valley."""


class ScaleOrderViolated(ZrpflowError):
    """Scale sequences violate an ordering the construction depends on."""


class EpsOutOfRange(ZrpflowError):
    """Valley-width parameter outside the admissible interval."""


class PropertyCheckFailed(ZrpflowError):
    """A certified ramp property does not hold at the requested width."""


class OutsideTube(ZrpflowError):
    """Tube-local quantity evaluated at a configuration off the tube."""


class BoundaryConditionViolated(ZrpflowError):
    """Test function does not satisfy the required boundary values."""


class ZeroCapacity(ZrpflowError):
    """Capacity vanished where a positive value is required."""


class DegenerateDenominator(ZrpflowError):
    """Flow norm in a denominator is zero."""


class ConstituentMissing(ZrpflowError):
    """A verification step was asked to run before its inputs were built."""


class ConfigInvalid(ZrpflowError):
    """Experiment configuration failed validation.

    The message names the offending field path.
    """
