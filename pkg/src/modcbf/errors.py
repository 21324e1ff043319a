"""Exception types raised across the package."""


class ModcbfError(Exception):
    """Base class for all package errors."""


class NonFiniteInput(ModcbfError, ValueError):
    pass


class DimensionMismatch(ModcbfError, ValueError):
    pass


class GradientSingular(ModcbfError, ArithmeticError):
    """The boundary gradient vanishes at the query point."""


class ReferenceCoincident(ModcbfError, ArithmeticError):
    """The query point coincides with the obstacle reference point."""


class DegenerateRow(ModcbfError, ArithmeticError):
    """A violated barrier row has no control authority (L_g h = 0)."""


class DegenerateReference(ModcbfError, ArithmeticError):
    """n^T r is too small for the reference frame to be invertible."""


class InsideObstacle(ModcbfError, ValueError):
    pass


class InfeasibleSafety(ModcbfError, ValueError):
    """The obstacle approaches faster than the speed limit allows to escape."""


class TangentDegenerate(ModcbfError, ArithmeticError):
    pass


class ProjectionCollapse(ModcbfError, ArithmeticError):
    """A geodesic candidate direction was projected to zero."""


class ConfigInvalid(ModcbfError, ValueError):
    pass


class TooShort(ModcbfError, ValueError):
    pass


class UnsupportedModel(ModcbfError, ValueError):
    pass
