"""Exception types raised across the package."""


class FlatplanError(Exception):
    """Base class for all package errors."""


# steering
class NonPositiveDuration(FlatplanError, ValueError):
    pass


class IllConditioned(FlatplanError, ArithmeticError):
    pass


class EmptyBracket(FlatplanError, ValueError):
    pass


class NoFiniteCost(FlatplanError, ArithmeticError):
    pass


class NonPositiveStep(FlatplanError, ValueError):
    pass


# crane model
class RopeInverted(FlatplanError, ValueError):
    pass


class RopeSlack(FlatplanError, ValueError):
    pass


class UnactuatedResidual(FlatplanError, ArithmeticError):
    pass


class SingularMass(FlatplanError, ArithmeticError):
    pass


# world
class DegenerateWorkspace(FlatplanError, ValueError):
    pass


class OutOfWorkspace(FlatplanError, ValueError):
    pass


# planner
class NoFreeSpace(FlatplanError, RuntimeError):
    pass


class InfeasibleEndpoints(FlatplanError, ValueError):
    pass


class NoSolutionFound(FlatplanError, RuntimeError):
    """Planning budget exhausted without reaching the target.

    The partially built tree is attached so callers can warm-start from it.
    """

    def __init__(self, message, tree=None, stats=None):
        super().__init__(message)
        self.tree = tree
        self.stats = stats


class NoSolution(FlatplanError, ValueError):
    pass


class IncompatibleTrees(FlatplanError, ValueError):
    pass


class IncompatibleDump(FlatplanError, ValueError):
    pass
