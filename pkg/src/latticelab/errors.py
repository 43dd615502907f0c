"""Exception hierarchy for latticelab.

Every module raises subclasses of :class:`LatticeLabError`; the names match
the failure modes of the public API (validation failures, window/horizon
exhaustion, disagreement between independent computation routes).
"""


class LatticeLabError(Exception):
    pass


# ---------------------------------------------------------------- laws
class LawError(LatticeLabError, ValueError):
    pass


class NotNormalized(LawError):
    pass


class NonzeroMean(LawError):
    pass


class OneSidedSupport(LawError):
    pass


class Reducible(LawError):
    pass


class NoReturnFound(LawError):
    pass


class InfeasibleRecentering(LawError):
    pass


# ---------------------------------------------------------------- kernel
class WindowTooSmall(LatticeLabError):
    pass


class HorizonExceeded(LatticeLabError):
    pass


# ---------------------------------------------------------------- potential
class MethodsDisagree(LatticeLabError):
    pass


class QuadratureSingularity(LatticeLabError):
    pass


class NotConverged(LatticeLabError):
    pass


class OutOfRange(LatticeLabError, IndexError):
    pass


# ---------------------------------------------------------------- absorption
class LadderNotConverged(LatticeLabError):
    pass


class Disagreement(LatticeLabError):
    pass


class ExtrapolationUnstable(LatticeLabError):
    pass


# ---------------------------------------------------------------- green
class RoutesDisagree(LatticeLabError):
    pass


class XiNotInA(LatticeLabError, ValueError):
    pass


class ZeroEscapeMass(LatticeLabError):
    pass


# ---------------------------------------------------------------- asymptotics
class RegimeViolation(LatticeLabError):
    pass


class ContextIncomplete(LatticeLabError):
    pass


class ConditionNull(LatticeLabError):
    pass


class ZeroDenominator(LatticeLabError):
    pass


# ---------------------------------------------------------------- harness
class ConfigError(LatticeLabError, ValueError):
    pass


class IoFailure(LatticeLabError, OSError):
    pass
