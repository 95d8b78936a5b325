"""Exception hierarchy shared by every aepn module."""


class AEPNError(Exception):
    """Base class for all library errors."""


class NetValidationError(AEPNError, ValueError):
    """A net definition is malformed. ``element`` names the offender."""

    def __init__(self, element, message=None):
        self.element = element
        super().__init__(message or f"{type(self).__name__}: {element!r}")


class DuplicateId(NetValidationError):
    pass


class UnknownPlaceInArc(NetValidationError):
    pass


class SchemaMismatch(NetValidationError):
    pass


class UnknownRegistryRef(NetValidationError):
    pass


class MissingTransitions(NetValidationError):
    pass


class InvalidHorizon(NetValidationError):
    pass


class UnknownPlace(AEPNError, KeyError):
    pass


class FlagLengthMismatch(AEPNError, ValueError):
    pass


class StaleBinding(AEPNError):
    """The binding is not enabled in the marking it was fired on."""


class IndexOutOfRange(AEPNError, IndexError):
    pass


class EpisodeFinished(AEPNError):
    pass


class NoActions(AEPNError):
    pass


class BudgetExceeded(AEPNError):
    pass


class NonFiniteLoss(AEPNError, FloatingPointError):
    pass


class BudgetExhaustedWithoutTarget(AEPNError, RuntimeWarning):
    pass


class ModelSchemaMismatch(AEPNError, ValueError):
    pass


class UnknownProblem(AEPNError, KeyError):
    pass


class UnknownPolicy(AEPNError, KeyError):
    pass


class UnknownStage(AEPNError, ValueError):
    pass


class EmptyEvaluation(AEPNError, ValueError):
    pass
