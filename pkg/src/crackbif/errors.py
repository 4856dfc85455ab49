"""Exception types.  Names are written verbatim into run reports."""


class CrackBifError(Exception):
    """Base class for numerical failures."""

    def __init__(self, message: str = "", report=None):
        super().__init__(message)
        self.report = report


class SingularHessian(CrackBifError):
    pass


class NoConvergence(CrackBifError):
    pass


class SingularBorderedSystem(CrackBifError):
    pass


class NoEigenConvergence(CrackBifError):
    pass


class StepFailed(CrackBifError):
    pass


class InitialSolveFailed(CrackBifError):
    pass


class NondegeneracyFailed(CrackBifError):
    pass


class EmptyBin(CrackBifError):
    pass


class DegenerateFit(CrackBifError):
    pass


class InconsistentOrder(CrackBifError):
    pass
