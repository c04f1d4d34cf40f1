"""Exception hierarchy.

Precondition failures (bad mathematical input) and numerical failures are kept
apart so the command line runner can map them onto distinct exit codes.
"""


class SymplabError(Exception):
    exit_code = 1

    def diagnostics(self):
        return {"error": type(self).__name__, "message": str(self)}


class PreconditionError(SymplabError, ValueError):
    exit_code = 2


class InvalidAreaError(PreconditionError):
    pass


class InvalidCollarError(PreconditionError):
    pass


class SurfaceMismatchError(PreconditionError):
    pass


class UnsupportedExtensionError(PreconditionError):
    def __init__(self, message, defect=None):
        super().__init__(message)
        self.defect = defect

    def diagnostics(self):
        d = super().diagnostics()
        d["defect"] = self.defect
        return d


class NonExactFormError(PreconditionError):
    """phi^*beta - beta has a nonzero period on some closed cycle."""

    def __init__(self, cycle, integral):
        super().__init__(f"form is not exact: integral over {cycle!r} is {integral:.3e}")
        self.cycle = cycle
        self.integral = integral

    def diagnostics(self):
        d = super().diagnostics()
        d.update(cycle=self.cycle, integral=self.integral)
        return d


class InvarianceViolationError(PreconditionError):
    pass


class EmptyCensusError(PreconditionError):
    pass


class ConvergenceError(SymplabError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved

    def diagnostics(self):
        d = super().diagnostics()
        d["achieved"] = self.achieved
        return d


class IntegratorError(ConvergenceError):
    pass


class QuadratureError(ConvergenceError):
    pass
