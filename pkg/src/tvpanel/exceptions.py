"""Exception hierarchy for tvpanel."""


class TVPanelError(Exception):
    """Base class for all package errors."""


class PanelParseError(TVPanelError, ValueError):
    """Malformed CSV input. ``line`` is the 1-based line number, if known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(TVPanelError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid panel dataset: {text}")


class EstimationError(TVPanelError, RuntimeError):
    """Base class for failures of the local likelihood machinery."""


class EmptyWindow(EstimationError):
    pass


class SingularHessian(EstimationError):
    pass


class NonFinite(EstimationError, FloatingPointError):
    pass


class MaxIterExceeded(EstimationError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class NoVisitAtT(EstimationError):
    pass


class SingularSigma1(EstimationError):
    pass


class AllPointsFailed(EstimationError):
    pass


class DegenerateCurvature(TVPanelError, ValueError):
    pass


class NonMonotoneMeanFunction(TVPanelError, ValueError):
    def __init__(self, t, z):
        self.t = t
        self.z = z
        super().__init__(f"mean function decreases at t={t:.6g}, z={z:.6g}")


class LowConvergence(TVPanelError, RuntimeError):
    pass
