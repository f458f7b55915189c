"""Exception hierarchy shared by all modules."""


class TunnelSpeedError(Exception):
    """Base class; the CLI maps subclasses to exit code 1."""


class DegenerateParameter(TunnelSpeedError, ValueError):
    pass


class InvalidRegime(TunnelSpeedError, ValueError):
    pass


class ZeroDensity(TunnelSpeedError, ArithmeticError):
    """Raised at density nodes where a velocity j/rho is undefined."""


class SingularityEncountered(TunnelSpeedError, ArithmeticError):
    pass


class DegenerateFit(TunnelSpeedError, ValueError):
    pass


class FitWindowTooWide(TunnelSpeedError, ValueError):
    pass
