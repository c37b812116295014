"""Exception types shared across the package."""


class SplitlabError(Exception):
    """Base class for all package errors."""


class BudgetError(SplitlabError):
    """A scan or run would exceed its configured work budget."""


class ResolutionError(SplitlabError):
    """A grid is too coarse for the requested quantity."""


class NonConvergenceError(SplitlabError):
    """Newton iteration failed; carries the last residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class RefusalError(SplitlabError):
    """Inputs are outside the regime where a solver is trusted."""


class SmallDivisorError(RefusalError):
    def __init__(self, k, divisor, amplification):
        super().__init__(
            f"small divisor at mode k={tuple(k)}: |omega.k|={divisor:.3e}, "
            f"amplification {amplification:.3e} exceeds conditioning bound"
        )
        self.k = tuple(k)
        self.divisor = divisor
        self.amplification = amplification


class ConfigError(SplitlabError):
    """Invalid experiment configuration."""
