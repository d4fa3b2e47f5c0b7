"""Exception types shared across the package."""


class MhtError(Exception):
    """Base class for all package errors."""


class ZeroColumn(MhtError):
    def __init__(self, j):
        self.j = j
        super().__init__(f"column {j} has (near-)zero norm")


class DegenerateStep(MhtError):
    """No usable alternative dimension at this step (n too small)."""

    def __init__(self, k, msg=""):
        self.k = k
        super().__init__(msg or f"no alternative with positive residual dof at step k={k}")


class DegenerateResidual(MhtError):
    """Observation numerically inside the tested subspace."""

    def __init__(self, k, msg=""):
        self.k = k
        super().__init__(msg or f"residual norm numerically zero at step k={k}")


class RankUnreachable(MhtError):
    def __init__(self, k):
        self.k = k
        super().__init__(f"no prefix of the column family spans dimension {k}")


class RankDeficient(MhtError):
    pass


class NotConverged(MhtError):
    """Carries the partial fit that failed to converge."""

    def __init__(self, fit, msg=""):
        self.fit = fit
        super().__init__(msg or "coordinate descent did not converge")


class NotOrthonormal(MhtError):
    pass


class RequiresPltN(MhtError):
    pass


class NonMonotoneFrequency(MhtError):
    """Bootstrap frequency path dropped back below 1 at a smaller penalty."""


class AssumptionViolated(MhtError):
    pass


class ConfigError(MhtError):
    pass
