"""Exception hierarchy.

Every error raised by the library derives from :class:`SfmcError` and carries
an ``exit_code`` used by the command line front end (2 input error,
3 numerical failure, 4 non-convergence).
"""


class SfmcError(Exception):
    exit_code = 3

    def details(self):
        """Key/value payload for machine-readable error lines."""
        return {}


class InputError(SfmcError, ValueError):
    exit_code = 2


class DimensionError(InputError):
    """Block or matrix shapes are inconsistent."""

    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block

    def details(self):
        return {"block": self.block}


class NumericalError(SfmcError, ArithmeticError):
    exit_code = 3


class NonFiniteError(NumericalError):
    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location

    def details(self):
        return {"location": self.location}


class RankDeficientError(NumericalError):
    """Input matrix has fewer numerically nonzero singular values than required."""

    def __init__(self, message, matrix=None, index=None, sigma=None, sigma_max=None):
        super().__init__(message)
        self.matrix = matrix
        self.index = index
        self.sigma = sigma
        self.sigma_max = sigma_max

    def details(self):
        return {"matrix": self.matrix, "index": self.index,
                "sigma": self.sigma, "sigma_max": self.sigma_max}


class InconsistentRanksError(NumericalError):
    """Rank counts from thresholding give a negative block rank."""

    def __init__(self, d_hat, count_m, count_theta):
        self.d_hat = int(d_hat)
        self.count_m = int(count_m)
        self.count_theta = int(count_theta)
        d_s = count_m + count_theta - d_hat
        super().__init__(
            "inconsistent rank counts: d_hat=%d, (d_s+d_m)_hat=%d, (d_s+d_theta)_hat=%d "
            "give d_s=%d, d_m=%d, d_theta=%d"
            % (d_hat, count_m, count_theta, d_s, d_hat - count_theta, d_hat - count_m))

    def details(self):
        return {"d_hat": self.d_hat, "count_m": self.count_m, "count_theta": self.count_theta}


class DegenerateInformationError(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition

    def details(self):
        return {"condition": self.condition}


class CorrectionInfeasibleError(NumericalError):
    pass


class ProxUndefinedError(NumericalError, ValueError):
    pass


class DegenerateDesignError(InputError):
    pass


class NonConvergenceError(SfmcError):
    exit_code = 4


class MuSelectionError(NumericalError):
    """No grid point produced a usable rank estimate."""

    def __init__(self, message, records=()):
        super().__init__(message)
        self.records = list(records)

    def details(self):
        return {"records": len(self.records)}
