"""Rank estimation by singular-value thresholding of the penalized estimate."""

from dataclasses import dataclass

import numpy as np

from .errors import InconsistentRanksError, InputError

__all__ = ["RankEstimate", "estimate_ranks", "numerical_rank"]


@dataclass(frozen=True)
class RankEstimate:
    d_hat: int
    d_s: int
    d_m: int
    d_theta: int
    threshold: float
    sv_h: np.ndarray
    sv_m: np.ndarray
    sv_theta: np.ndarray

    @property
    def ranks(self):
        return (self.d_s, self.d_m, self.d_theta)

    @property
    def counts(self):
        """``(#sigma(M) > T, #sigma(Theta) > T)``."""
        return self.d_s + self.d_m, self.d_s + self.d_theta


def numerical_rank(s, rel=1e-10):
    s = np.asarray(s, dtype=float)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > rel * s[0]))


def estimate_ranks(h_hat, threshold):
    """Split the rank of the stacked estimate into shared and specific parts.

    ``h_hat`` is a :class:`ParamPair`. With ``c_m`` and ``c_theta`` the number
    of singular values of ``M`` and ``Theta`` above ``threshold`` and ``d`` the
    numerical rank of ``[M; Theta]``::

        d_theta = d - c_m,  d_m = d - c_theta,  d_s = c_m + c_theta - d
    """
    if not threshold > 0:
        raise InputError("threshold must be positive, got %r" % threshold)
    sv_h = np.linalg.svd(h_hat.h, compute_uv=False)
    sv_m = np.linalg.svd(h_hat.m, compute_uv=False)
    sv_t = np.linalg.svd(h_hat.theta, compute_uv=False)
    d = numerical_rank(sv_h)
    c_m = int(np.sum(sv_m > threshold))
    c_t = int(np.sum(sv_t > threshold))
    d_t, d_m, d_s = d - c_m, d - c_t, c_m + c_t - d
    if min(d_s, d_m, d_t) < 0:
        raise InconsistentRanksError(d, c_m, c_t)
    return RankEstimate(d, d_s, d_m, d_t, float(threshold), sv_h[:d], sv_m[:c_m], sv_t[:c_t])
