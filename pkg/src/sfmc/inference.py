"""Plug-in asymptotic variances and confidence intervals for fitted entries.

All weight matrices are built from the fitted canonical model with the
expectations replaced by single-cell plug-ins: ``pi * E[-l'']`` becomes
``expit(theta_hat) * (-l''(x, m_hat))`` and ``pi * E[l'^2]`` becomes
``w * l'(x, m_hat)^2``.

Column blocks of the per-column matrices ``Psi_j`` are ordered
``(shared, theta-specific, m-specific)``.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .errors import DegenerateInformationError, InputError, NonFiniteError
from .losses import Huber

__all__ = ["InferenceWeights", "EntryVariance", "build_weights", "entry_variance",
           "variance_matrices", "standard_errors", "confidence_interval", "AmseCurve"]

COND_MAX = 1e12


@dataclass(frozen=True)
class InferenceWeights:
    """Per-row and per-column information matrices.

    ``phi_theta_i`` has shape ``(n1, d_s+d_theta, d_s+d_theta)``,
    ``phi_m_i`` and ``phi_m_tilde_i`` have shape ``(n1, d_s+d_m, d_s+d_m)``,
    ``psi_j`` and ``psi_tilde_j`` have shape ``(n2, d, d)``.
    """

    phi_theta_i: np.ndarray
    phi_m_i: np.ndarray
    phi_m_tilde_i: np.ndarray
    psi_j: np.ndarray
    psi_tilde_j: np.ndarray
    eta: float
    ranks: tuple


@dataclass(frozen=True)
class EntryVariance:
    v_theta: float
    v_m: float


def _row_outer(a):
    r = a.shape[1]
    return (a[:, :, None] * a[:, None, :]).reshape(a.shape[0], r * r)


def _weighted_grams(weights, vecs, scale):
    # out[k] = scale * sum_l weights[k, l] * vecs[l] vecs[l]^T
    r = vecs.shape[1]
    if r == 0:
        return np.zeros((weights.shape[0], 0, 0))
    return (weights @ _row_outer(vecs)).reshape(-1, r, r) * scale


def _plugins(data, fm, loss, allow_huber=False):
    if isinstance(loss, Huber) and not allow_huber:
        raise InputError("inference is not available for the huber loss")
    p = fm.assemble()
    m, theta = p.m, p.theta
    x = data.x_clean
    pi = expit(theta)
    logit_w = pi * expit(-theta)
    curv = pi * -np.asarray(loss.d2(x, m), dtype=float)
    sq = np.where(data.w, np.asarray(loss.d1(x, m), dtype=float) ** 2, 0.0)
    for name, a in (("logistic weight", logit_w), ("curvature", curv), ("score square", sq)):
        bad = ~np.isfinite(a)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise NonFiniteError("non-finite %s plug-in at entry (%d, %d)" % (name, i, j),
                                 location=(int(i), int(j)))
    return logit_w, curv, sq


def _factor_vectors(fm):
    return np.hstack([fm.f_s, fm.f_th]), np.hstack([fm.f_s, fm.f_m])


def _loading_vectors(fm):
    """Rows ``(l_th1, l_th2, 0)`` and ``(l_m1, 0, l_m2)`` in Psi block order."""
    n1 = fm.n1
    d_s, d_m, d_t = fm.ranks
    a = np.hstack([fm.lambda_th1, fm.lambda_th2, np.zeros((n1, d_m))])
    b = np.hstack([fm.lambda_m1, np.zeros((n1, d_t)), fm.lambda_m2])
    return a, b


class _PsiParts:
    """``Psi(eta) = P + eta C`` and ``Psi~(eta) = P + eta^2 S``."""

    def __init__(self, fm, logit_w, curv, sq):
        a, b = _loading_vectors(fm)
        n1 = fm.n1
        self.p = _weighted_grams(logit_w.T, a, 1.0 / n1)
        self.c = _weighted_grams(curv.T, b, 1.0 / n1)
        self.s = _weighted_grams(sq.T, b, 1.0 / n1)

    def psi(self, eta):
        return self.p + eta * self.c

    def psi_tilde(self, eta):
        return self.p + eta * eta * self.s


def build_weights(data, fm, loss, eta):
    """Plug-in information matrices for a fitted canonical model.

    Empty blocks (``d_s + d_theta = 0`` or ``d_s + d_m = 0``) give arrays with
    zero-sized trailing dimensions. Raises :class:`InputError` for the huber
    loss and :class:`NonFiniteError` for non-finite plug-ins.
    """
    if data.shape != (fm.n1, fm.n2):
        raise InputError("data shape %s does not match the model" % (data.shape,))
    if not (eta > 0 and math.isfinite(eta)):
        raise InputError("eta must be positive and finite")
    logit_w, curv, sq = _plugins(data, fm, loss)
    g_t, g_m = _factor_vectors(fm)
    n2 = fm.n2
    parts = _PsiParts(fm, logit_w, curv, sq)
    return InferenceWeights(
        phi_theta_i=_weighted_grams(logit_w, g_t, 1.0 / n2),
        phi_m_i=_weighted_grams(curv, g_m, 1.0 / n2),
        phi_m_tilde_i=_weighted_grams(sq, g_m, 1.0 / n2),
        psi_j=parts.psi(eta),
        psi_tilde_j=parts.psi_tilde(eta),
        eta=float(eta),
        ranks=fm.ranks,
    )


def _guarded_inverse(mats, name):
    """Batched inverse of symmetric positive definite matrices."""
    if mats.shape[-1] == 0:
        return mats.copy()
    lam, vec = np.linalg.eigh(mats)
    lo, hi = lam[:, 0], lam[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lo > 0, hi / lo, np.inf)
    bad = np.flatnonzero(~(cond <= COND_MAX))
    if bad.size:
        k = int(bad[np.argmax(cond[bad])])
        raise DegenerateInformationError(
            "degenerate information: %s[%d] has condition number %.3g" % (name, k, cond[k]),
            condition=float(cond[k]))
    return (vec / lam[:, None, :]) @ np.swapaxes(vec, 1, 2)


def _sandwich(inv, mid):
    return inv @ mid @ inv


def _quad_rows(g, mats):
    # out[i, j] = g_j^T mats_i g_j
    return np.einsum("jk,ikl,jl->ij", g, mats, g, optimize=True)


def variance_matrices(weights, fm):
    """Asymptotic variances ``(V_m, V_theta)`` for every cell, both ``n1 x n2``."""
    n1, n2 = fm.n1, fm.n2
    g_t, g_m = _factor_vectors(fm)
    a, b = _loading_vectors(fm)
    phi_t_inv = _guarded_inverse(weights.phi_theta_i, "phi_theta")
    phi_m_inv = _guarded_inverse(weights.phi_m_i, "phi_m")
    psi_inv = _guarded_inverse(weights.psi_j, "psi")
    row_m = _sandwich(phi_m_inv, weights.phi_m_tilde_i)
    col = _sandwich(psi_inv, weights.psi_tilde_j)
    scale_row = (n1 + n2) / n2
    scale_col = (n1 + n2) / n1
    v_m = scale_row * _quad_rows(g_m, row_m)
    v_t = scale_row * _quad_rows(g_t, phi_t_inv)
    # column terms: out[i, j] = b_i^T col_j b_i
    v_m += scale_col * np.einsum("ik,jkl,il->ij", b, col, b, optimize=True)
    v_t += scale_col * np.einsum("ik,jkl,il->ij", a, col, a, optimize=True)
    return v_m, v_t


def entry_variance(weights, fm, i, j, eta=None):
    """Variances of a single fitted cell ``(i, j)``."""
    n1, n2 = fm.n1, fm.n2
    if not (0 <= i < n1 and 0 <= j < n2):
        raise InputError("cell (%d, %d) outside %dx%d" % (i, j, n1, n2))
    if eta is not None and not math.isclose(eta, weights.eta):
        raise InputError("weights were built for eta=%g, not %g" % (weights.eta, eta))
    g_t, g_m = _factor_vectors(fm)
    a, b = _loading_vectors(fm)
    phi_t_inv = _guarded_inverse(weights.phi_theta_i[i:i + 1], "phi_theta")[0]
    phi_m_inv = _guarded_inverse(weights.phi_m_i[i:i + 1], "phi_m")[0]
    psi_inv = _guarded_inverse(weights.psi_j[j:j + 1], "psi")[0]
    col = psi_inv @ weights.psi_tilde_j[j] @ psi_inv
    row_m = phi_m_inv @ weights.phi_m_tilde_i[i] @ phi_m_inv
    scale_row = (n1 + n2) / n2
    scale_col = (n1 + n2) / n1
    v_m = scale_row * g_m[j] @ row_m @ g_m[j] + scale_col * b[i] @ col @ b[i]
    v_t = scale_row * g_t[j] @ phi_t_inv @ g_t[j] + scale_col * a[i] @ col @ a[i]
    return EntryVariance(v_theta=float(v_t), v_m=float(v_m))


def standard_errors(v, n1, n2):
    return np.sqrt(np.asarray(v, dtype=float) / (n1 + n2))


def confidence_interval(est, v, n1, n2, level=0.95):
    """``est -/+ z * sqrt(v / (n1 + n2))`` with ``z`` the normal quantile."""
    if not 0 < level < 1:
        raise InputError("level must lie in (0, 1)")
    z = norm.ppf(0.5 + level / 2.0)
    half = z * standard_errors(v, n1, n2)
    return est - half, est + half


class AmseCurve:
    """Sampled asymptotic MSE of the fitted ``M`` as a function of ``eta``.

    The row term does not depend on ``eta``; the column term is rebuilt from
    ``Psi(eta)`` and ``Psi~(eta)`` at the fitted model. Accepts the huber
    loss, whose second derivative is used almost everywhere.
    """

    def __init__(self, data, fm, loss):
        logit_w, curv, sq = _plugins(data, fm, loss, allow_huber=True)
        _, g_m = _factor_vectors(fm)
        n2 = fm.n2
        phi_m = _weighted_grams(curv, g_m, 1.0 / n2)
        phi_m_tilde = _weighted_grams(sq, g_m, 1.0 / n2)
        inv = _guarded_inverse(phi_m, "phi_m")
        self.row_term = float(np.trace(_sandwich(inv, phi_m_tilde), axis1=1, axis2=2).sum())
        self.parts = _PsiParts(fm, logit_w, curv, sq)
        _, b = _loading_vectors(fm)
        self.gram = b.T @ b
        self.n1 = fm.n1

    def column_term(self, eta):
        inv = _guarded_inverse(self.parts.psi(eta), "psi")
        col = _sandwich(inv, self.parts.psi_tilde(eta))
        return float(np.einsum("jkl,lk->", col, self.gram)) / self.n1

    def __call__(self, eta):
        return self.row_term + self.column_term(eta)
