"""Known-rank estimator for the shared factor model.

The objective is minimized over loadings and factors with the ranks held
fixed. Each sweep takes a damped Newton step on the rows of the loadings
(the problem separates over rows given the factors) and then on the rows of
the factors, with Armijo backtracking on the objective. Factors are
re-normalized to the identification constraints periodically; the
normalization does not change ``(M, Theta)``.
"""

import math
import warnings

import numpy as np
from scipy.special import logit

from . import kernels
from .errors import InputError, NonFiniteError, RankDeficientError
from .losses import FitConfig, Quadratic, entry_terms, loss_part_value
from .model import FactorModel, ParamPair, canonicalize, normalize_factors
from .report import FitReport

__all__ = ["fit_known_rank", "project_infinity_caps", "spectral_init",
           "baseline_mcar_fit", "ConvergenceWarning"]


class ConvergenceWarning(UserWarning):
    pass


def project_infinity_caps(p, cfg):
    """Clamp ``m`` to ``[-alpha_m, alpha_m]`` and ``theta`` to ``[-alpha_theta, alpha_theta]``."""
    return ParamPair(np.clip(p.m, -cfg.alpha_m, cfg.alpha_m),
                     np.clip(p.theta, -cfg.alpha_theta, cfg.alpha_theta))


def _check_ranks(ranks, n1, n2):
    try:
        d_s, d_m, d_t = (int(r) for r in ranks)
    except (TypeError, ValueError):
        raise InputError("ranks must be a triple of integers, got %r" % (ranks,)) from None
    if min(d_s, d_m, d_t) < 0:
        raise InputError("ranks must be nonnegative, got %r" % (ranks,))
    lim = min(n1, n2)
    if d_s + d_m > lim or d_s + d_t > lim:
        raise InputError("ranks %r infeasible for a %dx%d matrix" % ((d_s, d_m, d_t), n1, n2))
    return d_s, d_m, d_t


def _truncated(a, r):
    if r == 0:
        return np.zeros_like(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return (u[:, :r] * s[:r]) @ vt[:r]


def init_transform(loss, x):
    """Map observed data to the scale of ``m`` for initialization."""
    name = getattr(loss, "name", None)
    if name == "poisson":
        return np.log(np.maximum(x, 0.0) + 0.5)
    if name == "bernoulli":
        return logit(np.clip(x, 0.05, 0.95))
    return x


def spectral_init(data, ranks, loss=None):
    """Spectral starting point.

    ``m``: unobserved cells filled with the observed mean, deviations scaled
    by the inverse observation rate, truncated SVD at ``d_s + d_m``.
    ``theta``: logit of a rank ``d_s + d_theta`` smoothing of the mask
    clamped to ``[0.01, 0.99]``, truncated at the same rank.
    """
    d_s, d_m, d_t = ranks
    if data.n_obs == 0:
        raise InputError("no observed entries")
    w = data.w
    x = init_transform(loss, data.x_clean)
    mean = float(x[w].mean())
    filled = mean + np.where(w, x - mean, 0.0) / data.rate
    m0 = _truncated(filled, d_s + d_m)
    r_t = d_s + d_t
    if r_t:
        smooth = np.clip(_truncated(data.w_float, r_t), 0.01, 0.99)
        t0 = _truncated(logit(smooth), r_t)
    else:
        t0 = np.zeros(data.shape)
    return safe_canonicalize(m0, t0, ranks)


def safe_canonicalize(m, theta, ranks, seed=0):
    """:func:`canonicalize` with a tiny deterministic jitter on rank deficiency."""
    try:
        return canonicalize(m, theta, ranks)
    except RankDeficientError:
        rng = np.random.default_rng(seed)
        n1, n2 = m.shape
        scale = 1e-3 * (1.0 + max(np.abs(m).max(), np.abs(theta).max()))
        d_s, d_m, d_t = ranks
        jm = rng.standard_normal((n1, d_s + d_m)) @ rng.standard_normal((d_s + d_m, n2))
        jt = rng.standard_normal((n1, d_s + d_t)) @ rng.standard_normal((d_s + d_t, n2))
        return canonicalize(m + scale * jm / math.sqrt(n2), theta + scale * jt / math.sqrt(n2), ranks)


def _row_outer(a):
    # rows of a -> flattened outer products, shape (n, r*r)
    r = a.shape[1]
    return (a[:, :, None] * a[:, None, :]).reshape(a.shape[0], r * r)


def _newton_dirs(grad, curv, basis, ridge):
    """Per-row Newton directions ``-H_i^{-1} g_i`` with ``H_i = sum_j c_ij b_j b_j^T``."""
    r = basis.shape[1]
    if r == 0:
        return np.zeros_like(grad)
    hess = (curv @ _row_outer(basis)).reshape(-1, r, r)
    diag = np.einsum("nii->n", hess) / r
    hess = hess + (ridge * diag + 1e-12)[:, None, None] * np.eye(r)
    return -np.linalg.solve(hess, grad[..., None])[..., 0]


class _Problem:
    """Raw-array view of the data plus the loss, with cached constants."""

    def __init__(self, data, loss, cfg):
        self.x = data.x_clean
        self.w = data.w
        self.loss = loss
        self.eta = float(cfg.eta)
        self.cfg = cfg
        self.majorize = loss.kind == "huber"

    def obj_m(self, m):
        return loss_part_value(self.x, self.w, m, self.eta, self.loss)

    def obj_t(self, theta):
        return kernels.logistic_value(self.w, theta)

    def terms(self, m, theta):
        obj, gm, gt, cm, ct = entry_terms(self.x, self.w, m, theta, self.eta, self.loss)
        if self.majorize:
            cm = self.eta * self.w
        return obj, gm, gt, cm, ct

    def within_caps(self, m=None, theta=None):
        if m is not None and np.abs(m).max(initial=0.0) > self.cfg.alpha_m:
            return False
        if theta is not None and np.abs(theta).max(initial=0.0) > self.cfg.alpha_theta:
            return False
        return True


def _armijo(f, f0, slope, make, check, cfg, max_halvings=40):
    """Backtracking on ``f(make(s))``; returns ``(s, value, candidate)`` or ``None``."""
    if not slope < 0:
        return None
    s = 1.0
    for _ in range(max_halvings):
        cand = make(s)
        if check(cand):
            val = f(cand)
            if math.isfinite(val) and val <= f0 + cfg.armijo_c * s * slope:
                return s, val, cand
        s *= cfg.backtrack
    return None


class _Blocks:
    """Mutable loadings/factors in stacked form."""

    def __init__(self, fm):
        self.ranks = fm.ranks
        d_s, d_m, d_t = self.ranks
        self.lm = np.array(fm.load_m)
        self.lt = np.array(fm.load_theta)
        self.f = np.hstack([fm.f_s, fm.f_m, fm.f_th])
        self.idx_m = np.arange(d_s + d_m)
        self.idx_t = np.r_[0:d_s, d_s + d_m:d_s + d_m + d_t].astype(int)

    @property
    def gm(self):
        return self.f[:, self.idx_m]

    @property
    def gt(self):
        return self.f[:, self.idx_t]

    def m(self, lm=None, f=None):
        lm = self.lm if lm is None else lm
        f = self.f if f is None else f
        return lm @ f[:, self.idx_m].T

    def theta(self, lt=None, f=None):
        lt = self.lt if lt is None else lt
        f = self.f if f is None else f
        return lt @ f[:, self.idx_t].T

    def embedded(self):
        d = self.f.shape[1]
        a = np.zeros((self.lm.shape[0], d))
        b = np.zeros((self.lt.shape[0], d))
        a[:, self.idx_m] = self.lm
        b[:, self.idx_t] = self.lt
        return a, b

    def model(self):
        return FactorModel.from_stacked(self.lm, self.lt, self.f, self.ranks)

    def renormalize(self):
        fm = normalize_factors(self.model())
        self.lm = np.array(fm.load_m)
        self.lt = np.array(fm.load_theta)
        self.f = np.hstack([fm.f_s, fm.f_m, fm.f_th])


def fit_known_rank(data, ranks, loss=None, cfg=None, init=None):
    """Minimize the joint objective over factor models with fixed ranks.

    Parameters
    ----------
    data : MaskedData
    ranks : tuple
        ``(d_s, d_m, d_theta)``.
    loss : LossSpec, optional
        Defaults to :class:`Quadratic`.
    cfg : FitConfig, optional
    init : FactorModel, optional
        Starting point; spectral initialization when absent.

    Returns
    -------
    (FactorModel, FitReport)
        The model is in canonical form. ``report.converged`` is False when
        ``max_iter`` sweeps ran out; a :class:`ConvergenceWarning` is issued.
    """
    loss = Quadratic() if loss is None else loss
    cfg = FitConfig() if cfg is None else cfg
    n1, n2 = data.shape
    ranks = _check_ranks(ranks, n1, n2)
    if data.n_obs == 0:
        raise InputError("no observed entries")
    if init is None:
        init = spectral_init(data, ranks, loss)
    elif init.ranks != ranks or (init.n1, init.n2) != (n1, n2):
        raise InputError("init has ranks %s and shape %s, expected %s and %s"
                         % (init.ranks, (init.n1, init.n2), ranks, (n1, n2)))

    prob = _Problem(data, loss, cfg)
    blk = _Blocks(normalize_factors(init) if sum(ranks) else init)
    # the line search only rejects steps that leave the box, so start inside it
    for attr, make, cap in (("lm", blk.m, cfg.alpha_m), ("lt", blk.theta, cfg.alpha_theta)):
        peak = np.abs(make()).max(initial=0.0)
        if peak > cap:
            setattr(blk, attr, getattr(blk, attr) * (0.99 * cap / peak))
    m, theta = blk.m(), blk.theta()
    obj, gm, gt, cm, ct = prob.terms(m, theta)
    if not math.isfinite(obj):
        raise NonFiniteError("objective at the starting point is not finite")
    trace = [obj]
    converged = False
    gnorm = float("nan")
    it = 0
    for it in range(1, cfg.max_iter + 1):
        a_emb, b_emb = blk.embedded()
        g_lm = gm @ blk.gm
        g_lt = gt @ blk.gt
        g_f = gm.T @ a_emb + gt.T @ b_emb
        gnorm = math.sqrt(float((g_lm ** 2).sum() + (g_lt ** 2).sum() + (g_f ** 2).sum()))
        if gnorm <= cfg.tol * (1.0 + abs(obj)):
            converged = True
            it -= 1
            break

        # loadings of m: separable over rows, only the loss part moves
        if blk.lm.shape[1]:
            d = _newton_dirs(g_lm, cm, blk.gm, cfg.ridge)
            f0 = prob.obj_m(m)
            res = _armijo(prob.obj_m, f0, float((g_lm * d).sum()),
                          lambda s: blk.m(lm=blk.lm + s * d),
                          lambda mm: prob.within_caps(m=mm), cfg)
            if res is not None:
                s, _, m = res
                blk.lm = blk.lm + s * d
        # loadings of theta: only the logistic part moves
        if blk.lt.shape[1]:
            d = _newton_dirs(g_lt, ct, blk.gt, cfg.ridge)
            f0 = prob.obj_t(theta)
            res = _armijo(prob.obj_t, f0, float((g_lt * d).sum()),
                          lambda s: blk.theta(lt=blk.lt + s * d),
                          lambda tt: prob.within_caps(theta=tt), cfg)
            if res is not None:
                s, _, theta = res
                blk.lt = blk.lt + s * d

        # factors: all blocks at once, both parts move
        if blk.f.shape[1]:
            obj_mid, gm, gt, cm, ct = prob.terms(m, theta)
            a_emb, b_emb = blk.embedded()
            g_f = gm.T @ a_emb + gt.T @ b_emb
            r = blk.f.shape[1]
            hess = (cm.T @ _row_outer(a_emb) + ct.T @ _row_outer(b_emb)).reshape(-1, r, r)
            diag = np.einsum("nii->n", hess) / r
            hess += (cfg.ridge * diag + 1e-12)[:, None, None] * np.eye(r)
            d = -np.linalg.solve(hess, g_f[..., None])[..., 0]

            def both(pair):
                return prob.obj_m(pair[0]) + prob.obj_t(pair[1])

            res = _armijo(both, obj_mid, float((g_f * d).sum()),
                          lambda s: (blk.m(f=blk.f + s * d), blk.theta(f=blk.f + s * d)),
                          lambda pr: prob.within_caps(pr[0], pr[1]), cfg)
            if res is not None:
                s, _, (m, theta) = res
                blk.f = blk.f + s * d

        if it % cfg.recanon_every == 0:
            blk.renormalize()
            m, theta = blk.m(), blk.theta()
        new_obj, gm, gt, cm, ct = prob.terms(m, theta)
        trace.append(new_obj)
        rel = abs(obj - new_obj) / max(1.0, abs(obj))
        obj = new_obj
        if rel <= cfg.tol * 1e-3:
            converged = True
            break

    if sum(ranks):
        blk.renormalize()
    fm = blk.model()
    report = FitReport(method="oracle", ranks=ranks, model=fm,
                       params=ParamPair(blk.m(), blk.theta()), eta=cfg.eta,
                       objective_trace=trace, n_iter=it, converged=converged,
                       grad_norm=gnorm)
    if not converged:
        msg = "known-rank fit did not converge in %d sweeps (grad norm %.3e)" % (cfg.max_iter, gnorm)
        report.warnings.append(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return fm, report


def baseline_mcar_fit(data, rank, loss=None, cfg=None):
    """Constant-probability comparator: fit ``m`` alone at rank ``rank``.

    Equivalent to :func:`fit_known_rank` with ranks ``(0, rank, 0)``: theta has
    no factors and stays at zero, so the observation weight is constant.
    """
    fm, report = fit_known_rank(data, (0, int(rank), 0), loss, cfg)
    report.method = "mcar"
    return report.params.m, report
