"""Matrix MCP penalty, its proximal map and the penalized joint estimator.

The penalized problem is solved by proximal gradient on the stacked matrix
``H = [M; Theta]``: a gradient step on the joint objective followed by firm
thresholding of the singular values and truncation to the top ``k``.
"""

from dataclasses import dataclass
import math
import warnings
from typing import Optional

import numpy as np

from . import kernels
from .errors import InputError, NonFiniteError, ProxUndefinedError
from .losses import Quadratic, loss_part_terms, loss_part_value
from .model import ParamPair
from .oracle import ConvergenceWarning, init_transform
from .report import FitReport

__all__ = ["McpConfig", "mcp_scalar", "mcp_penalty", "firm_threshold_shrink",
           "firm_threshold", "fit_mcp", "mcp_init", "default_k", "topk_svd"]


def default_k(n1, n2):
    return max(1, int(math.isqrt(min(n1, n2))))


@dataclass(frozen=True)
class McpConfig:
    """Settings for :func:`fit_mcp`. ``k=None`` means ``floor(sqrt(min(n1, n2)))``."""

    mu: float
    gamma: float = 1.5
    k: Optional[int] = None
    eta: float = 1.0
    max_iter: int = 500
    tol: float = 1e-7
    backtrack: float = 0.5
    momentum: bool = True
    svd: str = "auto"  # "auto" | "exact"
    power_iters: int = 2
    oversample: int = 10
    # stop once the rank has sat at the cap for this many iterations (None: never)
    saturation_patience: Optional[int] = None
    # stop once |m| or |theta| leaves these boxes (None: unbounded)
    cap_m: Optional[float] = None
    cap_theta: Optional[float] = None

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise InputError("mu must be positive and finite, got %r" % self.mu)
        if not self.gamma > 1:
            raise InputError("gamma must exceed 1, got %r" % self.gamma)
        if self.k is not None and self.k < 1:
            raise InputError("rank cap k must be at least 1")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InputError("eta must be positive and finite")
        if self.svd not in ("auto", "exact"):
            raise InputError("svd must be 'auto' or 'exact'")

    @property
    def threshold(self):
        return self.mu * self.gamma


def mcp_scalar(x, mu, gamma):
    """Scalar MCP: ``mu x - x^2 / (2 gamma)`` up to ``gamma mu``, then ``mu^2 gamma / 2``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InputError("mcp_scalar needs x >= 0")
    out = np.where(x <= gamma * mu, mu * x - x * x / (2.0 * gamma), 0.5 * mu * mu * gamma)
    return float(out) if out.ndim == 0 else out


def mcp_penalty(h, mu, gamma):
    """Sum of :func:`mcp_scalar` over the singular values of ``h``."""
    s = np.linalg.svd(np.asarray(h, dtype=float), compute_uv=False)
    return float(np.sum(mcp_scalar(s, mu, gamma)))


def _penalty_from_sv(s, mu, gamma):
    if len(s) == 0:
        return 0.0
    return float(np.sum(mcp_scalar(np.asarray(s), mu, gamma)))


def firm_threshold(sigma, step, mu, gamma):
    """Vectorized proximal map of ``step * MCP`` on nonnegative values."""
    if not gamma > step:
        raise ProxUndefinedError("prox undefined: gamma=%g must exceed step=%g" % (gamma, step))
    sigma = np.asarray(sigma, dtype=float)
    lo = step * mu
    mid = (sigma - lo) / (1.0 - step / gamma)
    return np.where(sigma <= lo, 0.0, np.where(sigma <= gamma * mu, mid, sigma))


def firm_threshold_shrink(sigma, step, mu, gamma):
    """Global minimizer over ``y >= 0`` of ``(sigma - y)^2 / (2 step) + MCP(y)``.

    Zero up to ``step mu``, linear inflation ``(sigma - step mu) / (1 - step / gamma)``
    up to ``gamma mu``, identity beyond. Raises :class:`ProxUndefinedError`
    when ``gamma <= step``.
    """
    if sigma < 0:
        raise InputError("sigma must be nonnegative")
    return float(firm_threshold(sigma, step, mu, gamma))


def topk_svd(a, k, v0=None, power_iters=2, oversample=10, rng=None):
    """Approximate top-``k`` SVD by subspace iteration, warm-started from ``v0``.

    Returns all ``min(k + oversample, n1, n2)`` computed triplets; callers
    keep the leading ``k``.
    """
    n1, n2 = a.shape
    r = min(k + oversample, n1, n2)
    rng = np.random.default_rng(0) if rng is None else rng
    if v0 is not None and v0.shape[1]:
        v0 = v0[:, :r]
        extra = r - v0.shape[1]
        omega = np.hstack([v0, rng.standard_normal((n2, extra))]) if extra > 0 else v0
    else:
        omega = rng.standard_normal((n2, r))
    y = a @ omega
    for _ in range(power_iters):
        q, _ = np.linalg.qr(y)
        z, _ = np.linalg.qr(a.T @ q)
        y = a @ z
    q, _ = np.linalg.qr(y)
    ub, s, vt = np.linalg.svd(q.T @ a, full_matrices=False)
    return q @ ub, s, vt


def _exact_svd(a):
    return np.linalg.svd(a, full_matrices=False)


def mcp_init(data, loss, k):
    """Spectral start for the penalized fit: rank-``k`` truncations of the
    filled data matrix and of the logit of the smoothed mask."""
    from scipy.special import logit
    w = data.w
    x = init_transform(loss, data.x_clean)
    mean = float(x[w].mean())
    filled = mean + np.where(w, x - mean, 0.0) / data.rate
    u, s, vt = _exact_svd(filled)
    m0 = (u[:, :k] * s[:k]) @ vt[:k]
    u, s, vt = _exact_svd(data.w_float)
    smooth = np.clip((u[:, :k] * s[:k]) @ vt[:k], 0.01, 0.99)
    u, s, vt = _exact_svd(logit(smooth))
    t0 = (u[:, :k] * s[:k]) @ vt[:k]
    return np.vstack([m0, t0])


class _Smooth:
    def __init__(self, data, loss, eta):
        self.x = data.x_clean
        self.w = data.w
        self.wf = data.w_float
        self.loss = loss
        self.eta = float(eta)
        self.n1 = data.n1

    def value(self, h):
        m, t = h[:self.n1], h[self.n1:]
        return loss_part_value(self.x, self.w, m, self.eta, self.loss) + kernels.logistic_value(self.wf, t)

    def value_grad(self, h):
        m, t = h[:self.n1], h[self.n1:]
        lv, gm, _ = loss_part_terms(self.x, self.w, m, self.eta, self.loss)
        tv, gt = kernels.logistic_grad(self.wf, t)
        return lv + tv, np.vstack([gm, gt])


def _prox(z, step, cfg, k, v_prev, exact):
    if exact or min(z.shape) <= k + cfg.oversample + 5:
        u, s, vt = _exact_svd(z)
    else:
        u, s, vt = topk_svd(z, k, None if v_prev is None else v_prev,
                            cfg.power_iters, cfg.oversample)
    s_new = firm_threshold(s, step, cfg.mu, cfg.gamma)[:k]
    keep = np.flatnonzero(s_new > 0)
    u, s_new, vt = u[:, keep], s_new[keep], vt[keep]
    return (u * s_new) @ vt, (u, s_new, vt), vt.T


def fit_mcp(data, loss=None, cfg=None, init=None):
    """MCP-penalized joint estimate of ``(M, Theta)``.

    Parameters
    ----------
    data : MaskedData
    loss : LossSpec, optional
    cfg : McpConfig
    init : ndarray or ParamPair, optional
        Starting stacked matrix; the spectral start of :func:`mcp_init` when
        absent.

    Returns
    -------
    (ParamPair, FitReport)
        ``report.svd`` holds ``(u, s, vt)`` of the stacked estimate, whose
        rank never exceeds ``k``.
    """
    if cfg is None:
        raise InputError("fit_mcp needs an McpConfig (mu has no default)")
    loss = Quadratic() if loss is None else loss
    n1, n2 = data.shape
    if data.n_obs == 0:
        raise InputError("no observed entries")
    k = cfg.k if cfg.k is not None else default_k(n1, n2)
    k = min(k, min(2 * n1, n2))
    if init is None:
        h = mcp_init(data, loss, k)
    elif isinstance(init, ParamPair):
        h = init.h
    else:
        h = np.array(init, dtype=float)
    if h.shape != (2 * n1, n2):
        raise InputError("init has shape %s, expected %s" % (h.shape, (2 * n1, n2)))

    smooth = _Smooth(data, loss, cfg.eta)
    curv = loss.curvature_bound(h[:n1])
    step = 4.0 / (1.0 + cfg.eta * curv)
    while step >= cfg.gamma:
        step *= cfg.backtrack

    sv = np.linalg.svd(h, compute_uv=False)
    f_val, grad = smooth.value_grad(h)
    if not math.isfinite(f_val):
        raise NonFiniteError("objective at the starting point is not finite")
    obj = f_val + _penalty_from_sv(sv, cfg.mu, cfg.gamma)
    trace = [obj]
    state = {"step": step}

    def prox_step(y, fy, gy, exact, v_prev):
        # backtrack until the quadratic upper bound holds at the new point
        while True:
            t = state["step"]
            h_new, fac_new, v_new = _prox(y - t * gy, t, cfg, k, v_prev, exact)
            f_new = smooth.value(h_new)
            d = h_new - y
            bound = fy + float(np.sum(gy * d)) + float(np.sum(d * d)) / (2.0 * t)
            if math.isfinite(f_new) and f_new <= bound + 1e-12 * abs(bound):
                return h_new, fac_new, v_new, f_new, f_new + _penalty_from_sv(fac_new[1], cfg.mu, cfg.gamma)
            state["step"] = t * cfg.backtrack
            if state["step"] < 1e-12:
                raise NonFiniteError("step size underflow in penalized fit")

    h_prev = h
    fac = v_prev = None
    converged = False
    exact = cfg.svd == "exact"
    violations = 0
    saturated_for = 0
    stopped = None
    beta = 1.0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        result = None
        if cfg.momentum and it > 1:
            beta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * beta * beta))
            y = h + ((beta - 1.0) / beta_next) * (h - h_prev)
            fy, gy = smooth.value_grad(y)
            if math.isfinite(fy):
                cand = prox_step(y, fy, gy, exact, v_prev)
                if cand[4] <= obj + 1e-12 * abs(obj):
                    result = cand
                    beta = beta_next
        if result is None:
            # plain step from the current iterate, exact SVD if the fast one fails
            beta = 1.0
            result = prox_step(h, f_val, grad, exact, v_prev)
            if result[4] > obj + 1e-12 * abs(obj) and not exact:
                result = prox_step(h, f_val, grad, True, v_prev)
            if result[4] > obj + 1e-12 * abs(obj):
                violations += 1
        h_new, fac, v_prev, _, obj = result
        h_prev, h = h, h_new
        trace.append(obj)
        f_val, grad = smooth.value_grad(h)
        if cfg.saturation_patience is not None:
            saturated_for = saturated_for + 1 if len(fac[1]) >= k else 0
            if saturated_for >= cfg.saturation_patience:
                stopped = "saturated"
                break
        if cfg.cap_theta is not None and np.abs(h[n1:]).max() > cfg.cap_theta:
            stopped = "cap"
            break
        if cfg.cap_m is not None and np.abs(h[:n1]).max() > cfg.cap_m:
            stopped = "cap"
            break
        change = math.sqrt(float(np.sum((h - h_prev) ** 2)))
        scale = 1.0 + math.sqrt(float(np.sum(h_prev ** 2)))
        if change <= cfg.tol * scale:
            if exact:
                converged = True
                break
            # confirm the fixed point with exact singular values
            exact = True
    step = state["step"]

    if fac is None:
        u, s, vt = _exact_svd(h)
        fac = (u, s, vt)
    p = ParamPair.from_stacked(h)
    report = FitReport(method="mcp", params=p, mu=cfg.mu, gamma=cfg.gamma, eta=cfg.eta,
                       k=k, objective_trace=trace, n_iter=it, converged=converged, svd=fac)
    report.extra["step"] = step
    report.extra["stopped"] = stopped
    if violations:
        report.warnings.append("objective increased on %d iterations" % violations)
    if stopped == "saturated":
        report.warnings.append("rank reached the cap k=%d; stopped early" % k)
    elif stopped == "cap":
        report.warnings.append("estimate left the entrywise box; stopped early")
    elif not converged:
        msg = "penalized fit did not converge in %d iterations" % cfg.max_iter
        report.warnings.append(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return p, report
