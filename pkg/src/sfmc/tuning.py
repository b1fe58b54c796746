"""Tuning: information criterion for mu, weight selection for eta, and the
variance and dispersion estimators they rely on."""

from dataclasses import dataclass, field
import math
from typing import Optional

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from ._kernels_py import softplus
from .errors import (CorrectionInfeasibleError, DegenerateInformationError, InputError,
                     MuSelectionError, NumericalError, SfmcError)
from .inference import AmseCurve
from .losses import ExpFamily, FitConfig, Quadratic
from .mcp import McpConfig, default_k, fit_mcp, mcp_init
from .oracle import fit_known_rank, safe_canonicalize
from .ranks import estimate_ranks

__all__ = ["IcRecord", "EtaSelection", "degrees_of_freedom", "ic_value", "q_value",
           "default_mu_grid", "select_mu", "sigma2_naive", "sigma2_corrected",
           "dispersion_hat", "select_eta", "numeric_amse_eta", "IC_COEF"]

IC_COEF = 0.125
_HALF_LOG_2PI_E = 0.5 * (math.log(2.0 * math.pi) + 1.0)


def degrees_of_freedom(ranks, n1, n2):
    d_s, d_m, d_t = (int(r) for r in ranks)
    if min(d_s, d_m, d_t) < 0:
        raise InputError("ranks must be nonnegative")
    return d_s * (2 * n1 + n2 - d_s) + (d_m + d_t) * (n1 + n2 - d_m - d_t)


@dataclass
class IcRecord:
    """One point of the mu search.

    ``status`` is ``"ok"`` when the criterion was evaluated; otherwise it names
    why the point was dropped (``"inconsistent"``, ``"saturated"``, ``"cap"``,
    ``"failed"`` or ``"skipped"``) and ``ic_value`` is infinite.
    """

    mu: float
    q_value: float
    k_f: int
    ic_value: float
    rank_estimate: object = None
    status: str = "ok"
    message: str = ""
    coef: float = IC_COEF
    fit: object = field(default=None, repr=False, compare=False)

    @property
    def ranks(self):
        return None if self.rank_estimate is None else self.rank_estimate.ranks


def sigma2_naive(data, m_hat):
    """Mean squared residual over observed cells."""
    if data.n_obs == 0:
        raise InputError("no observed entries")
    r = np.where(data.w, data.x_clean - m_hat, 0.0)
    return float(np.vdot(r, r)) / data.n_obs


def _sigma2_co_formula(rss, n_obs, n1, n2, d_sm, tr1, tr2, eta):
    num = rss + n2 * (tr2 - tr1) / eta
    den = n_obs - n1 * d_sm - 2.0 * n2 * tr1 + n2 * tr2
    if not den > 0:
        raise CorrectionInfeasibleError("correction infeasible: denominator %.6g <= 0" % den)
    return num / den


def _upsilon(fm, rate, eta):
    d_s, d_m, d_t = fm.ranks
    d = d_s + d_t + d_m
    lt = np.hstack([fm.lambda_th1, fm.lambda_th2, np.zeros((fm.n1, d_m))])
    lm = np.hstack([fm.lambda_m1, np.zeros((fm.n1, d_t)), fm.lambda_m2])
    if d == 0:
        return np.zeros((0, 0))
    ups_t = rate * (1.0 - rate) * (lt.T @ lt)
    ups_m = eta * rate * (lm.T @ lm)
    total = ups_t + ups_m
    cond = np.linalg.cond(total)
    if not cond <= 1e12:
        raise DegenerateInformationError(
            "degenerate information: correction matrix has condition number %.3g" % cond,
            condition=float(cond))
    return np.linalg.solve(total, ups_m)


def sigma2_corrected(data, fm, eta=1.0):
    """Bias-corrected residual variance for a fitted canonical model.

    With ``U = (U_theta + U_m)^{-1} U_m`` built from the fitted loadings and
    the observation rate ``r``::

        sigma2_co = (RSS + n2 (tr U^2 - tr U) / eta)
                    / (sum w - n1 (d_s + d_m) - 2 n2 tr U + n2 tr U^2)
    """
    if not (eta > 0 and math.isfinite(eta)):
        raise InputError("eta must be positive and finite")
    n1, n2 = data.shape
    m_hat = fm.assemble().m
    rss = sigma2_naive(data, m_hat) * data.n_obs
    ups = _upsilon(fm, data.rate, eta)
    tr1 = float(np.trace(ups))
    tr2 = float(np.trace(ups @ ups))
    d_s, d_m, _ = fm.ranks
    return _sigma2_co_formula(rss, data.n_obs, n1, n2, d_s + d_m, tr1, tr2, eta)


def dispersion_hat(data, m_hat, loss):
    """``sum w (x - b'(m))^2 / b''(m) / sum w`` for an exponential family."""
    if not isinstance(loss, ExpFamily):
        raise InputError("dispersion needs an exponential family loss")
    if data.n_obs == 0:
        raise InputError("no observed entries")
    w = data.w
    mo = m_hat[w]
    v = np.asarray(loss.d2b(mo), dtype=float) * np.ones_like(mo)
    if np.any(~(v > 0)):
        raise NumericalError("b'' must be positive at every observed cell")
    r = data.x[w] - np.asarray(loss.db(mo), dtype=float)
    return float(np.sum(r * r / v)) / data.n_obs


def _log_c(loss, x, phi):
    name = getattr(loss, "name", None)
    if name == "gaussian":
        return -x * x / (2.0 * phi) - 0.5 * math.log(2.0 * math.pi * phi)
    if name == "poisson":
        return -gammaln(x + 1.0)
    return np.zeros_like(x)


def q_value(data, params, loss, scale=None):
    """Negative observed log-likelihood used by the information criterion.

    ``scale`` is the residual variance (regression losses) or the dispersion
    (exponential families); estimated from the fit when omitted.
    """
    theta = params.theta
    w = data.w
    base = float(softplus(theta).sum() - np.vdot(data.w_float, theta))
    if isinstance(loss, ExpFamily):
        phi = dispersion_hat(data, params.m, loss) if scale is None else float(scale)
        if not phi > 0:
            raise InputError("dispersion must be positive, got %r" % phi)
        xo, mo = data.x[w], params.m[w]
        ll = (xo * mo - loss.b(mo)) / phi + _log_c(loss, xo, phi)
        return base - float(np.sum(ll))
    if scale is None:
        # an exact fit has no residual variance; a relative floor keeps Q finite
        # so the penalty decides between exact fits
        floor = 1e-12 * max(1.0, float(np.mean(data.x[w] ** 2)))
        s2 = max(sigma2_naive(data, params.m), floor)
    else:
        s2 = float(scale)
    if not s2 > 0:
        raise InputError("residual variance must be positive, got %r" % s2)
    return base + data.n_obs * (0.5 * math.log(s2) + _HALF_LOG_2PI_E)


def ic_value(data, params, loss, ranks, mu=float("nan"), coef=IC_COEF, scale=None,
             rank_estimate=None):
    n1, n2 = data.shape
    q = q_value(data, params, loss, scale)
    k_f = degrees_of_freedom(ranks, n1, n2)
    return IcRecord(mu=float(mu), q_value=q, k_f=k_f,
                    ic_value=q + coef * math.log(n1 * n2) * k_f,
                    rank_estimate=rank_estimate, coef=coef)


def default_mu_grid(h_init, gamma=1.5, num=15, lo=0.05, hi=1.0):
    """Descending log grid over ``[lo, hi] * sigma_1(h_init) / gamma``."""
    s1 = float(np.linalg.norm(h_init, 2))
    if not s1 > 0:
        return np.array([1.0])
    return np.geomspace(hi, lo, num) * s1 / gamma


def _dropped(mu, status, message="", rank_estimate=None, coef=IC_COEF):
    return IcRecord(mu=float(mu), q_value=float("nan"), k_f=-1, ic_value=float("inf"),
                    rank_estimate=rank_estimate, status=status, message=message, coef=coef)


def select_mu(data, loss=None, grid=None, *, gamma=1.5, k=None, eta=1.0, coef=IC_COEF,
              fit_cfg=None, refine=True, max_refine=10, refine_ratio=1.04,
              screen_tol=1e-4, score_tol=1e-5, patience=30, h_init=None, progress=None):
    """Choose ``mu`` by the information criterion.

    Every ``mu`` is fitted from the same spectral start ``h_init``. The grid is
    walked from the largest value down and abandoned once a fit saturates the
    rank cap or leaves the entrywise box of ``fit_cfg``; with ``refine`` the
    search then bisects (geometrically) between neighbours whose rank triples
    differ, at most ``max_refine`` extra fits. Each distinct rank triple is
    refitted once at known ranks (to ``score_tol``) and scored; ties go to
    the larger ``mu``. The winning refit is then run to ``fit_cfg.tol``.

    Returns ``(mu, records)`` with records sorted by decreasing ``mu``. The
    chosen record's ``fit`` holds the ``(FactorModel, FitReport)`` refit.
    """
    loss = Quadratic() if loss is None else loss
    fit_cfg = FitConfig(eta=eta) if fit_cfg is None else fit_cfg
    n1, n2 = data.shape
    k = default_k(n1, n2) if k is None else int(k)
    if h_init is None:
        h_init = mcp_init(data, loss, k)
    grid = default_mu_grid(h_init, gamma) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InputError("mu grid is empty")
    if np.any(~(grid > 0)):
        raise InputError("mu grid values must be positive")
    grid = np.unique(grid)[::-1]

    screened = {}

    def screen(mu):
        cfg = McpConfig(mu=float(mu), gamma=gamma, k=k, eta=eta, tol=screen_tol,
                        saturation_patience=patience, cap_m=fit_cfg.alpha_m,
                        cap_theta=fit_cfg.alpha_theta)
        try:
            pair, rep = fit_mcp(data, loss, cfg, init=h_init)
        except SfmcError as exc:
            rec = _dropped(mu, "failed", str(exc), coef=coef)
        else:
            if rep.extra.get("stopped"):
                rec = _dropped(mu, rep.extra["stopped"], rep.warnings[-1], coef=coef)
            else:
                try:
                    est = estimate_ranks(pair, cfg.threshold)
                except SfmcError as exc:
                    rec = _dropped(mu, "inconsistent", str(exc), coef=coef)
                else:
                    rec = _dropped(mu, "ok", rank_estimate=est, coef=coef)
                    rec.fit = pair
        screened[float(mu)] = rec
        if progress is not None:
            progress(rec)
        return rec

    stop_at = None
    for mu in grid:
        rec = screen(mu)
        if rec.status in ("saturated", "cap"):
            stop_at = mu
            break

    def key(rec):
        return rec.ranks if rec.status == "ok" else rec.status

    if refine and len(screened) > 1:
        for _ in range(max_refine):
            pts = sorted(screened.values(), key=lambda r: -r.mu)
            gaps = [(a, b) for a, b in zip(pts, pts[1:])
                    if key(a) != key(b) and a.mu / b.mu > refine_ratio]
            if not gaps:
                break
            a, b = min(gaps, key=lambda g: g[1].mu)
            screen(math.sqrt(a.mu * b.mu))

    score_cfg = FitConfig(**{**fit_cfg.__dict__, "tol": max(fit_cfg.tol, score_tol)})
    refits = {}
    for rec in screened.values():
        if rec.status != "ok":
            continue
        ranks = rec.ranks
        if ranks not in refits:
            pair = rec.fit
            init = safe_canonicalize(pair.m, pair.theta, ranks) if sum(ranks) else None
            try:
                refits[ranks] = fit_known_rank(data, ranks, loss, score_cfg, init=init)
            except SfmcError as exc:
                refits[ranks] = exc
        got = refits[ranks]
        if isinstance(got, SfmcError):
            rec.status, rec.message, rec.fit = "failed", str(got), None
            continue
        scored = ic_value(data, got[1].params, loss, ranks, rec.mu, coef, None,
                          rec.rank_estimate)
        rec.q_value, rec.k_f, rec.ic_value = scored.q_value, scored.k_f, scored.ic_value
        rec.fit = got

    records = list(screened.values())
    if stop_at is not None:
        records += [_dropped(mu, "skipped", "below a saturated grid point", coef=coef)
                    for mu in grid if mu < stop_at and float(mu) not in screened]
    records.sort(key=lambda r: -r.mu)
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise MuSelectionError("no usable mu on the grid: %s" % ", ".join(
            "%.4g:%s" % (r.mu, r.status) for r in records), records)
    best = min(r.ic_value for r in ok)
    tol = 1e-12 * max(1.0, abs(best))
    chosen = max((r for r in ok if r.ic_value <= best + tol), key=lambda r: r.mu)
    if score_cfg.tol > fit_cfg.tol and sum(chosen.ranks):
        fm, _ = chosen.fit
        polished = fit_known_rank(data, chosen.ranks, loss, fit_cfg, init=fm)
        for r in ok:
            if r.ranks == chosen.ranks:
                r.fit = polished
    return chosen.mu, records


@dataclass(frozen=True)
class EtaSelection:
    eta_hat: float
    method: str  # InverseVariance | InverseDispersion | NumericAmseMin
    sigma2_hat: Optional[float] = None
    sigma2_co: Optional[float] = None
    phi_hat: Optional[float] = None
    curve: Optional[tuple] = None  # (eta grid, sampled AMSE) for NumericAmseMin


def numeric_amse_eta(data, fm, loss, lo=1e-3, hi=1e3, num=61, rtol=1e-3):
    """Minimize the sampled AMSE of ``M`` over ``eta`` on a log grid, then
    refine with golden-section search between the neighbours of the best
    grid point."""
    curve = AmseCurve(data, fm, loss)

    def f(eta):
        try:
            return curve(eta)
        except DegenerateInformationError:
            return float("inf")

    etas = np.geomspace(lo, hi, num)
    vals = np.array([f(e) for e in etas])
    if not np.isfinite(vals).any():
        raise DegenerateInformationError("AMSE is not finite anywhere on the eta grid")
    i = int(np.argmin(vals))
    eta = float(etas[i])
    if 0 < i < num - 1:
        res = minimize_scalar(f, bracket=(etas[i - 1], etas[i], etas[i + 1]),
                              method="golden", tol=rtol)
        if res.fun <= vals[i]:
            eta = float(res.x)
    return eta, (etas, vals)


def select_eta(data, fm, loss=None, eta=1.0):
    """Weight for the second known-rank fit.

    Quadratic loss: ``1 / sigma2_co``. Exponential families: ``1 / phi_hat``.
    Other losses: numeric minimization of the sampled AMSE.
    ``eta`` is the weight ``fm`` was fitted with.
    """
    loss = Quadratic() if loss is None else loss
    m_hat = fm.assemble().m
    if isinstance(loss, Quadratic):
        s2 = sigma2_naive(data, m_hat)
        s2c = sigma2_corrected(data, fm, eta)
        if not s2c > 0:
            raise NumericalError("corrected variance is not positive: %r" % s2c)
        return EtaSelection(1.0 / s2c, "InverseVariance", sigma2_hat=s2, sigma2_co=s2c)
    if isinstance(loss, ExpFamily):
        phi = dispersion_hat(data, m_hat, loss)
        if not phi > 0:
            raise NumericalError("dispersion estimate is not positive: %r" % phi)
        return EtaSelection(1.0 / phi, "InverseDispersion", phi_hat=phi)
    eta_hat, curve = numeric_amse_eta(data, fm, loss)
    return EtaSelection(eta_hat, "NumericAmseMin", curve=curve)
