"""End-to-end estimation: mu search, rank estimate, known-rank refit, weight
selection and the reweighted refit."""

import math

from .errors import InputError
from .inference import build_weights, standard_errors, variance_matrices
from .losses import FitConfig, Huber, Quadratic
from .oracle import fit_known_rank
from .tuning import IC_COEF, select_eta, select_mu, sigma2_corrected, sigma2_naive

__all__ = ["fit_pipeline", "fit_known_pipeline"]


def _parse_eta(eta):
    if isinstance(eta, str):
        if eta == "auto":
            return "auto"
        try:
            eta = float(eta)
        except ValueError:
            raise InputError("eta must be 'auto' or a positive number, got %r" % eta) from None
    if not (eta > 0 and math.isfinite(eta)):
        raise InputError("eta must be positive and finite, got %r" % eta)
    return float(eta)


def _second_stage(data, loss, fm1, rep1, eta, fit_cfg, inference):
    """Pick eta, refit when it differs from the first-stage weight, report."""
    eta = _parse_eta(eta)
    base_eta = fit_cfg.eta
    selection = None
    if eta == "auto":
        selection = select_eta(data, fm1, loss, base_eta)
        eta = selection.eta_hat
    if math.isclose(eta, base_eta, rel_tol=1e-12):
        fm, rep = fm1, rep1
    else:
        cfg = FitConfig(**{**fit_cfg.__dict__, "eta": eta})
        fm, rep = fit_known_rank(data, fm1.ranks, loss, cfg, init=fm1)
    method = "osh" if selection is not None else "sh"
    out = rep.with_updates(method=method, eta=eta, eta_selection=selection)
    if isinstance(loss, Quadratic):
        out.sigma2_naive = sigma2_naive(data, fm.assemble().m)
        if selection is not None:
            out.sigma2 = selection.sigma2_co
        else:
            out.sigma2 = sigma2_corrected(data, fm, eta)
    elif selection is not None and selection.phi_hat is not None:
        out.phi = selection.phi_hat
    out.extra["first_stage_objective"] = rep1.objective
    if inference:
        if isinstance(loss, Huber):
            out.warnings.append("standard errors are not available for the huber loss")
        else:
            weights = build_weights(data, fm, loss, eta)
            v_m, v_t = variance_matrices(weights, fm)
            out.std_err_m = standard_errors(v_m, *data.shape)
            out.std_err_theta = standard_errors(v_t, *data.shape)
    return out


def fit_known_pipeline(data, ranks, loss=None, eta="auto", fit_cfg=None, inference=False):
    """Known-rank estimate with ``eta = 1`` followed by the weight step.

    ``eta="auto"`` selects the weight from the first fit and refits (the
    reweighted estimator); a number fixes it.
    """
    loss = Quadratic() if loss is None else loss
    fit_cfg = FitConfig() if fit_cfg is None else fit_cfg
    ranks = tuple(int(r) for r in ranks)
    fm1, rep1 = fit_known_rank(data, ranks, loss, fit_cfg)
    return _second_stage(data, loss, fm1, rep1, eta, fit_cfg, inference)


def fit_pipeline(data, loss=None, eta="auto", mu=None, grid=None, gamma=1.5, k=None,
                 coef=IC_COEF, fit_cfg=None, inference=False, progress=None, **search):
    """Full estimator with unknown ranks.

    ``mu`` fixes the penalty level (a one-point grid); otherwise ``grid`` or the
    default grid is searched by the information criterion. Extra keyword
    arguments go to :func:`select_mu`.

    Returns a :class:`FitReport` with ranks, estimates, the selected ``mu``,
    ``eta`` and, for the quadratic loss, both residual variance estimates.
    """
    loss = Quadratic() if loss is None else loss
    fit_cfg = FitConfig() if fit_cfg is None else fit_cfg
    if mu is not None:
        grid = [float(mu)]
        search.setdefault("refine", False)
    chosen, records = select_mu(data, loss, grid, gamma=gamma, k=k, eta=fit_cfg.eta,
                                coef=coef, fit_cfg=fit_cfg, progress=progress, **search)
    rec = next(r for r in records if r.mu == chosen and r.status == "ok")
    fm1, rep1 = rec.fit
    out = _second_stage(data, loss, fm1, rep1, eta, fit_cfg, inference)
    out.mu = chosen
    out.gamma = gamma
    out.k = k
    out.ic_records = records
    out.rank_estimate = rec.rank_estimate
    return out
