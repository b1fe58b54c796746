"""Synthetic designs, comparators and the Monte Carlo harness.

Each replicate draws its own stream from ``SeedSequence(seed, spawn_key=(rep,))``
so methods compared on the same replicate see identical data.
"""

from dataclasses import dataclass, field
import math
import time
import warnings

import numpy as np

from .errors import DegenerateDesignError, InputError, SfmcError
from .model import FactorModel, MaskedData, assemble

__all__ = ["SimDesign", "MetricsRow", "generate", "replicate_rng", "mse",
           "ratio1", "run_experiment", "summarize"]


@dataclass(frozen=True)
class SimDesign:
    """Simulation design with ``n1 = n2 = n``.

    ``ranks`` is ``(d_s, d_m, d_theta)``. ``noise`` is ``"normal"`` or ``"t"``
    (Student t with ``df`` degrees of freedom rescaled to variance ``sigma2``).
    """

    n: int = 500
    ranks: tuple = (5, 2, 2)
    m_p: float = 1.0
    sigma2: float = 0.5
    noise: str = "normal"
    df: float = 5.0
    replicates: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise InputError("n must be at least 2")
        if len(self.ranks) != 3 or min(self.ranks) < 0:
            raise InputError("ranks must be three nonnegative integers")
        if self.sigma2 < 0:
            raise InputError("sigma2 must be nonnegative")
        if self.noise not in ("normal", "t"):
            raise InputError("unknown noise family %r" % self.noise)
        if self.noise == "t" and not self.df > 2:
            raise InputError("t noise needs df > 2 for a finite variance")


def replicate_rng(seed, rep):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(rep),)))


def _random_block(rng, n, cols, divisor, name):
    if cols == 0:
        return np.zeros((n, 0))
    if divisor <= 0:
        raise DegenerateDesignError("degenerate design: block %s has %d random columns "
                                    "but variance divisor %d" % (name, cols, divisor))
    return rng.normal(0.0, math.sqrt(1.0 / divisor), size=(n, cols))


def generate(design, rep=0, rng=None):
    """Draw one replicate.

    Returns
    -------
    (MaskedData, FactorModel, ParamPair)
        Data, true factor blocks and true parameter matrices. Unobserved
        cells of ``x`` hold NaN.
    """
    d_s, d_m, d_t = (int(r) for r in design.ranks)
    if d_s < 1:
        raise DegenerateDesignError("degenerate design: d_s must be at least 1 "
                                    "(the first shared column is the intercept)")
    n = design.n
    rng = replicate_rng(design.seed, rep) if rng is None else rng
    div_m = d_s + d_m - 1
    div_t = d_s + d_t - 1
    l_m2 = _random_block(rng, n, d_m, div_m, "lambda_m2")
    l_m1 = np.hstack([np.ones((n, 1)), _random_block(rng, n, d_s - 1, div_m, "lambda_m1")])
    l_t2 = _random_block(rng, n, d_t, div_t, "lambda_th2")
    l_t1 = np.hstack([-design.m_p * np.ones((n, 1)),
                      _random_block(rng, n, d_s - 1, div_t, "lambda_th1")])
    f_m = rng.standard_normal((n, d_m))
    f_t = rng.standard_normal((n, d_t))
    f_s = np.hstack([np.ones((n, 1)), rng.standard_normal((n, d_s - 1))])
    truth = FactorModel(l_m1, l_m2, l_t1, l_t2, f_s, f_m, f_t)
    p = assemble(truth)
    w = rng.random((n, n)) < 1.0 / (1.0 + np.exp(-p.theta))
    if design.noise == "normal":
        eps = rng.normal(0.0, math.sqrt(design.sigma2), size=(n, n))
    else:
        scale = math.sqrt(design.sigma2 * (design.df - 2.0) / design.df)
        eps = scale * rng.standard_t(design.df, size=(n, n))
    x = np.where(w, p.m + eps, np.nan)
    return MaskedData(x, w), truth, p


def mse(a, b):
    a = np.asarray(a, dtype=float)
    return float(np.mean((a - np.asarray(b, dtype=float)) ** 2))


def ratio1(mse_method, mse_baseline):
    """``1 - MSE(method) / MSE(baseline)``; 1 for a perfect method."""
    if mse_baseline == 0:
        return 0.0 if mse_method == 0 else -math.inf
    return 1.0 - mse_method / mse_baseline


@dataclass
class MetricsRow:
    replicate: int
    method: str
    mse_m: float
    mse_theta: float = float("nan")
    ratio1: float = float("nan")
    ranks: tuple = None
    rank_correct: bool = None
    wall_time: float = 0.0
    eta: float = float("nan")
    sigma2_naive: float = float("nan")
    sigma2_co: float = float("nan")
    error: str = None
    extra: dict = field(default_factory=dict)


def _method_truth(data, truth_fm, truth_p, design, loss=None):
    return {"m": truth_p.m, "theta": truth_p.theta, "ranks": truth_fm.ranks}


def _method_mcar(data, truth_fm, truth_p, design, loss=None):
    from .oracle import baseline_mcar_fit
    d_s, d_m, _ = truth_fm.ranks
    m_hat, rep = baseline_mcar_fit(data, d_s + d_m, loss)
    return {"m": m_hat}


def _pipeline_method(eta_mode):
    def run(data, truth_fm, truth_p, design, loss=None, **kw):
        from .pipeline import fit_pipeline
        res = fit_pipeline(data, loss=loss, eta=eta_mode, **kw)
        out = {"m": res.params.m, "theta": res.params.theta, "ranks": res.ranks,
               "eta": res.eta, "report": res}
        if res.sigma2_naive is not None:
            out["sigma2_naive"] = res.sigma2_naive
        if res.sigma2 is not None:
            out["sigma2_co"] = res.sigma2
        return out
    return run


def _oracle_method(eta_mode):
    def run(data, truth_fm, truth_p, design, loss=None, **kw):
        from .pipeline import fit_known_pipeline
        res = fit_known_pipeline(data, truth_fm.ranks, loss=loss, eta=eta_mode)
        return {"m": res.params.m, "theta": res.params.theta, "ranks": res.ranks,
                "eta": res.eta, "sigma2_naive": res.sigma2_naive,
                "sigma2_co": res.sigma2, "report": res}
    return run


METHODS = {
    "truth": _method_truth,
    "mcar": _method_mcar,
    "osh": _pipeline_method("auto"),
    "sh": _pipeline_method(1.0),
    "osh_known": _oracle_method("auto"),
    "sh_known": _oracle_method(1.0),
}


def run_experiment(design, methods=("osh", "mcar"), baseline="mcar", loss=None,
                   method_kwargs=None, progress=None):
    """Run every method on every replicate of ``design``.

    Returns a list of :class:`MetricsRow`. Failing fits are recorded with the
    error text; more than half failing for any method raises
    :class:`SfmcError`.
    """
    method_kwargs = method_kwargs or {}
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InputError("unknown methods %s; choose from %s" % (unknown, sorted(METHODS)))
    rows = []
    for rep in range(design.replicates):
        data, truth_fm, truth_p = generate(design, rep)
        rep_rows = {}
        for name in methods:
            t0 = time.perf_counter()
            row = MetricsRow(replicate=rep, method=name, mse_m=float("nan"))
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    kw = dict(method_kwargs.get(name, {}))
                    out = METHODS[name](data, truth_fm, truth_p, design, loss=loss, **kw)
            except SfmcError as exc:
                row.error = "%s: %s" % (type(exc).__name__, exc)
            else:
                row.mse_m = mse(out["m"], truth_p.m)
                if "theta" in out:
                    row.mse_theta = mse(out["theta"], truth_p.theta)
                if out.get("ranks") is not None:
                    row.ranks = tuple(int(r) for r in out["ranks"])
                    row.rank_correct = row.ranks == tuple(truth_fm.ranks)
                row.eta = float(out.get("eta", float("nan")) or float("nan"))
                row.sigma2_naive = float(out.get("sigma2_naive", float("nan")))
                row.sigma2_co = float(out.get("sigma2_co", float("nan")))
            row.wall_time = time.perf_counter() - t0
            rep_rows[name] = row
            rows.append(row)
            if progress is not None:
                progress(row)
        if baseline in rep_rows and rep_rows[baseline].error is None:
            base = rep_rows[baseline].mse_m
            for row in rep_rows.values():
                if row.error is None:
                    row.ratio1 = ratio1(row.mse_m, base)
    for name in methods:
        failed = sum(1 for r in rows if r.method == name and r.error is not None)
        if failed * 2 > design.replicates:
            raise SfmcError("method %s failed on %d of %d replicates" % (name, failed, design.replicates))
    return rows


def summarize(rows):
    """Mean and standard deviation per method for the numeric metrics."""
    out = {}
    for name in dict.fromkeys(r.method for r in rows):
        sel = [r for r in rows if r.method == name and r.error is None]
        summary = {"replicates": len(sel),
                   "failures": sum(1 for r in rows if r.method == name and r.error is not None)}
        for key in ("mse_m", "mse_theta", "ratio1", "eta", "wall_time"):
            vals = np.array([getattr(r, key) for r in sel], dtype=float)
            vals = vals[np.isfinite(vals)]
            if vals.size:
                summary[key + "_mean"] = float(vals.mean())
                summary[key + "_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        flags = [r.rank_correct for r in sel if r.rank_correct is not None]
        if flags:
            summary["rank_rate"] = float(np.mean(flags))
        out[name] = summary
    return out
