"""Command line front end: ``sfmc {fit,ranks,evaluate,simulate}``.

Errors end the run with one line ``error=<Class> cause="..."`` on stderr and
exit code 2 (input), 3 (numerical) or 4 (non-convergence).
"""

import argparse
import contextlib
import json
import os
import sys
import time

import numpy as np

from .errors import InputError, NonConvergenceError, SfmcError
from .losses import FitConfig, loss_from_name

__all__ = ["main", "build_parser", "format_report"]


def _floats(text):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers, got %r" % text)
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated integers, got %r" % text)


def _add_model_args(p):
    p.add_argument("--input", required=True, help="ratings file (user item rating [timestamp])")
    p.add_argument("--delimiter", default=None, help="field separator; sniffed when omitted")
    p.add_argument("--loss", choices=("quadratic", "expfamily", "huber"), default="quadratic")
    p.add_argument("--family", choices=("gaussian", "poisson", "bernoulli"), default="gaussian",
                   help="exponential family for --loss expfamily")
    p.add_argument("--huber-delta", type=float, default=1.345)
    mu = p.add_mutually_exclusive_group()
    mu.add_argument("--mu", type=float, default=None, help="fixed penalty level")
    mu.add_argument("--mu-grid", type=_floats, default=None, help="comma separated mu values")
    p.add_argument("--gamma", type=float, default=1.5)
    p.add_argument("--cap-k", type=int, default=None, help="rank cap of the penalized fit")
    p.add_argument("--alpha-m", type=float, default=20.0)
    p.add_argument("--alpha-theta", type=float, default=20.0)
    p.add_argument("--ic-coef", type=float, default=0.125)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report path (stdout when omitted)")


def build_parser():
    parser = argparse.ArgumentParser(prog="sfmc", description="Shared factor matrix completion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="full pipeline with rank and weight selection")
    _add_model_args(p)
    p.add_argument("--eta", default="auto", help="'auto' or a positive number")
    p.add_argument("--test", default=None, help="held-out ratings for MSPE and rank-bar")
    p.add_argument("--clip", type=_floats, default=None, help="lo,hi clamp for predictions")
    p.add_argument("--std-errors", action="store_true", help="compute per-cell standard errors")
    p.add_argument("--save-m", default=None, help="write the fitted M as CSV")
    p.add_argument("--save-se", default=None, help="write standard errors of M as CSV")

    p = sub.add_parser("ranks", help="rank estimate only")
    _add_model_args(p)

    p = sub.add_parser("evaluate", help="score a prediction matrix on a test file")
    p.add_argument("--pred", required=True, help="dense prediction matrix CSV with header")
    p.add_argument("--test", required=True)
    p.add_argument("--delimiter", default=None)
    p.add_argument("--clip", type=_floats, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("simulate", help="Monte Carlo experiment on the synthetic design")
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--ranks", type=_ints, default=(5, 2, 2), help="d_s,d_m,d_theta")
    p.add_argument("--sigma2", type=float, default=0.5)
    p.add_argument("--mp", type=float, default=1.0)
    p.add_argument("--noise", choices=("normal", "t"), default="normal")
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--methods", default="osh,mcar")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="per-replicate table (tab separated)")
    return parser


def format_report(title, lines, values):
    """Readable lines followed by a ``key=value`` block."""
    out = ["# " + title]
    out += lines
    out.append("[values]")
    for key, val in values.items():
        if isinstance(val, float):
            val = repr(val)
        elif isinstance(val, (tuple, list)):
            val = ",".join(str(v) for v in val)
        out.append("%s=%s" % (key, val))
    return "\n".join(out) + "\n"


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _loss(args):
    return loss_from_name(args.loss, args.huber_delta, args.family)


def _load(args):
    from .evaluation import load_triplets
    trip = load_triplets(args.input, args.delimiter)
    data = trip.to_masked()
    if data.n_obs == 0:
        raise InputError("input %s has no ratings" % args.input)
    return trip, data


def _fit_cfg(args, eta=1.0):
    return FitConfig(eta=eta, alpha_m=args.alpha_m, alpha_theta=args.alpha_theta)


def _grid(args):
    if args.mu is not None:
        return [args.mu]
    return args.mu_grid


def _cmd_fit(args):
    from .evaluation import load_triplets, mspe, percentile_rank_bar, predict_clipped, save_matrix
    from .pipeline import fit_pipeline
    _, data = _load(args)
    loss = _loss(args)
    t0 = time.perf_counter()
    res = fit_pipeline(data, loss, eta=args.eta, grid=_grid(args), gamma=args.gamma,
                       k=args.cap_k, coef=args.ic_coef, fit_cfg=_fit_cfg(args),
                       inference=args.std_errors, refine=args.mu is None)
    elapsed = time.perf_counter() - t0
    d_s, d_m, d_t = res.ranks
    values = {"command": "fit", "n1": data.n1, "n2": data.n2, "n_obs": data.n_obs,
              "loss": args.loss, "mu": res.mu, "gamma": res.gamma, "eta": res.eta,
              "d_s": d_s, "d_m": d_m, "d_theta": d_t,
              "objective_start": res.objective_trace[0], "objective_final": res.objective,
              "n_iter": res.n_iter, "converged": res.converged}
    if res.sigma2 is not None:
        values["sigma2_co"] = res.sigma2
    if res.sigma2_naive is not None:
        values["sigma2_naive"] = res.sigma2_naive
    if res.phi is not None:
        values["phi"] = res.phi
    if res.eta_selection is not None:
        values["eta_method"] = res.eta_selection.method
    values["mu_points"] = sum(1 for r in res.ic_records if r.status != "skipped")
    m_hat = res.params.m
    if args.test:
        test = load_triplets(args.test, args.delimiter)
        pred = predict_clipped(m_hat, *args.clip) if args.clip else m_hat
        values["mspe"] = mspe(test, pred)
        values["rank_bar"] = percentile_rank_bar(test, pred)
    if res.std_err_m is not None:
        values["std_err_m_median"] = float(np.median(res.std_err_m))
    values["wall_time"] = elapsed
    lines = ["selected mu %.6g with ranks (d_s, d_m, d_theta) = (%d, %d, %d)" % (res.mu, d_s, d_m, d_t),
             "weight eta = %.6g" % res.eta]
    for rec in res.ic_records:
        if rec.status == "ok":
            lines.append("  mu=%-12.6g ranks=%s IC=%.6f" % (rec.mu, rec.ranks, rec.ic_value))
        elif rec.status != "skipped":
            lines.append("  mu=%-12.6g %s" % (rec.mu, rec.status))
    lines += ["warning: " + w for w in res.warnings]
    _emit(format_report("sfmc fit", lines, values), args.out)
    if args.save_m:
        save_matrix(m_hat, args.save_m)
    if args.save_se and res.std_err_m is not None:
        save_matrix(res.std_err_m, args.save_se)
    if not res.converged:
        raise NonConvergenceError("final known-rank fit did not converge in %d sweeps" % res.n_iter)
    return 0


def _cmd_ranks(args):
    from .tuning import select_mu
    _, data = _load(args)
    loss = _loss(args)
    mu, records = select_mu(data, loss, _grid(args), gamma=args.gamma, k=args.cap_k,
                            coef=args.ic_coef, fit_cfg=_fit_cfg(args), refine=args.mu is None)
    rec = next(r for r in records if r.mu == mu and r.status == "ok")
    est = rec.rank_estimate
    values = {"command": "ranks", "mu": mu, "gamma": args.gamma, "threshold": est.threshold,
              "d_hat": est.d_hat, "d_s": est.d_s, "d_m": est.d_m, "d_theta": est.d_theta,
              "ic": rec.ic_value}
    lines = ["mu %.6g: d_hat=%d, counts (M, Theta) = %s" % (mu, est.d_hat, est.counts)]
    _emit(format_report("sfmc ranks", lines, values), args.out)
    return 0


def _read_matrix(path):
    try:
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError("cannot read matrix %s: %s" % (path, exc)) from None
    return a


def _cmd_evaluate(args):
    from .evaluation import load_triplets, mspe, percentile_rank_bar, predict_clipped
    pred = _read_matrix(args.pred)
    if args.clip:
        pred = predict_clipped(pred, *args.clip)
    test = load_triplets(args.test, args.delimiter)
    values = {"command": "evaluate", "n_test": len(test), "mspe": mspe(test, pred),
              "rank_bar": percentile_rank_bar(test, pred)}
    lines = ["MSPE %.6g, rank-bar %.6g over %d test ratings"
             % (values["mspe"], values["rank_bar"], len(test))]
    _emit(format_report("sfmc evaluate", lines, values), args.out)
    return 0


def _cmd_simulate(args):
    from .simulation import SimDesign, run_experiment, summarize
    if len(args.ranks) != 3:
        raise InputError("--ranks needs three integers d_s,d_m,d_theta")
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    design = SimDesign(n=args.n, ranks=args.ranks, m_p=args.mp, sigma2=args.sigma2,
                       noise=args.noise, replicates=args.replicates, seed=args.seed)
    rows = run_experiment(design, methods, baseline="mcar" if "mcar" in methods else None)
    cols = ("replicate", "method", "mse_m", "mse_theta", "ratio1", "ranks", "eta", "wall_time")
    table = ["\t".join(cols)]
    for r in rows:
        table.append("\t".join("" if getattr(r, c) is None else
                               (",".join(map(str, r.ranks)) if c == "ranks" else str(getattr(r, c)))
                               for c in cols))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(table) + "\n")
    summary = summarize(rows)
    values = {"command": "simulate", "n": args.n, "ranks": args.ranks, "sigma2": args.sigma2,
              "replicates": args.replicates}
    for name, stats in summary.items():
        for key, val in stats.items():
            values["%s.%s" % (name, key)] = val
    lines = ["%s: %s" % (name, json.dumps(stats, sort_keys=True)) for name, stats in summary.items()]
    if not args.out:
        lines += table
    sys.stdout.write(format_report("sfmc simulate", lines, values))
    return 0


_COMMANDS = {"fit": _cmd_fit, "ranks": _cmd_ranks, "evaluate": _cmd_evaluate,
             "simulate": _cmd_simulate}


def _thread_limit():
    raw = os.environ.get("SFMC_THREADS", "").strip()
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise InputError("SFMC_THREADS must be a positive integer, got %r" % raw) from None
    if n < 1:
        raise InputError("SFMC_THREADS must be a positive integer, got %r" % raw)
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _error_line(exc):
    cause = str(exc).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
    return 'error=%s cause="%s"' % (type(exc).__name__, cause)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return _COMMANDS[args.command](args)
    except SfmcError as exc:
        sys.stderr.write(_error_line(exc) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(_error_line(InputError(str(exc))) + "\n")
        return InputError.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
