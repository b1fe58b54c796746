"""Acceptance criteria 1 to 10. Each test carries ``criterion(k)``; the
terminal summary prints one PASS/FAIL line per criterion.

The expensive Monte Carlo runs live in module-scoped fixtures so a criterion
with two checks pays for its simulation once.
"""

import os
import time
import warnings

import numpy as np
import pytest
from scipy.stats import norm

from sfmc.evaluation import (load_triplets, mspe, percentile_rank_bar, predict_clipped,
                             row_space_similarity)
from sfmc.losses import ExpFamily, Huber, Quadratic, gradient, objective
from sfmc.mcp import firm_threshold_shrink, mcp_scalar
from sfmc.model import (FactorModel, IdentificationWarning, MaskedData, ParamPair, assemble,
                        canonicalize, check_sigma_lower_bound)
from sfmc.pipeline import fit_known_pipeline, fit_pipeline
from sfmc.simulation import SimDesign, generate, mse, run_experiment

from conftest import random_model
from test_model import assert_canonical

criterion = pytest.mark.criterion


# -- 1: prox oracle ----------------------------------------------------------

def _grid_prox(sigma, step, mu, gamma, res=1e-4):
    y = np.arange(0.0, sigma + 2 * res, res)
    f = 0.5 * (sigma - y) ** 2 / step + mcp_scalar(y, mu, gamma)
    return y[np.argmin(f)]


@criterion(1)
def test_prox_matches_grid_minimizer():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        step = rng.uniform(0.05, 1.0)
        gamma = step + rng.uniform(0.05, 3.0)
        mu = rng.uniform(0.05, 2.0)
        sigma = rng.uniform(0.0, 1.5 * gamma * mu + 0.5)
        got = firm_threshold_shrink(sigma, step, mu, gamma)
        worst = max(worst, abs(got - _grid_prox(sigma, step, mu, gamma)))
    assert worst <= 1e-4
    assert time.perf_counter() - t0 < 10.0


# -- 2: gradient against finite differences ----------------------------------

def _fd_gradient(data, p, loss, eta, h=1e-5):
    gm = np.zeros(p.shape)
    gt = np.zeros(p.shape)
    for out, which in ((gm, "m"), (gt, "theta")):
        for idx in np.ndindex(p.shape):
            vals = []
            for sgn in (1.0, -1.0):
                m, t = p.m.copy(), p.theta.copy()
                (m if which == "m" else t)[idx] += sgn * h
                vals.append(objective(data, ParamPair(m, t), loss, eta))
            out[idx] = (vals[0] - vals[1]) / (2 * h)
    return gm, gt


def _instance(rng, loss):
    m = rng.normal(scale=1.5, size=(8, 6))
    theta = rng.normal(scale=2.0, size=(8, 6))
    w = rng.random((8, 6)) < 0.6
    if isinstance(loss, ExpFamily):
        m = 0.5 * m
        x = rng.poisson(np.exp(m)).astype(float)
    else:
        x = m + rng.normal(scale=2.0, size=m.shape)
    x[~w] = np.nan
    return MaskedData(x, w), ParamPair(m, theta), rng.uniform(0.3, 3.0)


@criterion(2)
@pytest.mark.parametrize("loss", [Quadratic(), Huber(1.0), ExpFamily.poisson()],
                         ids=["quadratic", "huber", "expfamily"])
def test_gradient_matches_finite_differences(loss):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    for _ in range(100):
        data, p, eta = _instance(rng, loss)
        gm, gt = gradient(data, p, loss, eta)
        fm_, ft = _fd_gradient(data, p, loss, eta)
        g = np.concatenate([gm.ravel(), gt.ravel()])
        fd = np.concatenate([fm_.ravel(), ft.ravel()])
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)
    assert time.perf_counter() - t0 < 30.0


# -- 3: identification constraints -------------------------------------------

@criterion(3)
def test_canonical_invariants_and_round_trip():
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    done = 0
    while done < 100:
        n1, n2 = (int(v) for v in rng.integers(10, 41, size=2))
        ranks = tuple(int(r) for r in rng.integers(0, 4, size=3))
        if sum(ranks) == 0:
            continue
        g = rng.normal
        raw = FactorModel(g(size=(n1, ranks[0])), g(size=(n1, ranks[1])),
                          g(size=(n1, ranks[0])), g(size=(n1, ranks[2])),
                          g(size=(n2, ranks[0])), g(size=(n2, ranks[1])),
                          g(size=(n2, ranks[2])))
        p = assemble(raw)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IdentificationWarning)
            out = canonicalize(p.m, p.theta, ranks)
        assert out.ranks == ranks
        assert_canonical(out)
        q = assemble(out)
        assert np.linalg.norm(q.h - p.h) <= 1e-8 * np.linalg.norm(p.h)
        done += 1
    assert time.perf_counter() - t0 < 30.0


# -- 4: singular value lower bound --------------------------------------------

@criterion(4)
def test_sigma_lower_bound_random_instances():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    done = 0
    while done < 1000:
        n1, n2 = (int(v) for v in rng.integers(10, 61, size=2))
        ranks = tuple(int(r) for r in rng.integers(0, 4, size=3))
        if sum(ranks) == 0:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IdentificationWarning)
            chk = check_sigma_lower_bound(random_model(rng, n1, n2, ranks,
                                                       scale=rng.uniform(0.1, 3.0)))
        assert chk.xi < 1 and chk.holds, (n1, n2, ranks, chk)
        done += 1
    assert time.perf_counter() - t0 < 60.0


# -- 5 and 7 (first half): full pipeline at n = 300, sigma^2 = 0.5 -----------

@pytest.fixture(scope="module")
def desk300():
    design = SimDesign(n=300, sigma2=0.5, m_p=1.0, ranks=(5, 2, 2))
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(20):
            data, truth, _ = generate(design, rep)
            out.append((truth.ranks, fit_pipeline(data)))
    return out


@pytest.mark.slow
@criterion(5)
def test_rank_recovery_n300(desk300):
    hits = sum(res.ranks == ranks for ranks, res in desk300)
    assert hits >= 18, [res.ranks for _, res in desk300]


@pytest.mark.slow
@criterion(7)
def test_eta_reciprocal_rule_sigma_half(desk300):
    etas = [res.eta for _, res in desk300]
    assert all(1.6 <= e <= 2.4 for e in etas), etas


# -- 6: MSE anchor --------------------------------------------------------------

@pytest.fixture(scope="module")
def desk500():
    return run_experiment(SimDesign(n=500, sigma2=0.5, m_p=1.0, ranks=(5, 2, 2), replicates=10),
                          methods=("osh", "osh_known", "mcar"))


@pytest.mark.slow
@criterion(6)
def test_mse_anchor_n500(desk500):
    osh = [r for r in desk500 if r.method == "osh"]
    assert len(osh) == 10 and all(r.error is None for r in osh)
    mean = float(np.mean([r.mse_m for r in osh]))
    assert 0.036 <= mean <= 0.060, mean
    assert sum(r.ratio1 > 0 for r in osh) >= 9, [r.ratio1 for r in osh]


@pytest.mark.slow
@criterion(6)
def test_ratio_smoke_n250():
    rows = run_experiment(SimDesign(n=250, sigma2=0.5, m_p=1.0, ranks=(5, 2, 2), replicates=10),
                          methods=("osh", "mcar"))
    osh = [r for r in rows if r.method == "osh"]
    assert sum(r.ratio1 > 0 for r in osh) >= 8, [r.ratio1 for r in osh]


@pytest.mark.slow
def test_table_values_n500(desk500):
    # [PAPER] known-rank MSE 0.048, MCAR baseline 0.053, mean Ratio1 0.088 at n = 500
    by = {name: [r for r in desk500 if r.method == name] for name in ("osh_known", "mcar", "osh")}
    assert np.mean([r.mse_m for r in by["osh_known"]]) == pytest.approx(0.048, rel=0.25)
    assert np.mean([r.mse_m for r in by["mcar"]]) == pytest.approx(0.053, rel=0.25)
    assert np.mean([r.ratio1 for r in by["osh"]]) == pytest.approx(0.088, abs=0.03)


# -- 7 (second half): reweighting is inert at unit noise variance ---------------

@pytest.mark.slow
@criterion(7)
def test_osh_equals_sh_at_unit_variance():
    design = SimDesign(n=300, sigma2=1.0, m_p=1.0, ranks=(5, 2, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(3):
            data, _, truth = generate(design, rep)
            res = fit_pipeline(data)
            # the unit-weight fit at the selected mu is the SH estimate
            rec = next(r for r in res.ic_records if r.mu == res.mu and r.status == "ok")
            sh = mse(rec.fit[0].assemble().m, truth.m)
            osh = mse(res.params.m, truth.m)
            assert abs(osh - sh) <= 0.01 * sh, (rep, res.eta, osh, sh)


# -- 8: variance bias correction --------------------------------------------------

@pytest.mark.slow
@criterion(8)
def test_corrected_variance_less_biased():
    design = SimDesign(n=300, sigma2=1.0, m_p=1.0, ranks=(5, 2, 2))
    co, naive = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(50):
            data, truth, _ = generate(design, rep)
            res = fit_known_pipeline(data, truth.ranks, eta=1.0)
            co.append(res.sigma2)
            naive.append(res.sigma2_naive)
    assert abs(np.mean(co) - 1.0) < abs(np.mean(naive) - 1.0), (np.mean(co), np.mean(naive))


# -- 9: interval coverage -----------------------------------------------------------

@pytest.mark.slow
@criterion(9)
def test_entry_interval_coverage():
    n = 200
    design = SimDesign(n=n, ranks=(1, 0, 0), sigma2=1.0, seed=7)
    cells = [(k * 19 % n, k * 37 % n) for k in range(1, 11)]
    rows, cols = np.array(cells).T
    z = norm.ppf(0.975)
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for rep in range(200):
            data, _, truth = generate(design, rep)
            res = fit_known_pipeline(data, (1, 0, 0), inference=True)
            err = np.abs(res.params.m[rows, cols] - truth.m[rows, cols])
            hits += int(np.sum(err <= z * res.std_err_m[rows, cols]))
    coverage = hits / (200 * len(cells))
    assert 0.90 <= coverage <= 0.98, coverage


# -- 10: MovieLens 100k split 1 --------------------------------------------------

_ML_DIR = os.environ.get("SFMC_MOVIELENS_DIR", "")


@pytest.mark.slow
@criterion(10)
@pytest.mark.skipif(not (os.path.isfile(os.path.join(_ML_DIR, "u1.base"))
                         and os.path.isfile(os.path.join(_ML_DIR, "u1.test"))),
                    reason="set SFMC_MOVIELENS_DIR to a directory holding u1.base and u1.test")
def test_movielens_split1():
    train = load_triplets(os.path.join(_ML_DIR, "u1.base"))
    test = load_triplets(os.path.join(_ML_DIR, "u1.test"))
    data = train.to_masked(shape=(943, 1682))
    assert data.shape == (943, 1682) and data.n_obs == 80000
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = fit_pipeline(data)
    assert res.ranks == (6, 0, 0)
    pred = predict_clipped(res.params.m)
    assert mspe(test, pred) == pytest.approx(0.8906, abs=0.03)
    assert percentile_rank_bar(test, pred) == pytest.approx(0.4476, abs=0.005)
    sim = row_space_similarity(res.params.m, res.params.theta, 6, 6, 6)
    assert sim == pytest.approx(0.788, abs=0.02)
