import numpy as np
import pytest

from sfmc.errors import DegenerateDesignError, InputError
from sfmc.simulation import SimDesign, generate, mse, ratio1, run_experiment, summarize


def test_observation_rate_mp1():
    # [PAPER] observation rate near 30% at m_p = 1
    data, _, _ = generate(SimDesign(n=500, m_p=1.0), 0)
    assert data.rate == pytest.approx(0.30, abs=0.02)


def test_observation_rate_mp2():
    # [PAPER] observation rate near 15% at m_p = 2
    data, _, _ = generate(SimDesign(n=500, m_p=2.0), 0)
    assert data.rate == pytest.approx(0.15, abs=0.02)


def test_entry_moments():
    # [PAPER] entries of M have variance 1 and mean 1
    _, _, p = generate(SimDesign(n=1000), 0)
    assert p.m.mean() == pytest.approx(1.0, abs=0.05)
    assert p.m.var() == pytest.approx(1.0, abs=0.05)


def test_replicates_are_reproducible_and_distinct():
    d = SimDesign(n=30, seed=4)
    a, _, _ = generate(d, 2)
    b, _, _ = generate(d, 2)
    c, _, _ = generate(d, 3)
    np.testing.assert_array_equal(a.w, b.w)
    assert not np.array_equal(a.w, c.w)


def test_t_noise_variance():
    data, _, p = generate(SimDesign(n=400, noise="t", df=5.0, sigma2=0.5), 0)
    r = (data.x - p.m)[data.w]
    assert r.var() == pytest.approx(0.5, rel=0.1)


def test_degenerate_designs():
    with pytest.raises(DegenerateDesignError):
        generate(SimDesign(n=10, ranks=(0, 1, 1)), 0)
    # the zero divisor only matters for blocks that have random columns
    _, truth, _ = generate(SimDesign(n=10, ranks=(1, 0, 1)), 0)
    assert truth.ranks == (1, 0, 1)
    with pytest.raises(InputError):
        SimDesign(noise="cauchy")


def test_ratio1_and_mse():
    assert mse(np.ones(4), np.zeros(4)) == 1.0
    assert ratio1(0.5, 1.0) == 0.5
    assert ratio1(0.0, 0.0) == 0.0


def test_truth_method_is_perfect():
    rows = run_experiment(SimDesign(n=30, replicates=2), methods=("truth", "mcar"))
    truth = [r for r in rows if r.method == "truth"]
    assert all(r.mse_m == 0.0 and r.ratio1 == 1.0 and r.rank_correct for r in truth)
    s = summarize(rows)
    assert s["truth"]["mse_m_mean"] == 0.0 and s["mcar"]["replicates"] == 2


def test_known_rank_methods_run():
    rows = run_experiment(SimDesign(n=40, replicates=1), methods=("osh_known", "sh_known", "mcar"))
    by = {r.method: r for r in rows}
    assert by["sh_known"].eta == 1.0
    assert by["osh_known"].eta != 1.0
    assert np.isfinite(by["osh_known"].sigma2_co)


def test_unknown_method():
    with pytest.raises(InputError):
        run_experiment(SimDesign(n=10, replicates=1), methods=("nope",))
