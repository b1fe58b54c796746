import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sfmc import kernels
from sfmc._kernels_py import softplus
from sfmc.errors import InputError, NonFiniteError
from sfmc.losses import (ExpFamily, FitConfig, Huber, Quadratic, gradient, loss_from_name,
                         objective, second_derivative_diag)
from sfmc.model import MaskedData, ParamPair

LOG2 = math.log(2.0)


def one(x, w, m, theta):
    return MaskedData(np.array([[x]]), np.array([[w]])), ParamPair(np.array([[m]]), np.array([[theta]]))


def test_objective_unobserved_cell():
    d, p = one(np.nan, 0, 5.0, 0.0)
    assert objective(d, p, Quadratic(), 1.0) == pytest.approx(0.693147, abs=1e-6)


def test_objective_zero_residual():
    d, p = one(1.0, 1, 1.0, 0.0)
    assert objective(d, p, Quadratic(), 1.0) == pytest.approx(LOG2, abs=1e-12)


def test_objective_unit_residual():
    d, p = one(2.0, 1, 1.0, 0.0)
    assert objective(d, p, Quadratic(), 1.0) == pytest.approx(1.193147, abs=1e-6)


def test_gradient_examples():
    d, p = one(np.nan, 0, 0.3, 0.7)
    gm, gt = gradient(d, p, Quadratic(), 1.0)
    assert gm[0, 0] == 0.0
    assert gt[0, 0] == pytest.approx(1.0 / (1.0 + math.exp(-0.7)))
    d, p = one(1.0, 1, 0.0, 0.0)
    assert gradient(d, p, Quadratic(), 1.0)[1][0, 0] == pytest.approx(-0.5)


def test_second_derivative_examples():
    d, p = one(1.0, 1, 0.0, 0.0)
    hm, ht = second_derivative_diag(d, p, Quadratic(), 2.0)
    assert hm[0, 0] == 2.0 and ht[0, 0] == 0.25
    d, p = one(4.0, 1, 1.0, 0.0)
    assert second_derivative_diag(d, p, Huber(1.0), 1.0)[0][0, 0] == 0.0


def test_extreme_logits_are_finite():
    d = MaskedData(np.zeros((1, 2)), np.array([[1, 0]]))
    p = ParamPair(np.zeros((1, 2)), np.array([[-700.0, 700.0]]))
    val = objective(d, p, Quadratic(), 1.0)
    assert val == pytest.approx(1400.0, rel=1e-12)


def test_nonfinite_reports_location():
    d = MaskedData(np.array([[1.0, np.inf]]), np.array([[1, 1]]))
    p = ParamPair(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(NonFiniteError) as exc:
        objective(d, p, Quadratic(), 1.0)
    assert exc.value.location == (0, 1)


def test_loss_invariants():
    x = np.linspace(-3, 3, 13)
    m = 0.4
    q = Quadratic()
    np.testing.assert_allclose(q.l(x, m), -0.5 * (x - m) ** 2)
    np.testing.assert_allclose(q.d1(x, m), x - m)
    h = Huber(1.0)
    assert np.all(np.abs(h.d1(x, m)) <= 1.0)
    # continuity of l' across the kink
    for kink in (m - 1.0, m + 1.0):
        lo, hi = h.d1(kink - 1e-9, m), h.d1(kink + 1e-9, m)
        assert abs(lo - hi) < 1e-8
    e = ExpFamily.poisson()
    np.testing.assert_allclose(e.l(x, m), x * m - math.exp(m))
    np.testing.assert_allclose(e.d2(x, m), -math.exp(m))


def test_config_and_names_validate():
    with pytest.raises(InputError):
        FitConfig(eta=0.0)
    with pytest.raises(InputError):
        Huber(-1.0)
    with pytest.raises(InputError):
        loss_from_name("cauchy")
    assert isinstance(loss_from_name("huber", delta=2.0), Huber)


def _random_instance(rng, n1=8, n2=6, poisson=False):
    w = rng.random((n1, n2)) < 0.6
    m = 0.5 * rng.normal(size=(n1, n2))
    x = rng.poisson(2.0, size=(n1, n2)).astype(float) if poisson else rng.normal(size=(n1, n2))
    x[~w] = np.nan
    return MaskedData(x, w), ParamPair(m, rng.normal(size=(n1, n2)))


def test_custom_expfamily_matches_named(rng):
    named = ExpFamily.poisson()
    custom = ExpFamily(np.exp, np.exp, np.exp)
    d, p = _random_instance(rng, poisson=True)
    assert objective(d, p, custom, 1.3) == pytest.approx(objective(d, p, named, 1.3), rel=1e-12)
    for a, b in zip(gradient(d, p, custom, 1.3), gradient(d, p, named, 1.3)):
        np.testing.assert_allclose(a, b, rtol=1e-12)


@pytest.mark.parametrize("code,poisson", [(kernels.QUADRATIC, False), (kernels.HUBER, False),
                                          (kernels.GAUSSIAN, False), (kernels.POISSON, True),
                                          (kernels.BERNOULLI, False)])
def test_backend_parity(rng, code, poisson):
    try:
        comp = kernels.get_backend("compiled")
    except ImportError:
        pytest.skip("compiled extension not built")
    py = kernels.get_backend("python")
    d, p = _random_instance(rng, 30, 20, poisson=poisson)
    if code == kernels.BERNOULLI:
        d = MaskedData(np.where(d.w, rng.random(d.shape) < 0.5, np.nan), d.w)
    a = py.loss_terms(d.x, d.w, p.m, 1.7, code, 1.0)
    b = comp.loss_terms(d.x, d.w, p.m, 1.7, code, 1.0)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    for u, v in zip(a[1:], b[1:]):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-14)
    for f in ("logistic_value", "logistic_terms"):
        u, v = getattr(py, f)(d.w, p.theta), getattr(comp, f)(d.w, p.theta)
        if f == "logistic_value":
            assert u == pytest.approx(v, rel=1e-12)
        else:
            for s, t in zip(u if isinstance(u, tuple) else (u,), v if isinstance(v, tuple) else (v,)):
                np.testing.assert_allclose(s, t, rtol=1e-12, atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.integers(0, 1))
def test_logistic_part_matches_softplus_definition(t, w):
    d, p = one(0.0, w, 0.0, t)
    expected = float(softplus(np.array(t))) - w * t
    assert objective(d, p, Quadratic(), 1.0) == pytest.approx(expected, rel=1e-12, abs=1e-12)
