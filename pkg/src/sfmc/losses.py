"""Entrywise pseudo-log-likelihood families and the joint objective.

The objective for masked data ``(x, w)`` and parameters ``(m, theta)`` is::

    L = sum_ij softplus(theta_ij) - w_ij * theta_ij - eta * w_ij * l(x_ij, m_ij)

which is the negative Bernoulli log-likelihood of the mask plus the
``eta``-weighted negative loss on observed cells.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import expit

from . import kernels
from ._kernels_py import softplus
from .errors import DimensionError, InputError, NonFiniteError

__all__ = [
    "LossSpec", "Quadratic", "Huber", "ExpFamily", "FitConfig",
    "objective", "gradient", "second_derivative_diag", "entry_terms",
    "loss_from_name",
]


class LossSpec:
    """Base class. Subclasses define ``l``, ``d1`` (dl/dm) and ``d2`` (d2l/dm2)."""

    kind = "abstract"
    code = None  # kernel code, None for callables evaluated in numpy
    delta = 0.0

    def l(self, x, m):
        raise NotImplementedError

    def d1(self, x, m):
        raise NotImplementedError

    def d2(self, x, m):
        raise NotImplementedError

    @property
    def is_regression(self):
        return False

    def curvature_bound(self, m=None):
        """Upper bound on ``-l''`` over the relevant ``m`` range."""
        return 1.0

    def __repr__(self):
        return "%s()" % type(self).__name__


class Quadratic(LossSpec):
    kind = "quadratic"
    code = kernels.QUADRATIC

    def l(self, x, m):
        r = np.asarray(x) - m
        return -0.5 * r * r

    def d1(self, x, m):
        return np.asarray(x) - m

    def d2(self, x, m):
        return -np.ones(np.broadcast(x, m).shape)

    @property
    def is_regression(self):
        return True


class Huber(LossSpec):
    """Negative Huber loss with threshold ``delta``.

    At the kink ``|x - m| = delta`` the second derivative takes the
    quadratic-branch value ``-1``.
    """

    kind = "huber"
    code = kernels.HUBER

    def __init__(self, delta=1.345):
        delta = float(delta)
        if not delta > 0 or not math.isfinite(delta):
            raise InputError("huber delta must be positive and finite, got %r" % delta)
        self.delta = delta

    def l(self, x, m):
        r = np.asarray(x) - m
        a = np.abs(r)
        d = self.delta
        return np.where(a <= d, -0.5 * r * r, -d * (a - 0.5 * d))

    def d1(self, x, m):
        return np.clip(np.asarray(x) - m, -self.delta, self.delta)

    def d2(self, x, m):
        r = np.asarray(x) - m
        return np.where(np.abs(r) <= self.delta, -1.0, 0.0)

    def __repr__(self):
        return "Huber(delta=%g)" % self.delta


class ExpFamily(LossSpec):
    """Exponential family loss ``l(x, m) = x m - b(m)``.

    ``b``, ``db`` and ``d2b`` are vectorized callables giving ``b``, ``b'``
    and ``b''``. The named constructors map to compiled kernels.
    """

    kind = "expfamily"

    def __init__(self, b, db, d2b, name=None, code=None):
        self.b = b
        self.db = db
        self.d2b = d2b
        self.name = name or "custom"
        self.code = code

    @classmethod
    def gaussian(cls):
        return cls(lambda m: 0.5 * np.square(m), lambda m: np.asarray(m, dtype=float),
                   lambda m: np.ones(np.shape(m)), name="gaussian", code=kernels.GAUSSIAN)

    @classmethod
    def poisson(cls):
        return cls(np.exp, np.exp, np.exp, name="poisson", code=kernels.POISSON)

    @classmethod
    def bernoulli(cls):
        return cls(softplus, expit, lambda m: expit(m) * (1.0 - expit(m)),
                   name="bernoulli", code=kernels.BERNOULLI)

    def l(self, x, m):
        return np.asarray(x) * m - self.b(m)

    def d1(self, x, m):
        return np.asarray(x) - self.db(m)

    def d2(self, x, m):
        return -np.asarray(self.d2b(m), dtype=float) * np.ones(np.broadcast(x, m).shape)

    @property
    def is_regression(self):
        return self.name == "gaussian"

    def curvature_bound(self, m=None):
        if self.name in ("gaussian",):
            return 1.0
        if self.name == "bernoulli":
            return 0.25
        if m is None:
            return 1.0
        return float(max(np.max(self.d2b(np.asarray(m))), 1e-12))

    def __repr__(self):
        return "ExpFamily(%s)" % self.name


_FAMILIES = {"gaussian": ExpFamily.gaussian, "poisson": ExpFamily.poisson,
             "bernoulli": ExpFamily.bernoulli}


def loss_from_name(name, delta=1.345, family="gaussian"):
    """Build a loss from its command line name."""
    if name == "quadratic":
        return Quadratic()
    if name == "huber":
        return Huber(delta)
    if name == "expfamily":
        try:
            return _FAMILIES[family]()
        except KeyError:
            raise InputError("unknown exponential family %r" % family) from None
    raise InputError("unknown loss %r" % name)


@dataclass(frozen=True)
class FitConfig:
    """Settings for the known-rank fitter."""

    eta: float = 1.0
    alpha_m: float = 20.0
    alpha_theta: float = 20.0
    max_iter: int = 2000
    tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    recanon_every: int = 10
    ridge: float = 1e-10

    def __post_init__(self):
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InputError("eta must be positive and finite, got %r" % self.eta)
        if not (self.alpha_m > 0 and self.alpha_theta > 0):
            raise InputError("caps must be positive")
        if self.max_iter < 1 or not self.tol > 0:
            raise InputError("max_iter must be >= 1 and tol > 0")


def _check_shapes(data, p):
    if data.shape != p.shape:
        raise DimensionError("data has shape %s but parameters have shape %s"
                             % (data.shape, p.shape), block="m")


def _locate_nonfinite(data, m, theta):
    for name, a, sel in (("theta", theta, None), ("m", m, None), ("x", data.x, data.w)):
        bad = ~np.isfinite(a)
        if sel is not None:
            bad &= sel
        if bad.any():
            i, j = np.argwhere(bad)[0]
            return name, (int(i), int(j))
    return None, None


def _raise_nonfinite(data, m, theta, what="objective"):
    name, loc = _locate_nonfinite(data, m, theta)
    if loc is None:
        raise NonFiniteError("%s is not finite" % what)
    raise NonFiniteError("non-finite %s at entry (%d, %d)" % (name, loc[0], loc[1]),
                         location=loc)


def loss_part_value(x, w, m, eta, loss):
    """``-eta * sum w l(x, m)`` on raw arrays."""
    if loss.code is not None:
        return kernels.loss_value(x, w, m, eta, loss.code, loss.delta)
    xo, mo = x[w], m[w]
    return -eta * float(np.sum(loss.l(xo, mo)))


def loss_part_terms(x, w, m, eta, loss):
    """Loss part value with entrywise gradient and curvature in ``m``."""
    if loss.code is not None:
        return kernels.loss_terms(x, w, m, eta, loss.code, loss.delta)
    xo, mo = x[w], m[w]
    gm = np.zeros(m.shape)
    cm = np.zeros(m.shape)
    gm[w] = -eta * loss.d1(xo, mo)
    cm[w] = -eta * loss.d2(xo, mo)
    return -eta * float(np.sum(loss.l(xo, mo))), gm, cm


def entry_terms(x, w, m, theta, eta, loss):
    """Objective, gradients and curvatures on raw arrays (no validation)."""
    lv, gm, cm = loss_part_terms(x, w, m, eta, loss)
    tv, gt, ct = kernels.logistic_terms(w, theta)
    return lv + tv, gm, gt, cm, ct


def entry_objective(x, w, m, theta, eta, loss):
    return kernels.logistic_value(w, theta) + loss_part_value(x, w, m, eta, loss)


def objective(data, p, loss, eta):
    """Joint negative pseudo-log-likelihood.

    Raises :class:`NonFiniteError` with the offending ``(i, j)`` when the
    inputs or the result are not finite.
    """
    _check_shapes(data, p)
    if not (np.isfinite(p.m).all() and np.isfinite(p.theta).all()):
        _raise_nonfinite(data, p.m, p.theta)
    val = entry_objective(data.x, data.w, p.m, p.theta, float(eta), loss)
    if not math.isfinite(val):
        _raise_nonfinite(data, p.m, p.theta)
    return val


def gradient(data, p, loss, eta):
    """Gradients of :func:`objective` with respect to ``m`` and ``theta``."""
    _check_shapes(data, p)
    if not (np.isfinite(p.m).all() and np.isfinite(p.theta).all()):
        _raise_nonfinite(data, p.m, p.theta, "gradient")
    obj, gm, gt, _, _ = entry_terms(data.x, data.w, p.m, p.theta, float(eta), loss)
    if not (math.isfinite(obj) and np.isfinite(gm).all()):
        _raise_nonfinite(data, p.m, p.theta, "gradient")
    return gm, gt


def second_derivative_diag(data, p, loss, eta):
    """Entrywise second derivatives ``(-eta w l'', pi (1 - pi))``."""
    _check_shapes(data, p)
    _, _, _, cm, ct = entry_terms(data.x, data.w, p.m, p.theta, float(eta), loss)
    return cm, ct
