"""Pure numpy implementation of the entrywise objective kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
module is missing or when ``SFMC_PURE_PYTHON`` is set.
"""

import numpy as np
from scipy.special import expit

QUADRATIC, HUBER, GAUSSIAN, POISSON, BERNOULLI = 0, 1, 2, 3, 4


def softplus(t):
    # log(1 + e^t) without overflow
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _loss(x, m, code, delta):
    """Return ``(l, l', l'')`` evaluated entrywise."""
    if code == QUADRATIC:
        r = x - m
        return -0.5 * r * r, r, np.full_like(r, -1.0)
    if code == HUBER:
        r = x - m
        a = np.abs(r)
        inside = a <= delta
        val = np.where(inside, -0.5 * r * r, -delta * (a - 0.5 * delta))
        return val, np.clip(r, -delta, delta), np.where(inside, -1.0, 0.0)
    if code == GAUSSIAN:
        return x * m - 0.5 * m * m, x - m, np.full_like(m, -1.0)
    if code == POISSON:
        e = np.exp(m)
        return x * m - e, x - e, -e
    if code == BERNOULLI:
        p = expit(m)
        return x * m - softplus(m), x - p, -p * (1.0 - p)
    raise ValueError("unknown loss code %r" % code)


def _observed(x, w, m):
    wb = np.asarray(w, dtype=bool)
    if wb.shape != np.shape(m) or wb.shape != np.shape(x):
        raise ValueError("kernel inputs must have equal sizes")
    return wb, np.asarray(x)[wb], np.asarray(m)[wb]


def loss_value(x, w, m, eta, code, delta):
    _, xo, mo = _observed(x, w, m)
    l, _, _ = _loss(xo, mo, code, delta)
    return -eta * float(l.sum())


def loss_terms(x, w, m, eta, code, delta):
    wb, xo, mo = _observed(x, w, m)
    l, d1, d2 = _loss(xo, mo, code, delta)
    gm = np.zeros(wb.shape)
    cm = np.zeros(wb.shape)
    gm[wb] = -eta * d1
    cm[wb] = -eta * d2
    return -eta * float(l.sum()), gm, cm


def _mask_as_float(w, theta):
    if np.shape(w) != np.shape(theta):
        raise ValueError("kernel inputs must have equal sizes")
    w = np.asarray(w)
    return w if w.dtype == np.float64 else w.astype(np.float64)


def _softplus_sum(theta, p):
    # softplus(t) = max(t, 0) - log(max(p, 1 - p)) with p = expit(t)
    return float(np.maximum(theta, 0.0).sum() - np.log(np.maximum(p, 1.0 - p)).sum())


def logistic_value(w, theta):
    wf = _mask_as_float(w, theta)
    return float(softplus(theta).sum() - np.vdot(wf, theta))


def logistic_grad(w, theta):
    """Logistic part value and its gradient ``expit(theta) - w``."""
    wf = _mask_as_float(w, theta)
    p = expit(theta)
    return _softplus_sum(theta, p) - float(np.vdot(wf, theta)), p - wf


def logistic_terms(w, theta):
    wf = _mask_as_float(w, theta)
    p = expit(theta)
    return _softplus_sum(theta, p) - float(np.vdot(wf, theta)), p - wf, p * (1.0 - p)


def objective(x, w, m, theta, eta, code, delta):
    return logistic_value(w, theta) + loss_value(x, w, m, eta, code, delta)


def terms(x, w, m, theta, eta, code, delta):
    """Objective plus entrywise gradients and curvatures for both blocks."""
    lv, gm, cm = loss_terms(x, w, m, eta, code, delta)
    tv, gt, ct = logistic_terms(w, theta)
    return lv + tv, gm, gt, cm, ct
