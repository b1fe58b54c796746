# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled entrywise objective kernels.

The objective splits into a loss part depending on ``m`` and a logistic part
depending on ``theta``; each has its own value and value+derivative kernel.
Masked entries of ``x`` are never read. Loss codes: 0 quadratic, 1 huber,
2 gaussian, 3 poisson, 4 bernoulli.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, fmax

cnp.import_array()


cdef inline double _logistic_pair(double t, double* p) noexcept nogil:
    # softplus(t) and expit(t) from a single exp
    cdef double e = exp(-fabs(t))
    cdef double u = 1.0 + e
    cdef double num = 1.0 if t >= 0 else e
    p[0] = num / u
    # log1p(e) via log(u) with the rounding of u compensated
    return fmax(t, 0.0) + log(u) - ((u - 1.0) - e) / u


cdef inline void _loss(double x, double m, int code, double delta,
                       double* l, double* d1, double* d2) noexcept nogil:
    cdef double r, a, e, p
    if code == 0 or code == 2:
        r = x - m
        if code == 0:
            l[0] = -0.5 * r * r
        else:
            l[0] = x * m - 0.5 * m * m
        d1[0] = r
        d2[0] = -1.0
    elif code == 1:
        r = x - m
        a = fabs(r)
        if a <= delta:
            l[0] = -0.5 * r * r
            d1[0] = r
            d2[0] = -1.0
        else:
            l[0] = -delta * (a - 0.5 * delta)
            d1[0] = delta if r > 0 else -delta
            d2[0] = 0.0
    elif code == 3:
        e = exp(m)
        l[0] = x * m - e
        d1[0] = x - e
        d2[0] = -e
    else:
        l[0] = x * m - _logistic_pair(m, &p)
        d1[0] = x - p
        d2[0] = -p * (1.0 - p)


def _mask_view(w):
    w = np.ascontiguousarray(w)
    if w.dtype == np.bool_:
        return w.view(np.uint8).ravel()
    return w.astype(np.uint8).ravel()


def _flat(a):
    return np.ascontiguousarray(a, dtype=np.float64).ravel()


def _check(Py_ssize_t n, Py_ssize_t nw, int code):
    if nw != n:
        raise ValueError("kernel inputs must have equal sizes")
    if code < 0 or code > 4:
        raise ValueError("unknown loss code %r" % code)


def loss_value(x, w, m, double eta, int code, double delta):
    """``-eta * sum_ij w_ij l(x_ij, m_ij)``."""
    cdef const double[::1] xv = _flat(x)
    cdef const cnp.uint8_t[::1] wv = _mask_view(w)
    cdef const double[::1] mv = _flat(m)
    cdef Py_ssize_t n = mv.shape[0], k
    cdef double total = 0.0, l, d1, d2
    _check(n, wv.shape[0], code)
    _check(n, xv.shape[0], code)
    with nogil:
        for k in range(n):
            if wv[k]:
                _loss(xv[k], mv[k], code, delta, &l, &d1, &d2)
                total -= l
    return eta * total


def loss_terms(x, w, m, double eta, int code, double delta):
    """Loss part value with entrywise gradient and curvature in ``m``."""
    shape = np.shape(m)
    cdef const double[::1] xv = _flat(x)
    cdef const cnp.uint8_t[::1] wv = _mask_view(w)
    cdef const double[::1] mv = _flat(m)
    cdef Py_ssize_t n = mv.shape[0], k
    _check(n, wv.shape[0], code)
    _check(n, xv.shape[0], code)
    gm_a = np.zeros(n)
    cm_a = np.zeros(n)
    cdef double[::1] gm = gm_a, cm = cm_a
    cdef double total = 0.0, l, d1, d2
    with nogil:
        for k in range(n):
            if wv[k]:
                _loss(xv[k], mv[k], code, delta, &l, &d1, &d2)
                total -= l
                gm[k] = -eta * d1
                cm[k] = -eta * d2
    return eta * total, gm_a.reshape(shape), cm_a.reshape(shape)


def logistic_value(w, theta):
    """``sum_ij softplus(theta_ij) - w_ij theta_ij``."""
    cdef const cnp.uint8_t[::1] wv = _mask_view(w)
    cdef const double[::1] tv = _flat(theta)
    cdef Py_ssize_t n = tv.shape[0], k
    cdef double total = 0.0, t, p
    _check(n, wv.shape[0], 0)
    with nogil:
        for k in range(n):
            t = tv[k]
            total += _logistic_pair(t, &p)
            if wv[k]:
                total -= t
    return total


def logistic_terms(w, theta):
    """Logistic part value with entrywise gradient and curvature in ``theta``."""
    shape = np.shape(theta)
    cdef const cnp.uint8_t[::1] wv = _mask_view(w)
    cdef const double[::1] tv = _flat(theta)
    cdef Py_ssize_t n = tv.shape[0], k
    _check(n, wv.shape[0], 0)
    gt_a = np.empty(n)
    ct_a = np.empty(n)
    cdef double[::1] gt = gt_a, ct = ct_a
    cdef double total = 0.0, t, p
    with nogil:
        for k in range(n):
            t = tv[k]
            total += _logistic_pair(t, &p)
            ct[k] = p * (1.0 - p)
            if wv[k]:
                total -= t
                gt[k] = p - 1.0
            else:
                gt[k] = p
    return total, gt_a.reshape(shape), ct_a.reshape(shape)


def objective(x, w, m, theta, double eta, int code, double delta):
    return logistic_value(w, theta) + loss_value(x, w, m, eta, code, delta)


def terms(x, w, m, theta, double eta, int code, double delta):
    """Objective plus entrywise gradients and curvatures for both blocks."""
    lv, gm, cm = loss_terms(x, w, m, eta, code, delta)
    tv, gt, ct = logistic_terms(w, theta)
    return lv + tv, gm, gt, cm, ct
