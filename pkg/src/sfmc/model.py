"""Shared factor model: data containers, assembly and identification.

The data-parameter matrix ``M`` and the missingness-logit matrix ``Theta``
share a block of column factors ``F_s``::

    M     = L_m1 F_s^T + L_m2 F_m^T
    Theta = L_t1 F_s^T + L_t2 F_t^T

Canonical form: ``F^T F / n2 = I`` for every factor block, ``F_s`` orthogonal
to ``F_m`` and ``F_t``, and the Gram matrices ``L_m1^T L_m1 + L_t1^T L_t1``,
``L_m2^T L_m2`` and ``L_t2^T L_t2`` diagonal with decreasing entries.
"""

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DimensionError, RankDeficientError

__all__ = [
    "MaskedData", "ParamPair", "FactorModel", "SigmaBoundCheck",
    "assemble", "canonicalize", "normalize_factors", "shared_coupling_xi",
    "check_sigma_lower_bound", "IdentificationWarning",
]

RANK_CUTOFF = 1e-10


class IdentificationWarning(UserWarning):
    pass


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MaskedData:
    """Observed matrix ``x`` with a binary observation mask ``w``.

    Entries of ``x`` where ``w == 0`` are never read and may hold anything,
    including NaN.
    """

    x: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        w = np.asarray(self.w)
        if x.ndim != 2 or w.shape != x.shape:
            raise DimensionError("x has shape %s but w has shape %s"
                                 % (x.shape, w.shape), block="w")
        if w.dtype != bool:
            if not np.all((w == 0) | (w == 1)):
                raise DimensionError("mask entries must be 0 or 1", block="w")
            w = w.astype(bool)
        else:
            w = w.copy()
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "w", w)

    @property
    def shape(self):
        return self.x.shape

    @property
    def n1(self):
        return self.x.shape[0]

    @property
    def n2(self):
        return self.x.shape[1]

    @cached_property
    def n_obs(self):
        return int(self.w.sum())

    @property
    def rate(self):
        """Overall observation rate."""
        return self.n_obs / float(self.x.size) if self.x.size else 0.0

    @cached_property
    def x_clean(self):
        """Copy of ``x`` with unobserved entries set to zero."""
        out = np.where(self.w, self.x, 0.0)
        out.setflags(write=False)
        return out

    @cached_property
    def w_float(self):
        out = self.w.astype(float)
        out.setflags(write=False)
        return out


@dataclass(frozen=True, eq=False)
class ParamPair:
    """Dense parameter matrices ``m`` and ``theta`` (observation logits)."""

    m: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        m = _frozen(self.m)
        theta = _frozen(self.theta)
        if m.ndim != 2 or m.shape != theta.shape:
            raise DimensionError("m has shape %s but theta has shape %s"
                                 % (m.shape, theta.shape), block="theta")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "theta", theta)

    @property
    def shape(self):
        return self.m.shape

    @property
    def h(self):
        """Stacked ``[m; theta]`` of shape ``(2 n1, n2)``."""
        return np.vstack([self.m, self.theta])

    @classmethod
    def from_stacked(cls, h):
        h = np.asarray(h, dtype=float)
        if h.shape[0] % 2:
            raise DimensionError("stacked matrix needs an even row count", block="h")
        n1 = h.shape[0] // 2
        return cls(h[:n1], h[n1:])


_LOADINGS = ("lambda_m1", "lambda_m2", "lambda_th1", "lambda_th2")
_FACTORS = ("f_s", "f_m", "f_th")


@dataclass(frozen=True, eq=False)
class FactorModel:
    """Factor and loading blocks of the shared factor model.

    Shapes: ``lambda_m1`` and ``lambda_th1`` are ``n1 x d_s``, ``lambda_m2`` is
    ``n1 x d_m``, ``lambda_th2`` is ``n1 x d_theta``; ``f_s``, ``f_m``, ``f_th``
    are ``n2 x d_s``, ``n2 x d_m``, ``n2 x d_theta``.
    """

    lambda_m1: np.ndarray
    lambda_m2: np.ndarray
    lambda_th1: np.ndarray
    lambda_th2: np.ndarray
    f_s: np.ndarray
    f_m: np.ndarray
    f_th: np.ndarray

    def __post_init__(self):
        for name in _LOADINGS + _FACTORS:
            a = _frozen(getattr(self, name))
            if a.ndim != 2:
                raise DimensionError("block %s must be a 2-d array, got ndim=%d"
                                     % (name, a.ndim), block=name)
            object.__setattr__(self, name, a)
        n1 = self.lambda_m1.shape[0]
        n2 = self.f_s.shape[0]
        d_s = self.f_s.shape[1]
        expected = {
            "lambda_m1": (n1, d_s),
            "lambda_th1": (n1, d_s),
            "lambda_m2": (n1, self.f_m.shape[1]),
            "lambda_th2": (n1, self.f_th.shape[1]),
            "f_m": (n2, self.f_m.shape[1]),
            "f_th": (n2, self.f_th.shape[1]),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError("block %s has shape %s, expected %s"
                                     % (name, got, shape), block=name)

    @property
    def ranks(self):
        return (self.f_s.shape[1], self.f_m.shape[1], self.f_th.shape[1])

    @property
    def n1(self):
        return self.lambda_m1.shape[0]

    @property
    def n2(self):
        return self.f_s.shape[0]

    @property
    def total_rank(self):
        return sum(self.ranks)

    # Stacked views used by the fitters.
    @property
    def load_m(self):
        return np.hstack([self.lambda_m1, self.lambda_m2])

    @property
    def load_theta(self):
        return np.hstack([self.lambda_th1, self.lambda_th2])

    @property
    def fac_m(self):
        return np.hstack([self.f_s, self.f_m])

    @property
    def fac_theta(self):
        return np.hstack([self.f_s, self.f_th])

    def assemble(self):
        return assemble(self)

    def replace(self, **blocks):
        kw = {name: getattr(self, name) for name in _LOADINGS + _FACTORS}
        kw.update(blocks)
        return FactorModel(**kw)

    @classmethod
    def from_stacked(cls, load_m, load_theta, factors, ranks):
        """Build from ``[L_m1 L_m2]``, ``[L_t1 L_t2]`` and ``[F_s F_m F_t]``."""
        d_s, d_m, d_t = ranks
        return cls(
            lambda_m1=load_m[:, :d_s], lambda_m2=load_m[:, d_s:d_s + d_m],
            lambda_th1=load_theta[:, :d_s], lambda_th2=load_theta[:, d_s:d_s + d_t],
            f_s=factors[:, :d_s], f_m=factors[:, d_s:d_s + d_m],
            f_th=factors[:, d_s + d_m:d_s + d_m + d_t])

    @classmethod
    def zeros(cls, n1, n2, ranks):
        d_s, d_m, d_t = ranks
        return cls(np.zeros((n1, d_s)), np.zeros((n1, d_m)), np.zeros((n1, d_s)),
                   np.zeros((n1, d_t)), np.zeros((n2, d_s)), np.zeros((n2, d_m)),
                   np.zeros((n2, d_t)))


def assemble(fm):
    """Assemble ``(M, Theta)`` from the factor blocks."""
    m = fm.lambda_m1 @ fm.f_s.T + fm.lambda_m2 @ fm.f_m.T
    theta = fm.lambda_th1 @ fm.f_s.T + fm.lambda_th2 @ fm.f_th.T
    return ParamPair(m, theta)


def _check_rank(a, r, name):
    if r == 0:
        return
    if r > min(a.shape):
        raise RankDeficientError(
            "%s has shape %s and cannot have rank %d" % (name, a.shape, r),
            matrix=name, index=r, sigma=0.0, sigma_max=None)
    s = np.linalg.svd(a, compute_uv=False)
    smax = s[0] if s.size else 0.0
    if smax == 0.0 or s[r - 1] <= RANK_CUTOFF * smax:
        raise RankDeficientError(
            "%s is numerically rank deficient: sigma_%d=%.3e vs sigma_max=%.3e"
            % (name, r, s[r - 1], smax),
            matrix=name, index=r, sigma=float(s[r - 1]), sigma_max=float(smax))


def _top_right_vectors(a, r):
    if r == 0:
        return np.zeros((a.shape[1], 0))
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    return vt[:r].T


def _orthonormal_basis(a, r):
    """Top ``r`` left singular vectors of ``a``."""
    if r == 0:
        return np.zeros((a.shape[0], 0))
    u, _, _ = np.linalg.svd(a, full_matrices=False)
    return u[:, :r]


def canonicalize(m, theta, ranks):
    """Factor ``(m, theta)`` into a canonical :class:`FactorModel`.

    The shared factor space is estimated from the canonical directions of
    the two row spaces; the specific spaces are what remains of each row
    space after projecting out the shared one. Loadings come from least
    squares. When ``(m, theta)`` has exactly the declared structure the
    result reassembles to the input.

    Raises
    ------
    RankDeficientError
        If ``m`` (``theta``) has fewer than ``d_s + d_m`` (``d_s + d_theta``)
        singular values above ``1e-10 * sigma_max``.
    """
    m = np.asarray(m, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if m.shape != theta.shape:
        raise DimensionError("m has shape %s but theta has shape %s"
                             % (m.shape, theta.shape), block="theta")
    d_s, d_m, d_t = (int(r) for r in ranks)
    if min(d_s, d_m, d_t) < 0:
        raise ValueError("ranks must be nonnegative, got %s" % (ranks,))
    n2 = m.shape[1]
    _check_rank(m, d_s + d_m, "m")
    _check_rank(theta, d_s + d_t, "theta")

    v_m = _top_right_vectors(m, d_s + d_m)
    v_t = _top_right_vectors(theta, d_s + d_t)

    if d_s:
        u, _, qt = np.linalg.svd(v_m.T @ v_t)
        a = v_m @ u[:, :d_s]
        b = v_t @ qt.T[:, :d_s]
        # canonical pairs are sign-aligned by the SVD, so averaging is safe
        shared, _ = np.linalg.qr(0.5 * (a + b))
    else:
        shared = np.zeros((n2, 0))

    def specific(v, r):
        resid = v - shared @ (shared.T @ v)
        return _orthonormal_basis(resid, r)

    basis_m = specific(v_m, d_m)
    basis_t = specific(v_t, d_t)
    root = np.sqrt(n2)
    f_s, f_m, f_t = root * shared, root * basis_m, root * basis_t

    g_m = np.hstack([f_s, f_m])
    g_t = np.hstack([f_s, f_t])
    load_m = m @ g_m / n2
    load_t = theta @ g_t / n2
    fm = FactorModel(load_m[:, :d_s], load_m[:, d_s:], load_t[:, :d_s], load_t[:, d_s:],
                     f_s, f_m, f_t)
    return _rotate_and_sign(fm)


def _orthonormalize_block(f, loads):
    """QR-normalize ``f`` so that ``f^T f / n2 = I``, compensating ``loads``."""
    n2, r = f.shape
    if r == 0:
        return f, loads
    q, rr = np.linalg.qr(f)
    root = np.sqrt(n2)
    return root * q, [ld @ rr.T / root for ld in loads]


def normalize_factors(fm):
    """Re-express a factor model in canonical form without changing ``(M, Theta)``.

    Unlike :func:`canonicalize` this works directly on the blocks, so the
    assembled matrices are preserved up to rounding.
    """
    n2 = fm.n2
    f_s, (l_m1, l_t1) = _orthonormalize_block(fm.f_s, [fm.lambda_m1, fm.lambda_th1])
    l_m2, l_t2 = fm.lambda_m2, fm.lambda_th2
    f_m, f_t = fm.f_m, fm.f_th
    if f_s.shape[1]:
        c_m = f_s.T @ f_m / n2
        f_m = f_m - f_s @ c_m
        l_m1 = l_m1 + l_m2 @ c_m.T
        c_t = f_s.T @ f_t / n2
        f_t = f_t - f_s @ c_t
        l_t1 = l_t1 + l_t2 @ c_t.T
    f_m, (l_m2,) = _orthonormalize_block(f_m, [l_m2])
    f_t, (l_t2,) = _orthonormalize_block(f_t, [l_t2])
    return _rotate_and_sign(FactorModel(l_m1, l_m2, l_t1, l_t2, f_s, f_m, f_t))


def _diagonalizing_rotation(gram):
    vals, vecs = np.linalg.eigh(gram)
    order = np.argsort(vals)[::-1]
    return vecs[:, order]


def _sign_fix(f, loads):
    if f.shape[1] == 0:
        return f, loads
    idx = np.argmax(np.abs(f), axis=0)
    signs = np.sign(f[idx, np.arange(f.shape[1])])
    signs[signs == 0] = 1.0
    return f * signs, [ld * signs for ld in loads]


def _rotate_and_sign(fm):
    l_m1, l_t1, f_s = fm.lambda_m1, fm.lambda_th1, fm.f_s
    if f_s.shape[1]:
        r = _diagonalizing_rotation(l_m1.T @ l_m1 + l_t1.T @ l_t1)
        l_m1, l_t1, f_s = l_m1 @ r, l_t1 @ r, f_s @ r
    l_m2, f_m = fm.lambda_m2, fm.f_m
    if f_m.shape[1]:
        r = _diagonalizing_rotation(l_m2.T @ l_m2)
        l_m2, f_m = l_m2 @ r, f_m @ r
    l_t2, f_t = fm.lambda_th2, fm.f_th
    if f_t.shape[1]:
        r = _diagonalizing_rotation(l_t2.T @ l_t2)
        l_t2, f_t = l_t2 @ r, f_t @ r
    f_s, (l_m1, l_t1) = _sign_fix(f_s, [l_m1, l_t1])
    f_m, (l_m2,) = _sign_fix(f_m, [l_m2])
    f_t, (l_t2,) = _sign_fix(f_t, [l_t2])
    return FactorModel(l_m1, l_m2, l_t1, l_t2, f_s, f_m, f_t)


def shared_coupling_xi(fm):
    """Spectral norm of ``F_m^T F_theta / n2``.

    Values ``>= 1`` mean the specific factor spaces overlap and the model is
    not identified; an :class:`IdentificationWarning` is emitted in that case.
    """
    if fm.f_m.shape[1] == 0 or fm.f_th.shape[1] == 0:
        return 0.0
    xi = float(np.linalg.norm(fm.f_m.T @ fm.f_th / fm.n2, 2))
    if xi >= 1.0 - 1e-12:
        warnings.warn("specific factor spaces overlap (xi=%.6f); model is not identified"
                      % xi, IdentificationWarning, stacklevel=2)
    return xi


@dataclass(frozen=True)
class SigmaBoundCheck:
    lhs: float
    rhs: float
    xi: float
    holds: bool


def _sigma(a, r):
    if r == 0:
        return 0.0
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[r - 1]) if r <= s.size else 0.0


def check_sigma_lower_bound(fm):
    """Compare ``sigma_d(H)`` with ``sqrt(1 - xi) * min(sigma_{d_s+d_m}(M), sigma_{d_s+d_t}(Theta))``."""
    d_s, d_m, d_t = fm.ranks
    p = assemble(fm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IdentificationWarning)
        xi = shared_coupling_xi(fm)
    lhs = _sigma(p.h, d_s + d_m + d_t)
    parts = []
    if d_s + d_m:
        parts.append(_sigma(p.m, d_s + d_m))
    if d_s + d_t:
        parts.append(_sigma(p.theta, d_s + d_t))
    rhs = np.sqrt(max(1.0 - xi, 0.0)) * min(parts) if parts else 0.0
    return SigmaBoundCheck(lhs=lhs, rhs=float(rhs), xi=xi, holds=bool(lhs >= rhs - 1e-8))
