"""Ratings files, held-out metrics and subspace diagnostics."""

import csv
from dataclasses import dataclass
import math
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .errors import InputError
from .model import MaskedData

__all__ = ["RatingsTriplets", "load_triplets", "save_triplets", "save_matrix",
           "predict_clipped", "mspe", "percentile_rank_bar", "subspace_distance",
           "row_space", "row_space_similarity"]


@dataclass(frozen=True)
class RatingsTriplets:
    """``(user, item, rating[, timestamp])`` rows with 1-based ids."""

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.users.size)

    @property
    def n1(self):
        return int(self.users.max()) if len(self) else 0

    @property
    def n2(self):
        return int(self.items.max()) if len(self) else 0

    def to_masked(self, shape=None):
        """Dense :class:`MaskedData`; unrated cells hold NaN."""
        n1, n2 = (self.n1, self.n2) if shape is None else shape
        if len(self) and (self.n1 > n1 or self.n2 > n2):
            raise InputError("ids exceed the requested shape %s" % ((n1, n2),))
        x = np.full((n1, n2), np.nan)
        w = np.zeros((n1, n2), dtype=bool)
        x[self.users - 1, self.items - 1] = self.ratings
        w[self.users - 1, self.items - 1] = True
        return MaskedData(x, w)


def _sniff_delimiter(path):
    with open(path, newline="") as fh:
        for line in fh:
            if line.strip():
                return "\t" if "\t" in line else ","
    return "\t"


def load_triplets(path, delimiter=None):
    """Parse a tab (MovieLens) or comma separated ratings file.

    Blank lines are ignored. Raises :class:`InputError` naming the line of
    the first malformed row, or listing duplicated ``(user, item)`` pairs.
    """
    delimiter = _sniff_delimiter(path) if delimiter is None else delimiter
    users, items, ratings, stamps = [], [], [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delimiter), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) not in (3, 4):
                raise InputError("line %d: expected 3 or 4 fields, got %d" % (lineno, len(row)))
            try:
                u, i, r = int(row[0]), int(row[1]), float(row[2])
                t = int(row[3]) if len(row) == 4 else None
            except ValueError:
                raise InputError("line %d: cannot parse %r" % (lineno, delimiter.join(row))) from None
            if u < 1 or i < 1:
                raise InputError("line %d: ids must be >= 1" % lineno)
            if not math.isfinite(r):
                raise InputError("line %d: rating is not finite" % lineno)
            users.append(u)
            items.append(i)
            ratings.append(r)
            stamps.append(t)
    has_ts = bool(stamps) and all(t is not None for t in stamps)
    trip = RatingsTriplets(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
                           np.array(ratings, dtype=float),
                           np.array(stamps, dtype=np.int64) if has_ts else None)
    _check_duplicates(trip)
    return trip


def _check_duplicates(trip):
    if not len(trip):
        return
    pairs = np.stack([trip.users, trip.items], axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    dup = uniq[counts > 1]
    if dup.size:
        shown = ", ".join("(%d, %d)" % tuple(p) for p in dup[:10])
        more = "" if len(dup) <= 10 else " and %d more" % (len(dup) - 10)
        raise InputError("duplicate (user, item) pairs: %s%s" % (shown, more))


def save_triplets(trip, path, delimiter="\t"):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        for k in range(len(trip)):
            row = [int(trip.users[k]), int(trip.items[k]), repr(float(trip.ratings[k]))]
            if trip.timestamps is not None:
                row.append(int(trip.timestamps[k]))
            out.writerow(row)


def save_matrix(a, path):
    """Dense matrix as comma separated values with a ``c1,...,cn`` header."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    header = ",".join("c%d" % (j + 1) for j in range(a.shape[1]))
    np.savetxt(path, a, delimiter=",", header=header, comments="", fmt="%.17g")


def predict_clipped(m_hat, lo=1.0, hi=5.0):
    if lo > hi:
        raise InputError("lo=%g exceeds hi=%g" % (lo, hi))
    return np.clip(m_hat, lo, hi)


def _test_predictions(test, m_pre):
    if not len(test):
        raise InputError("test set is empty")
    n1, n2 = np.shape(m_pre)
    if test.n1 > n1 or test.n2 > n2:
        raise InputError("test ids exceed the fitted %dx%d matrix" % (n1, n2))
    return np.asarray(m_pre)[test.users - 1, test.items - 1]


def mspe(test, m_pre):
    """Mean squared prediction error over the test cells."""
    pred = _test_predictions(test, m_pre)
    return float(np.mean((test.ratings - pred) ** 2))


def percentile_rank_bar(test, m_pre):
    """Rating-weighted mean percentile rank of each test item within its user.

    ``rank_ij`` counts the user's other test items with a strictly higher
    prediction plus half the tied ones, divided by the number of other items;
    0 is the best position and single-item users contribute 0.
    """
    pred = _test_predictions(test, m_pre)
    order = np.argsort(test.users, kind="stable")
    users, r, p = test.users[order], test.ratings[order], pred[order]
    starts = np.flatnonzero(np.r_[True, users[1:] != users[:-1]])
    ends = np.r_[starts[1:], users.size]
    num = 0.0
    for a, b in zip(starts, ends):
        cnt = b - a
        if cnt == 1:
            continue
        rank = (rankdata(-p[a:b], method="average") - 1.0) / (cnt - 1)
        num += float(np.dot(r[a:b], rank))
    den = float(r.sum())
    if den == 0:
        raise InputError("test ratings sum to zero")
    return num / den


def _check_orthonormal(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 2:
        raise InputError("%s must be a matrix" % name)
    err = np.abs(v.T @ v - np.eye(v.shape[1])).max() if v.shape[1] else 0.0
    if err > 1e-8:
        raise InputError("%s columns are not orthonormal (max error %.3g)" % (name, err))
    return v


def subspace_distance(v1, v2, k=None):
    """``sqrt(mean_{i<=k}(1 - s_i^2))`` with ``s`` the singular values of ``v1^T v2``."""
    v1 = _check_orthonormal(v1, "v1")
    v2 = _check_orthonormal(v2, "v2")
    if v1.shape[0] != v2.shape[0]:
        raise InputError("bases live in different dimensions")
    if v1.shape[1] > v2.shape[1]:
        v1, v2 = v2, v1
    k = v1.shape[1] if k is None else int(k)
    if not 1 <= k <= v1.shape[1]:
        raise InputError("k must lie in [1, %d]" % v1.shape[1])
    s = np.linalg.svd(v1.T @ v2, compute_uv=False)[:k]
    return float(math.sqrt(max(0.0, float(np.mean(1.0 - np.minimum(s, 1.0) ** 2)))))


def row_space(a, r):
    """Orthonormal basis of the top ``r`` right singular vectors of ``a``."""
    _, _, vt = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
    return vt[:r].T


def row_space_similarity(m_hat, theta_hat, r_m, r_theta, k):
    """``sqrt(1 - d_k^2)`` between the row spaces of two estimates."""
    d = subspace_distance(row_space(m_hat, r_m), row_space(theta_hat, r_theta), k)
    return math.sqrt(max(0.0, 1.0 - d * d))
