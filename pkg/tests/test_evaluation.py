import math

import numpy as np
import pytest

from sfmc.errors import InputError
from sfmc.evaluation import (RatingsTriplets, load_triplets, mspe, percentile_rank_bar,
                             predict_clipped, row_space, row_space_similarity, save_triplets,
                             subspace_distance)


def _trip(users, items, ratings):
    return RatingsTriplets(np.array(users), np.array(items), np.array(ratings, dtype=float))


def test_empty_file(tmp_path):
    p = tmp_path / "empty.data"
    p.write_text("")
    trip = load_triplets(str(p))
    assert len(trip) == 0 and trip.n1 == 0 and trip.n2 == 0
    assert trip.to_masked().n_obs == 0


def test_three_line_toy(tmp_path):
    p = tmp_path / "toy.data"
    p.write_text("1\t2\t5\t881250949\n3\t1\t3\t891717742\n2\t3\t1\t878887116\n")
    data = load_triplets(str(p)).to_masked()
    assert data.shape == (3, 3)
    assert data.n_obs == 3
    assert {tuple(c) for c in np.argwhere(data.w)} == {(0, 1), (2, 0), (1, 2)}
    assert data.x[0, 1] == 5.0


def test_comma_and_blank_lines(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("1,1,4\n\n2,2,3.5\n")
    trip = load_triplets(str(p))
    assert trip.ratings.tolist() == [4.0, 3.5] and trip.timestamps is None


@pytest.mark.parametrize("text,needle", [("1\t2\n", "line 1"), ("1\t2\tx\n", "line 1"),
                                         ("1\t1\t3\n0\t1\t3\n", "line 2"),
                                         ("1\t1\tnan\n", "not finite"),
                                         ("1\t1\t3\n1\t1\t4\n", "duplicate")])
def test_malformed_rows(tmp_path, text, needle):
    p = tmp_path / "bad.data"
    p.write_text(text)
    with pytest.raises(InputError, match=needle):
        load_triplets(str(p))


def test_round_trip(tmp_path):
    trip = _trip([1, 2, 2], [3, 1, 2], [4.0, 2.5, 1.0])
    path = tmp_path / "out.data"
    save_triplets(trip, str(path))
    back = load_triplets(str(path))
    np.testing.assert_array_equal(back.users, trip.users)
    np.testing.assert_array_equal(back.ratings, trip.ratings)


def test_clip_examples():
    np.testing.assert_array_equal(predict_clipped(np.array([5.7, 0.2, 3.4])), [5.0, 1.0, 3.4])
    with pytest.raises(InputError):
        predict_clipped(np.zeros(2), 3, 2)


def test_mspe_examples():
    trip = _trip([1], [1], [4.0])
    assert mspe(trip, np.array([[3.0]])) == 1.0
    trip = _trip([1, 2], [2, 1], [4.0, 2.0])
    pred = np.array([[0.0, 4.0], [2.0, 0.0]])
    assert mspe(trip, pred) == 0.0
    with pytest.raises(InputError):
        mspe(_trip([3], [1], [1.0]), pred)


def test_rank_bar_self_consistency():
    # one user, predictions ordered like the ratings: the value is the
    # "real order" computation on the ratings themselves
    r = np.array([5.0, 3.0, 4.0, 1.0])
    trip = _trip([1] * 4, [1, 2, 3, 4], r)
    got = percentile_rank_bar(trip, r[None, :])
    ranks = np.array([0.0, 2 / 3, 1 / 3, 1.0])
    assert got == pytest.approx(np.dot(r, ranks) / r.sum())


def test_rank_bar_ties_and_singletons():
    trip = _trip([1, 1, 2], [1, 2, 1], [2.0, 2.0, 5.0])
    pred = np.array([[3.0, 3.0], [1.0, 0.0]])
    # tied pair -> both 1/2; single-item user -> 0
    assert percentile_rank_bar(trip, pred) == pytest.approx((2 * 0.5 + 2 * 0.5) / 9.0)


def test_rank_bar_random_predictions_near_half():
    # [PAPER] random predictions are expected to give 0.5
    rng = np.random.default_rng(0)
    n1, n2 = 200, 100
    users, items = np.nonzero(rng.random((n1, n2)) < 0.3)
    trip = RatingsTriplets(users + 1, items + 1, rng.integers(1, 6, users.size).astype(float))
    assert percentile_rank_bar(trip, rng.random((n1, n2))) == pytest.approx(0.5, abs=0.01)


def test_subspace_distance_examples(rng):
    q = np.linalg.qr(rng.normal(size=(10, 4)))[0]
    assert subspace_distance(q[:, :2], q[:, :2]) == pytest.approx(0.0, abs=1e-7)
    assert subspace_distance(q[:, :2], q[:, 2:]) == pytest.approx(1.0)
    rot = np.linalg.qr(rng.normal(size=(2, 2)))[0]
    assert subspace_distance(q[:, :2], q[:, :2] @ rot) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(InputError):
        subspace_distance(2 * q[:, :2], q[:, :2])


def test_subspace_distance_principal_angles(rng):
    from scipy.linalg import subspace_angles
    a = np.linalg.qr(rng.normal(size=(12, 3)))[0]
    b = np.linalg.qr(rng.normal(size=(12, 4)))[0]
    ang = np.sort(subspace_angles(a, b))
    assert subspace_distance(a, b) == pytest.approx(math.sqrt(np.mean(np.sin(ang) ** 2)))


def test_row_space_similarity(rng):
    base = rng.normal(size=(3, 20))
    m = rng.normal(size=(15, 3)) @ base
    t = rng.normal(size=(15, 3)) @ base
    assert row_space_similarity(m, t, 3, 3, 3) == pytest.approx(1.0)
    assert row_space(m, 2).shape == (20, 2)
