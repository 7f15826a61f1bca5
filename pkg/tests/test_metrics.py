import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceshadow.errors import DimensionError, ValidationError
from faceshadow.metrics import (
    AuVector,
    RatingSet,
    aur,
    maid,
    maid_from_files,
    read_au_csv,
    read_ratings_csv,
)


def au_list(rows):
    return [AuVector(np.asarray(r, dtype=float)) for r in rows]


def test_au_vector_rejects_out_of_range():
    with pytest.raises(ValidationError):
        AuVector(np.array([1.0, 5.1]))
    with pytest.raises(ValidationError):
        AuVector(np.array([-0.1]))


def test_rating_set_rejects_out_of_range():
    with pytest.raises(ValidationError):
        RatingSet(np.array([[1, 6]]))
    with pytest.raises(ValidationError):
        RatingSet(np.array([[1.5, 2.0]]))


def test_maid_identical_lists():
    xs = au_list([[1, 2, 3], [0, 5, 2.5]])
    assert maid(xs, xs) == 0.0


def test_maid_worked_example():
    # (|1-2| + |2-4|) / 2 = 1.5
    assert maid(au_list([[1, 2]]), au_list([[2, 4]])) == 1.5


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maid_bounded_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    t, n = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    a = au_list(rng.uniform(0, 5, size=(t, n)))
    b = au_list(rng.uniform(0, 5, size=(t, n)))
    v = maid(a, b)
    assert 0.0 <= v <= 5.0
    assert v == maid(b, a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maid_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    t, n = 3, 4
    a, b, c = (au_list(rng.uniform(0, 5, size=(t, n))) for _ in range(3))
    assert maid(a, c) <= maid(a, b) + maid(b, c) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maid_invariant_under_pair_permutation(seed):
    rng = np.random.default_rng(seed)
    t, n = 5, 3
    a = rng.uniform(0, 5, size=(t, n))
    b = rng.uniform(0, 5, size=(t, n))
    perm = rng.permutation(t)
    assert maid(au_list(a), au_list(b)) == pytest.approx(
        maid(au_list(a[perm]), au_list(b[perm])), abs=1e-15
    )


def test_maid_shape_mismatch():
    with pytest.raises(DimensionError):
        maid(au_list([[1, 2]]), au_list([[1, 2], [3, 4]]))
    with pytest.raises(DimensionError):
        maid(au_list([[1, 2]]), au_list([[1, 2, 3]]))


# --- AUR --------------------------------------------------------------------

def test_aur_constant_matrix():
    result = aur(RatingSet(np.full((7, 4), 5)))
    assert result.per_rater == (5.0, 5.0, 5.0, 5.0)
    assert result.mean == 5.0
    assert result.std == 0.0


def test_aur_single_rater_mean():
    result = aur(RatingSet(np.array([[1], [2], [3], [4], [5]])))
    assert result.per_rater == (3.0,)
    assert result.mean == 3.0
    assert result.std == 0.0


def test_aur_mean_of_means():
    result = aur(RatingSet(np.array([[4, 5], [4, 5]])))
    assert result.mean == 4.5
    assert result.std == pytest.approx(np.std([4.0, 5.0], ddof=1))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_aur_overall_within_rater_range(seed):
    rng = np.random.default_rng(seed)
    ratings = RatingSet(rng.integers(1, 6, size=(int(rng.integers(1, 20)), int(rng.integers(1, 8)))))
    result = aur(ratings)
    assert min(result.per_rater) <= result.mean <= max(result.per_rater)


# --- CSV ingestion -----------------------------------------------------------

def test_au_csv_roundtrip(tmp_path):
    path = tmp_path / "aus.csv"
    path.write_text("AU01,AU04,AU12\n1.0,2.5,0.0\n3.25,0.5,5.0\n")
    names, vectors = read_au_csv(path)
    assert names == ["AU01", "AU04", "AU12"]
    assert len(vectors) == 2
    assert np.array_equal(vectors[1].intensities, [3.25, 0.5, 5.0])


def test_au_csv_rejects_bad_value(tmp_path):
    path = tmp_path / "aus.csv"
    path.write_text("AU01\n5.1\n")
    with pytest.raises(ValidationError):
        read_au_csv(path)


def test_maid_from_files(tmp_path):
    human = tmp_path / "h.csv"
    robot = tmp_path / "r.csv"
    human.write_text("AU01,AU02\n1,2\n")
    robot.write_text("AU01,AU02\n2,4\n")
    assert maid_from_files(human, robot) == 1.5
    robot.write_text("AU01,AU99\n2,4\n")
    with pytest.raises(ValidationError):
        maid_from_files(human, robot)


def test_ratings_csv(tmp_path):
    path = tmp_path / "ratings.csv"
    path.write_text("r1,r2\n4,5\n4,5\n")
    result = aur(read_ratings_csv(path))
    assert result.mean == 4.5
    path.write_text("r1\n6\n")
    with pytest.raises(ValidationError):
        read_ratings_csv(path)
