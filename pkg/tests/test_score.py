import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gapforest.benchmarks import gaussian_2d
from gapforest.errors import ScoreError
from gapforest.forest import ForestParams
from gapforest.pipeline import FitOptions, fit_model, gap_scores
from gapforest.score import (
    auc_roc,
    central_median_scores,
    central_set,
    euclidean_distances,
    knn_score,
    outlier_scores,
    row_medians,
    write_scores_csv,
)


def with_medians(medians):
    """Distance matrix whose row medians (self excluded) are the given values."""
    m = np.asarray(medians, dtype=float)
    d = np.repeat(m[:, None], m.size, axis=1)
    np.fill_diagonal(d, 0)
    return d


def test_central_set_picks_lowest_medians():
    d = with_medians([5, 1, 9, 2])
    assert row_medians(d).tolist() == [5, 1, 9, 2]
    assert central_set(d).tolist() == [1, 3]


def test_central_set_ties_go_to_low_index():
    d = np.ones((7, 7)) - np.eye(7)
    assert central_set(d).tolist() == [0, 1, 2]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 1000))
def test_central_set_size(n, seed):
    x = np.random.default_rng(seed).normal(size=(n, 2))
    assert central_set(euclidean_distances(x)).size == n // 2


def test_constant_median_score():
    d = np.full((5, 5), 3.0)
    np.fill_diagonal(d, 0)
    assert outlier_scores(d, [1, 2, 3]).tolist() == [3.0] * 5


def test_singleton_central():
    d = euclidean_distances(np.array([[0.0], [2.0], [7.0]]))
    assert outlier_scores(d, [1]).tolist() == [2.0, 0.0, 5.0]


def test_self_excluded_for_central_rows():
    d = euclidean_distances(np.array([[0.0], [1.0], [3.0], [10.0]]))
    # row 1 against central {0, 1, 2} minus itself: median of (1, 2)
    assert outlier_scores(d, [0, 1, 2]).tolist() == [2.0, 1.5, 2.5, 9.0]


def test_infinite_entries_order_last():
    d = np.array([[0, 1, np.inf, np.inf],
                  [1, 0, 2, np.inf],
                  [np.inf, 2, 0, 4],
                  [np.inf, np.inf, 4, 0]])
    s = outlier_scores(d, [0, 1, 2])
    assert s.tolist() == [np.inf, 1.5, np.inf, np.inf]


def test_empty_central_and_tiny_input():
    with pytest.raises(ScoreError):
        outlier_scores(np.zeros((3, 3)), [])
    with pytest.raises(ScoreError):
        central_set(np.zeros((1, 1)))
    with pytest.raises(ScoreError):
        row_medians(np.zeros((2, 3)))


def test_euclidean_examples(rng):
    assert euclidean_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))[0, 1] == 5
    X = rng.normal(size=(10, 3))
    D = euclidean_distances(X)
    assert (np.diag(D) == 0).all()
    perm = rng.permutation(10)
    assert np.allclose(euclidean_distances(X[perm]), D[np.ix_(perm, perm)])
    with pytest.raises(ScoreError):
        euclidean_distances(np.array([[np.nan, 1.0]]))


def test_knn_examples(rng):
    d = euclidean_distances(np.array([[0.0], [1.0], [10.0]]))
    assert knn_score(d, 1).tolist() == [1, 1, 9]
    D = euclidean_distances(rng.normal(size=(8, 2)))
    assert np.array_equal(knn_score(D, 7), D.max(axis=1))
    dup = euclidean_distances(np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 0.0]]))
    assert knn_score(dup, 1)[:2].tolist() == [0, 0]
    for k in (0, 3):
        with pytest.raises(ScoreError):
            knn_score(d, k)


def test_auc_examples():
    assert auc_roc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert auc_roc([4, 3, 2, 1], [0, 0, 1, 1]) == 0.0
    assert auc_roc([7, 7, 7, 7], [0, 1, 0, 1]) == 0.5
    assert auc_roc([1, np.inf, np.inf, 3], [0, 1, 0, 1]) == 0.625
    with pytest.raises(ScoreError):
        auc_roc([1, 2], [1, 1])
    with pytest.raises(ScoreError):
        auc_roc([1, np.nan], [0, 1])
    with pytest.raises(ScoreError):
        auc_roc([1, 2, 3], [0, 1])


@settings(max_examples=60, deadline=None)
@given(scores=arrays(float, st.integers(2, 40), elements=st.floats(-5, 5) | st.just(np.inf)),
       seed=st.integers(0, 1000))
def test_auc_complement(scores, seed):
    labels = np.random.default_rng(seed).integers(0, 2, scores.size)
    labels[:2] = [0, 1]
    assert abs(auc_roc(scores, labels) + auc_roc(scores, 1 - labels) - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 1000), power=st.floats(0.3, 3.0))
def test_monotone_transform_keeps_ranking(seed, power):
    # 26 rows: row medians over 25 values, a central set of 13; both medians
    # are single order statistics, which any increasing map preserves
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(26, 2))
    D = euclidean_distances(X)
    T = np.exp(D) * D ** power
    central = central_set(D)
    assert np.array_equal(central_set(T), central)
    outside = np.setdiff1d(np.arange(26), central)
    a = outlier_scores(D, central)[outside]
    b = outlier_scores(T, central)[outside]
    assert np.array_equal(np.argsort(a, kind="stable"), np.argsort(b, kind="stable"))


def test_even_median_is_not_rank_invariant():
    # medians of {1, 9} and {4, 4}: 5 > 4, but a cube root gives 1.54 < 1.59
    d = np.array([[0, 1, 9, 9], [1, 0, 9, 9], [9, 9, 0, 9], [9, 9, 9, 0.0]])
    e = np.array([[0, 4, 4, 9], [4, 0, 9, 9], [4, 9, 0, 9], [9, 9, 9, 0.0]])
    a = outlier_scores(d, [1, 2])[0], outlier_scores(e, [1, 2])[0]
    b = outlier_scores(np.cbrt(d), [1, 2])[0], outlier_scores(np.cbrt(e), [1, 2])[0]
    assert a[0] > a[1] and b[0] < b[1]


def test_central_set_excludes_outliers_on_gaussian():
    clean = 0
    for seed in range(20):
        d = gaussian_2d(1000, seed)
        g = gap_scores(fit_model(d, FitOptions("rf_uni", ForestParams(n_trees=200, seed=seed))),
                       d, isolated="zero")
        clean += not d.labels[g.central].any()
    assert clean >= 19


def test_scores_csv(tmp_path):
    write_scores_csv(np.array([0.5, np.inf]), tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text() == "row_index,score\n0,0.5\n1,inf\n"
