"""Outlier scores from distance matrices, plus baselines and AUCROC.

Distances may contain +inf. Medians treat +inf as the largest value; the
mean of two middle values where one is +inf is +inf.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from gapforest.dataset import Dataset
from gapforest.errors import ScoreError

__all__ = [
    "row_medians",
    "central_set",
    "outlier_scores",
    "central_median_scores",
    "euclidean_distances",
    "knn_score",
    "auc_roc",
    "write_scores_csv",
]


def _square(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ScoreError(f"distance matrix must be square, got shape {d.shape}")
    return d


def _off_diagonal(d: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    return d[~np.eye(n, dtype=bool)].reshape(n, n - 1)


def row_medians(d: np.ndarray) -> np.ndarray:
    """Median distance from each row to every other row."""
    d = _square(d)
    if d.shape[0] < 2:
        raise ScoreError("need at least 2 rows")
    return np.median(_off_diagonal(d), axis=1)


def central_set(d: np.ndarray) -> np.ndarray:
    """Indices of the floor(n/2) rows with the lowest median distance to the rest.

    Ties at the cut go to the lower row index. Returned sorted ascending.
    """
    med = row_medians(d)
    keep = med.size // 2
    order = np.argsort(med, kind="stable")
    return np.sort(order[:keep])


def outlier_scores(d: np.ndarray, central: np.ndarray) -> np.ndarray:
    """Median distance from each row to the central rows, self excluded."""
    d = _square(d)
    central = np.unique(np.asarray(central, dtype=np.intp))
    if central.size == 0:
        raise ScoreError("central set is empty")
    n = d.shape[0]
    sub = d[:, central]
    is_central = np.zeros(n, dtype=bool)
    is_central[central] = True
    scores = np.empty(n)
    scores[~is_central] = np.median(sub[~is_central], axis=1) if (~is_central).any() else 0.0
    if central.size == 1:
        # dropping the lone central row's own column would leave nothing; keep it
        scores[central] = d[central[0], central[0]]
        return scores
    others = central[np.newaxis, :] != central[:, np.newaxis]
    scores[central] = np.median(sub[central][others].reshape(central.size, -1), axis=1)
    return scores


def central_median_scores(d: np.ndarray) -> np.ndarray:
    return outlier_scores(d, central_set(d))


def euclidean_distances(d: Dataset | np.ndarray) -> np.ndarray:
    X = d.values if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)
    if np.isnan(X).any():
        raise ScoreError("Euclidean distances need complete data; impute missing cells first")
    D = cdist(X, X)
    np.fill_diagonal(D, 0.0)
    return D


def knn_score(d: np.ndarray, k: int = 5) -> np.ndarray:
    """Distance from each row to its k-th nearest other row."""
    d = _square(d)
    n = d.shape[0]
    if not 1 <= k <= n - 1:
        raise ScoreError(f"k must be in 1..{n - 1}, got {k}")
    return np.partition(_off_diagonal(d), k - 1, axis=1)[:, k - 1]


def auc_roc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability that a random outlier outscores a random inlier (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ScoreError(f"{scores.size} scores for {labels.size} labels")
    if np.isnan(scores).any():
        raise ScoreError("scores contain NaN")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ScoreError("AUCROC needs both outliers and inliers")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def write_scores_csv(scores: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row_index,score\n")
        for i, s in enumerate(scores):
            fh.write(f"{i},{'inf' if np.isinf(s) else repr(float(s))}\n")
