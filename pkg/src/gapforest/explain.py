"""Counterfactual explanations for outlier scores.

A score field O over the rows is differentiated locally by least squares;
a trajectory then hops from row to row against the gradient; and each hop
is explained by the forest splits the segment between the two rows crosses.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from gapforest.dataset import Dataset
from gapforest.errors import ExplainError
from gapforest.forest import Forest, Partitions

logger = logging.getLogger(__name__)

COND_LIMIT = 1e10
REASONS = ("score_non_decreasing", "revisit", "max_steps")

__all__ = [
    "GradientField",
    "Trajectory",
    "ImportanceTally",
    "CounterfactualImportance",
    "default_k",
    "default_learning_rate",
    "estimate_gradients",
    "build_trajectory",
    "segment_intersections",
    "counterfactual_importance",
    "global_importance",
    "explanation_document",
    "write_explanation",
]


def _matrix(d: Dataset | np.ndarray) -> np.ndarray:
    X = d.values if isinstance(d, Dataset) else np.asarray(d, dtype=np.float64)
    if X.ndim != 2:
        raise ExplainError(f"expected a 2-D matrix, got shape {X.shape}")
    if np.isnan(X).any():
        raise ExplainError("explanations need complete data; impute missing cells first")
    return X


@dataclass(frozen=True, eq=False)
class GradientField:
    """Per-row score gradients.

    Attributes
    ----------
    gradients : (n, p) float64
    k : int
        Neighbourhood size used for every row.
    ill_conditioned : (n,) bool
        Normal matrix had condition number above 1e10 (or was singular) and
        was solved by pseudo-inverse.
    degenerate : (n,) bool
        All neighbours coincide with the row; gradient set to zero.
    infinite_score : (n,) bool
        The row's own score is infinite. Its gradient comes from a fit with
        a free intercept over finite-score neighbours.
    """

    gradients: np.ndarray
    k: int
    ill_conditioned: np.ndarray
    degenerate: np.ndarray
    infinite_score: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.gradients, axis=1)


def default_k(n: int, p: int) -> int:
    return max(1, min(3 * p, n // 10))


def estimate_gradients(d: Dataset | np.ndarray, scores: np.ndarray, k: int | None = None) -> GradientField:
    """Least-squares gradient of ``scores`` over each row's k nearest rows.

    For row i with neighbours N, solves ``A g = b`` where
    ``A = sum (x_j - x_i)(x_j - x_i)^T`` and ``b = sum (x_j - x_i)(O_j - O_i)``.
    The solve goes through an SVD, which yields the pseudo-inverse solution
    when A is rank deficient. Rows with infinite scores never serve as
    neighbours.
    """
    X = _matrix(d)
    n, p = X.shape
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (n,):
        raise ExplainError(f"{scores.size} scores for {n} rows")
    if np.isnan(scores).any():
        raise ExplainError("scores contain NaN")
    k = default_k(n, p) if k is None else int(k)
    finite = np.isfinite(scores)
    pool = np.flatnonzero(finite)
    if not 1 <= k < n:
        raise ExplainError(f"k must be in 1..{n - 1}, got {k}")
    if k > pool.size - 1:
        raise ExplainError(f"only {pool.size} rows have finite scores; k={k} is too large")
    if not finite.all():
        logger.warning("%d row(s) with infinite scores excluded from gradient neighbourhoods",
                       int((~finite).sum()))

    tree = cKDTree(X[pool])
    # one extra neighbour so a finite row can drop itself
    _, nbr = tree.query(X, k=k + 1)
    nbr = pool[nbr]

    grads = np.zeros((n, p))
    ill = np.zeros(n, dtype=bool)
    degenerate = np.zeros(n, dtype=bool)
    for i in range(n):
        row = nbr[i]
        row = row[row != i][:k]
        dX = X[row] - X[i]
        if not np.any(dX):
            degenerate[i] = True
            continue
        if finite[i]:
            design, target = dX, scores[row] - scores[i]
        else:
            design, target = np.hstack([np.ones((row.size, 1)), dX]), scores[row]
        coef, _, rank, sv = np.linalg.lstsq(design, target, rcond=None)
        if rank < design.shape[1] or (sv[0] / sv[-1]) ** 2 > COND_LIMIT:
            ill[i] = True
        grads[i] = coef if finite[i] else coef[1:]
    return GradientField(grads, k, ill, degenerate, ~finite)


def default_learning_rate(d: Dataset | np.ndarray, grads: GradientField) -> float:
    """Median nearest-neighbour distance over median non-zero gradient norm."""
    X = _matrix(d)
    dist, _ = cKDTree(X).query(X, k=2)
    nn = dist[:, 1]
    norms = grads.norms
    norms = norms[norms > 0]
    if not norms.size:
        raise ExplainError("every gradient is zero; no default learning rate")
    positive = nn[nn > 0]
    step = float(np.median(positive)) if positive.size else 1.0
    return step / float(np.median(norms))


@dataclass(frozen=True)
class Trajectory:
    indices: tuple[int, ...]
    scores: tuple[float, ...]
    learning_rate: float
    reason: str

    def __post_init__(self) -> None:
        if self.reason not in REASONS:
            raise ExplainError(f"unknown termination reason {self.reason!r}")
        if len(self.indices) != len(self.scores) or not self.indices:
            raise ExplainError("a trajectory needs one score per visited row")

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def steps(self) -> list[tuple[int, int]]:
        return list(zip(self.indices[:-1], self.indices[1:]))


def build_trajectory(
    d: Dataset | np.ndarray,
    scores: np.ndarray,
    grads: GradientField,
    start: int,
    learning_rate: float | None = None,
    max_steps: int = 100,
) -> Trajectory:
    """Walk down the score field from ``start``, one dataset row at a time.

    Each step targets ``x - |l| * grad(x)`` and moves to the nearest row
    other than the current one. The walk stops when that row was already
    visited (a cycle), before any step that would not lower the score, or
    after ``max_steps`` steps. A zero gradient stops the walk at once.
    """
    X = _matrix(d)
    n = X.shape[0]
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (n,) or grads.gradients.shape != X.shape:
        raise ExplainError("data, scores and gradients disagree in size")
    if not 0 <= start < n:
        raise ExplainError(f"start row {start} out of range 0..{n - 1}")
    if max_steps < 0:
        raise ExplainError("max_steps must be >= 0")
    l = default_learning_rate(X, grads) if learning_rate is None else float(learning_rate)
    if l == 0 or not np.isfinite(l):
        raise ExplainError(f"learning rate must be finite and non-zero, got {l}")
    l = abs(l)

    tree = cKDTree(X)
    path = [int(start)]
    visited = {int(start)}
    reason = "max_steps"
    while len(path) - 1 < max_steps:
        i = path[-1]
        g = grads.gradients[i]
        if not np.any(g):
            reason = "score_non_decreasing"
            break
        target = X[i] - l * g
        nxt = _nearest_other(tree, X, target, i)
        if nxt in visited:
            reason = "revisit"
            break
        if scores[nxt] >= scores[i]:
            reason = "score_non_decreasing"
            break
        path.append(nxt)
        visited.add(nxt)
    return Trajectory(tuple(path), tuple(float(scores[j]) for j in path), l, reason)


def _nearest_other(tree: cKDTree, X: np.ndarray, target: np.ndarray, exclude: int) -> int:
    """Nearest row to ``target`` other than ``exclude``; ties go to the lower index."""
    n = X.shape[0]
    k = min(n, 8)
    while True:
        dist, idx = tree.query(target, k=k)
        dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
        keep = idx != exclude
        dist, idx = dist[keep], idx[keep]
        # the k-th distance bounds what we have not seen; all ties must be in view
        if k == n or (dist.size and dist[0] < dist[-1]):
            best = dist[0]
            return int(idx[dist == best].min())
        k = min(n, 2 * k)


def segment_intersections(parts: Partitions, x_a: np.ndarray, x_b: np.ndarray,
                          chunk: int = 8192) -> np.ndarray:
    """Indices of the partitions met by the closed segment from ``x_a`` to ``x_b``.

    Boxes are closed, so touching a face counts. A dimension in which the
    segment does not move constrains nothing if the segment lies inside the
    box's interval there, and rules the box out otherwise.
    """
    x_a = np.asarray(x_a, dtype=np.float64)
    x_b = np.asarray(x_b, dtype=np.float64)
    p = parts.lower.shape[1] if parts.lower.ndim == 2 else x_a.size
    if x_a.shape != (p,) or x_b.shape != (p,):
        raise ExplainError(f"segment endpoints must have {p} coordinates")
    if not (np.isfinite(x_a).all() and np.isfinite(x_b).all()):
        raise ExplainError("segment endpoints must be finite")
    # a fixed endpoint order keeps the result symmetric under rounding
    if tuple(x_b) < tuple(x_a):
        x_a, x_b = x_b, x_a
    if len(parts) == 0:
        return np.zeros(0, dtype=np.int64)

    split_val = parts.lower[np.arange(len(parts)), parts.feature]
    seg_lo, seg_hi = np.minimum(x_a, x_b), np.maximum(x_a, x_b)
    cand = np.flatnonzero((seg_lo[parts.feature] <= split_val) & (split_val <= seg_hi[parts.feature]))

    direction = x_b - x_a
    moving = direction != 0
    still = ~moving
    hits = []
    for s in range(0, cand.size, chunk):
        c = cand[s:s + chunk]
        lower, upper = parts.lower[c], parts.upper[c]
        ok = np.all((lower[:, still] <= x_a[still]) & (x_a[still] <= upper[:, still]), axis=1)
        if moving.any():
            d = direction[moving]
            t1 = (lower[:, moving] - x_a[moving]) / d
            t2 = (upper[:, moving] - x_a[moving]) / d
            t_enter = np.maximum(np.minimum(t1, t2).max(axis=1), 0.0)
            t_exit = np.minimum(np.maximum(t1, t2).min(axis=1), 1.0)
            ok &= t_enter <= t_exit
        hits.append(c[ok])
    return np.concatenate(hits) if hits else np.zeros(0, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class ImportanceTally:
    """Per-feature counts of crossed splits, by direction of travel."""

    increase: np.ndarray
    decrease: np.ndarray

    @classmethod
    def zeros(cls, p: int) -> ImportanceTally:
        return cls(np.zeros(p, dtype=np.int64), np.zeros(p, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.increase.sum() + self.decrease.sum())

    def __add__(self, other: ImportanceTally) -> ImportanceTally:
        return ImportanceTally(self.increase + other.increase, self.decrease + other.decrease)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, ImportanceTally)
                and np.array_equal(self.increase, other.increase)
                and np.array_equal(self.decrease, other.decrease))

    def records(self, names: tuple[str, ...] | None = None) -> list[dict]:
        out = []
        for f in np.flatnonzero((self.increase > 0) | (self.decrease > 0)):
            rec = {"feature": int(f)}
            if names is not None:
                rec["name"] = names[f]
            rec["increase_count"] = int(self.increase[f])
            rec["decrease_count"] = int(self.decrease[f])
            out.append(rec)
        return out


def _tally(parts: Partitions, x_a: np.ndarray, x_b: np.ndarray) -> ImportanceTally:
    p = x_a.size
    hit = segment_intersections(parts, x_a, x_b)
    f = parts.feature[hit]
    up = x_b[f] > x_a[f]
    down = x_b[f] < x_a[f]
    return ImportanceTally(np.bincount(f[up], minlength=p).astype(np.int64),
                           np.bincount(f[down], minlength=p).astype(np.int64))


@dataclass(frozen=True, eq=False)
class CounterfactualImportance:
    per_step: list[ImportanceTally] = field(default_factory=list)
    integrated: ImportanceTally | None = None
    direct: ImportanceTally | None = None


def counterfactual_importance(traj: Trajectory, parts: Partitions,
                              d: Dataset | np.ndarray) -> CounterfactualImportance:
    """Tally the splits crossed by every step, their sum, and the direct first-to-last jump."""
    X = _matrix(d)
    if len(traj) < 2:
        raise ExplainError("a trajectory needs at least two rows to explain")
    steps = [_tally(parts, X[a], X[b]) for a, b in traj.steps]
    integrated = ImportanceTally.zeros(X.shape[1])
    for s in steps:
        integrated = integrated + s
    direct = _tally(parts, X[traj.indices[0]], X[traj.indices[-1]])
    return CounterfactualImportance(steps, integrated, direct)


def global_importance(forest: Forest) -> np.ndarray:
    """Number of internal nodes splitting on each feature, forest-wide."""
    f = forest.feature[forest.feature >= 0]
    return np.bincount(f, minlength=forest.n_features).astype(np.int64)


def _num(v: float) -> float | str:
    return "inf" if np.isinf(v) else float(v)


def explanation_document(
    traj: Trajectory,
    importance: CounterfactualImportance | None,
    global_counts: np.ndarray,
    feature_names: tuple[str, ...],
) -> dict:
    """Plain-data explanation; see the README for the field list."""
    steps = []
    if importance is not None:
        for (a, b), tally in zip(traj.steps, importance.per_step):
            steps.append({"from": a, "to": b, "tally": tally.records(feature_names)})
    return {
        "start": traj.indices[0],
        "trajectory": {
            "indices": list(traj.indices),
            "scores": [_num(s) for s in traj.scores],
            "learning_rate": traj.learning_rate,
            "termination": traj.reason,
        },
        "steps": steps,
        "integrated": importance.integrated.records(feature_names) if importance else [],
        "direct": importance.direct.records(feature_names) if importance else [],
        "global_importance": [int(c) for c in global_counts],
        "feature_names": list(feature_names),
    }


def write_explanation(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")
