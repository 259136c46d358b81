"""GAP proximities and distances from a fitted forest.

For a real row i, only trees where i is out of bag vote. In such a tree i
lands in some leaf; its proximity to each real row j bagged in that leaf is
j's bootstrap multiplicity divided by the total real multiplicity in the
leaf. Averaging over the voting trees gives a row-stochastic matrix with a
zero diagonal.

A tree where i is out of bag but its leaf holds no bagged real rows (only
synthetic ones) has no real neighbour to distribute weight over. Such trees
are left out of i's voting set, which keeps every row summing to one.

A row with no voting tree at all is isolated: whenever it is out of bag the
forest walls it off from every real row. Adding trees rarely helps, since
the same boundary recurs. By default this raises; ``isolated="zero"`` gives
the row zero proximity instead, so its distances are infinite except where
another row counts it as a neighbour.
"""

from __future__ import annotations

import logging

import numpy as np
from numba import njit

from gapforest.dataset import Dataset
from gapforest.errors import ProximityError
from gapforest.forest import Forest, apply

logger = logging.getLogger(__name__)

MAX_ROWS = 10_000

__all__ = [
    "MAX_ROWS",
    "gap_proximity",
    "gap_distance",
    "voting_trees",
    "isolated_rows",
    "oob_predict_via_proximity",
    "direct_oob_vote",
    "clamp_infinite",
    "write_distance_csv",
    "write_distance_bin",
    "read_distance_bin",
]


@njit(cache=True)
def _leaf_groups(leaves_t, mult_t, n_nodes):
    """Bagged rows of every leaf in one tree (CSR layout) and per-leaf multiplicity sums."""
    n = leaves_t.size
    counts = np.zeros(n_nodes + 1, np.int64)
    msum = np.zeros(n_nodes)
    for i in range(n):
        if mult_t[i] > 0:
            counts[leaves_t[i] + 1] += 1
            msum[leaves_t[i]] += mult_t[i]
    for k in range(n_nodes):
        counts[k + 1] += counts[k]
    members = np.empty(counts[n_nodes], np.int64)
    fill = counts[:-1].copy()
    for i in range(n):
        if mult_t[i] > 0:
            members[fill[leaves_t[i]]] = i
            fill[leaves_t[i]] += 1
    return counts, members, msum


@njit(cache=True)
def _accumulate(leaves, mult, offsets, node_weight, P, S, weighted):
    """Sum per-tree proximity vectors into P (tree order fixed) and count voting trees in S.

    With ``weighted`` the per-tree vector of row i is additionally scaled by
    ``node_weight`` of i's leaf.
    """
    n, T = leaves.shape
    for t in range(T):
        n_nodes = offsets[t + 1] - offsets[t]
        counts, members, msum = _leaf_groups(leaves[:, t], mult[:, t], n_nodes)
        for i in range(n):
            if mult[i, t] != 0:
                continue
            leaf = leaves[i, t]
            total = msum[leaf]
            if total == 0:
                continue
            S[i] += 1
            scale = node_weight[offsets[t] + leaf] if weighted else 1.0
            for k in range(counts[leaf], counts[leaf + 1]):
                j = members[k]
                P[i, j] += scale * mult[j, t] / total


def _leaves_for_training_rows(forest: Forest, rows: Dataset | np.ndarray, threads: int) -> np.ndarray:
    values = rows.values if isinstance(rows, Dataset) else np.asarray(rows, dtype=float)
    if values.shape[0] != forest.n_rows:
        raise ProximityError(
            f"forest was fitted on {forest.n_rows} real rows, got {values.shape[0]}")
    if values.shape[0] > MAX_ROWS:
        raise ProximityError(f"dense proximities are limited to {MAX_ROWS} rows, got {values.shape[0]}")
    return apply(forest, values, threads)


def _sum_trees(forest: Forest, leaves: np.ndarray, node_weight: np.ndarray | None):
    n = forest.n_rows
    P = np.zeros((n, n))
    S = np.zeros(n, np.int64)
    weighted = node_weight is not None
    _accumulate(leaves, forest.multiplicities, forest.offsets,
                node_weight if weighted else np.zeros(1), P, S, weighted)
    return P, S


ISOLATED = ("raise", "zero")


def isolated_rows(S: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.asarray(S) == 0)


def _check_voting(S: np.ndarray) -> None:
    empty = isolated_rows(S)
    if empty.size:
        shown = ", ".join(map(str, empty[:10])) + (" ..." if empty.size > 10 else "")
        raise ProximityError(
            f"row(s) {shown} ({empty.size} total) are never out of bag in a leaf shared with "
            "bagged real rows; proximities are undefined. Fit more trees, or give such "
            "rows zero proximity (isolated='zero').")


def voting_trees(forest: Forest, rows: Dataset | np.ndarray, threads: int = 1) -> np.ndarray:
    """(n, T) bool: tree t votes for row i (i out of bag, leaf has bagged real rows)."""
    leaves = _leaves_for_training_rows(forest, rows, threads)
    mult = forest.multiplicities
    out = np.zeros(leaves.shape, dtype=bool)
    for t in range(forest.n_trees):
        msum = np.bincount(leaves[:, t], weights=mult[:, t],
                           minlength=int(forest.offsets[t + 1] - forest.offsets[t]))
        out[:, t] = (mult[:, t] == 0) & (msum[leaves[:, t]] > 0)
    return out


def gap_proximity(
    forest: Forest,
    rows: Dataset | np.ndarray,
    threads: int = 1,
    isolated: str = "raise",
) -> np.ndarray:
    """Dense (n, n) GAP proximity matrix over the forest's real training rows.

    Parameters
    ----------
    forest : Forest
    rows : Dataset or ndarray
        The real rows the forest was fitted on, in the same order.
    threads : int
    isolated : {"raise", "zero"}
        What to do with rows that have no voting tree.
    """
    if isolated not in ISOLATED:
        raise ProximityError(f"isolated must be one of {ISOLATED}, got {isolated!r}")
    leaves = _leaves_for_training_rows(forest, rows, threads)
    P, S = _sum_trees(forest, leaves, None)
    if isolated == "raise":
        _check_voting(S)
    else:
        empty = isolated_rows(S)
        if empty.size:
            logger.warning("%d isolated row(s) given zero proximity: %s",
                           empty.size, ", ".join(map(str, empty[:10])))
    P /= np.maximum(S, 1)[:, np.newaxis]
    return P


def gap_distance(p: np.ndarray) -> np.ndarray:
    """Inverse symmetrised proximity; +inf where the symmetrised proximity is 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ProximityError(f"proximity matrix must be square, got shape {p.shape}")
    if (p < 0).any():
        raise ProximityError("proximities must be nonnegative")
    sym = 0.5 * (p + p.T)
    with np.errstate(divide="ignore"):
        d = np.where(sym > 0, 1.0 / sym, np.inf)
    np.fill_diagonal(d, 0.0)
    return d


def direct_oob_vote(forest: Forest, rows: Dataset | np.ndarray, threads: int = 1,
                    skip_isolated: bool = False) -> np.ndarray:
    """Mean leaf real-fraction over the trees that vote for each row.

    Rows without a voting tree raise, or come back as NaN with ``skip_isolated``.
    """
    vote = voting_trees(forest, rows, threads)
    leaves = _leaves_for_training_rows(forest, rows, threads)
    frac = forest.leaf_real_fraction()[forest.offsets[:-1][np.newaxis, :] + leaves]
    counts = vote.sum(axis=1)
    if not skip_isolated:
        _check_voting(counts)
    with np.errstate(invalid="ignore"):
        return np.where(counts > 0, np.where(vote, frac, 0.0).sum(axis=1) / counts, np.nan)


def oob_predict_via_proximity(
    forest: Forest,
    p: np.ndarray,
    rows: Dataset | np.ndarray,
    leaf_labels: np.ndarray | None = None,
    threads: int = 1,
    skip_isolated: bool = False,
) -> np.ndarray:
    """Out-of-bag real-class probability rebuilt as a proximity-weighted sum.

    Every neighbour j of row i carries a label: the leaf label of the leaf it
    shares with i, averaged over the trees in which they share one with the
    same weights that make up ``p[i, j]``. The prediction is then
    ``sum_j p[i, j] * label[i, j]``.

    ``leaf_labels`` is a per-node value (default: the leaf's bagged real
    fraction). ``p`` must come from this forest and ``rows``; a mismatch
    raises. Rows without a voting tree raise unless ``skip_isolated``, which
    returns NaN for them.
    """
    if leaf_labels is None:
        leaf_labels = forest.leaf_real_fraction()
    leaf_labels = np.asarray(leaf_labels, dtype=np.float64)
    if leaf_labels.shape != forest.feature.shape:
        raise ProximityError("leaf_labels must hold one value per forest node")
    leaves = _leaves_for_training_rows(forest, rows, threads)
    P, S = _sum_trees(forest, leaves, None)
    if not skip_isolated:
        _check_voting(S)
    P /= np.maximum(S, 1)[:, np.newaxis]
    if p.shape != P.shape or np.abs(p - P).max() > 1e-12:
        raise ProximityError("proximity matrix was not computed from this forest and these rows")
    Q, _ = _sum_trees(forest, leaves, leaf_labels)
    Q /= np.maximum(S, 1)[:, np.newaxis]
    with np.errstate(invalid="ignore", divide="ignore"):
        pair_label = np.where(p > 0, Q / p, 0.0)
    return np.where(S > 0, (p * pair_label).sum(axis=1), np.nan)


def clamp_infinite(d: np.ndarray, factor: float = 10.0) -> tuple[np.ndarray, int]:
    """Replace +inf by ``factor`` times the largest finite entry; return (matrix, count)."""
    d = np.asarray(d, dtype=np.float64)
    inf = np.isinf(d)
    count = int(inf.sum())
    if not count:
        return d, 0
    finite = d[~inf]
    ceiling = factor * (finite.max() if finite.size and finite.max() > 0 else 1.0)
    logger.info("clamped %d infinite distance(s) to %.6g", count, ceiling)
    return np.where(inf, ceiling, d), count


def write_distance_csv(d: np.ndarray, path) -> None:
    """Row-major CSV, no header; +inf written as ``inf``."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in d:
            fh.write(",".join("inf" if np.isinf(v) else repr(float(v)) for v in row))
            fh.write("\n")


def write_distance_bin(d: np.ndarray, path) -> None:
    """Little-endian: uint64 row count, then n*n float64 values row-major."""
    d = np.asarray(d, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(np.uint64(d.shape[0]).astype("<u8").tobytes())
        fh.write(np.ascontiguousarray(d).tobytes())


def read_distance_bin(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise ProximityError(f"{path}: truncated distance file")
    n = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    if len(raw) != 8 + 8 * n * n:
        raise ProximityError(f"{path}: expected {8 + 8 * n * n} bytes for {n} rows, found {len(raw)}")
    return np.frombuffer(raw[8:], dtype="<f8").reshape(n, n).astype(np.float64)
