"""Axis-aligned decision-tree ensembles for unsupervised similarity learning.

Two training modes:

* discriminator -- each tree separates a bootstrap of the real rows from an
  independent bootstrap of synthetic contrast rows with Gini splits
  (``uniform-discriminator`` or ``marginal-discriminator`` depending on how
  the contrast rows were made);
* completely random -- random feature, random threshold, no labels.

Only the real rows' bootstrap multiplicities are kept on the fitted forest;
they define the out-of-bag sets used for proximities.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, Sequence

import numpy as np

from gapforest import _kernels
from gapforest._rng import substream, subseed
from gapforest.dataset import Dataset
from gapforest.errors import ForestError

logger = logging.getLogger(__name__)

MODES = ("uniform-discriminator", "marginal-discriminator", "completely-random")

__all__ = [
    "auto_depth",
    "ForestParams",
    "Forest",
    "Hyperrectangle",
    "Partitions",
    "fit_discriminator",
    "fit_extratrees",
    "apply",
    "partitions",
    "node_regions",
]


@dataclass(frozen=True)
class ForestParams:
    """Training hyperparameters.

    ``min_leaf`` and ``mtry`` left as None take mode-dependent defaults at
    fit time: min_leaf 1 for discriminators and 5 for completely random
    trees; mtry ceil(sqrt(features)).

    ``max_depth="auto"`` resolves to ceil(log2(rows) / 2), so a balanced
    tree ends in leaves of about sqrt(rows) real rows. Fully grown trees
    leave most pairs of rows without a shared leaf in any tree, which makes
    their distance infinite and most median scores infinite with it.
    ``None`` grows trees without a depth limit.
    """

    n_trees: int = 500
    min_leaf: int | None = None
    max_depth: int | str | None = "auto"
    mtry: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ForestError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf is not None and self.min_leaf < 1:
            raise ForestError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if isinstance(self.max_depth, str):
            if self.max_depth != "auto":
                raise ForestError(f"max_depth must be an integer, None or 'auto', got {self.max_depth!r}")
        elif self.max_depth is not None and self.max_depth < 0:
            raise ForestError(f"max_depth must be >= 0, got {self.max_depth}")

    def resolved(self, features: int, discriminate: bool, rows: int) -> ForestParams:
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(features))
        if not 1 <= mtry <= features:
            raise ForestError(f"mtry must be in 1..{features}, got {mtry}")
        min_leaf = self.min_leaf if self.min_leaf is not None else (1 if discriminate else 5)
        max_depth = self.max_depth
        if max_depth == "auto":
            max_depth = auto_depth(rows)
        return replace(self, mtry=mtry, min_leaf=min_leaf, max_depth=max_depth)


def auto_depth(rows: int) -> int:
    return max(1, math.ceil(math.log2(max(rows, 2)) / 2))


@dataclass(frozen=True, eq=False)
class Forest:
    """A fitted ensemble. Node arrays of all trees are concatenated.

    Attributes
    ----------
    mode : str
        One of ``MODES``.
    params : ForestParams
        Fully resolved: min_leaf and mtry are set, max_depth is an int or None.
    feature_names : tuple of str
    offsets : (n_trees + 1,) int64
        Tree t owns global node slots ``offsets[t]:offsets[t+1]``.
    feature, threshold, left, right, missing_left, depth : per-node arrays
        ``feature == -1`` marks a leaf; child indices are tree-local.
        ``missing_left`` is the side taken by rows missing the split feature,
        i.e. the side that received most of the node's bagged rows.
    n_real, n_synth : per-node bagged weight of real and synthetic rows.
    multiplicities : (n_real_rows, n_trees) int32
        Bootstrap count of each real row in each tree.
    root_lower, root_upper : (features,) float64
        Bounding box of the combined training rows; the root region.
    oob_accuracy : float or None
        Out-of-bag real-vs-synthetic accuracy (discriminators only).
    """

    mode: str
    params: ForestParams
    feature_names: tuple[str, ...]
    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    missing_left: np.ndarray
    depth: np.ndarray
    n_real: np.ndarray
    n_synth: np.ndarray
    multiplicities: np.ndarray
    root_lower: np.ndarray
    root_upper: np.ndarray
    oob_accuracy: float | None = None
    n_synth_rows: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ForestError(f"unknown forest mode {self.mode!r}")
        for name in ("offsets", "feature", "threshold", "left", "right", "missing_left",
                     "depth", "n_real", "n_synth", "multiplicities", "root_lower", "root_upper"):
            getattr(self, name).flags.writeable = False

    @property
    def n_trees(self) -> int:
        return self.offsets.size - 1

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_rows(self) -> int:
        """Number of real training rows."""
        return self.multiplicities.shape[0]

    @property
    def oob(self) -> np.ndarray:
        """(n_rows, n_trees) bool, True where the real row is out of bag."""
        return self.multiplicities == 0

    def tree_slice(self, t: int) -> slice:
        return slice(int(self.offsets[t]), int(self.offsets[t + 1]))

    def internal_nodes(self) -> int:
        return int((self.feature >= 0).sum())

    def leaf_real_fraction(self) -> np.ndarray:
        """Per node: bagged real weight / total bagged weight (0 where empty)."""
        total = self.n_real + self.n_synth
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.n_real / total, 0.0)

    def apply(self, data: Dataset | np.ndarray, threads: int = 1) -> np.ndarray:
        return apply(self, data, threads)

    def same_structure(self, other: Forest) -> bool:
        arrays = ("offsets", "feature", "threshold", "left", "right", "missing_left",
                  "depth", "n_real", "n_synth", "multiplicities", "root_lower", "root_upper")
        return (
            self.mode == other.mode
            and self.params == other.params
            and self.feature_names == other.feature_names
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        )


def _as_matrix(data: Dataset | np.ndarray) -> np.ndarray:
    values = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if values.ndim != 2:
        raise ForestError(f"expected a 2-D matrix, got shape {values.shape}")
    return np.ascontiguousarray(values, dtype=np.float64)


def _bounding_box(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    observed = ~np.isnan(X)
    lower = np.min(np.where(observed, X, np.inf), axis=0)
    upper = np.max(np.where(observed, X, -np.inf), axis=0)
    empty = ~observed.any(axis=0)
    lower[empty] = upper[empty] = 0.0
    return lower, upper


def _grow_all(X, y, weights_for, discriminate, params, threads):
    max_depth = -1 if params.max_depth is None else params.max_depth

    def one(t: int):
        w = weights_for(t)
        seed = subseed(params.seed, "split", t) & 0xFFFFFFFF
        return _kernels.grow_tree(X, y, w, discriminate, float(params.min_leaf),
                                  max_depth, params.mtry, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(params.n_trees)))
    return [one(t) for t in range(params.n_trees)]


def _assemble(trees) -> dict[str, np.ndarray]:
    sizes = np.array([tr[0].size for tr in trees], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    keys = ("feature", "threshold", "left", "right", "missing_left", "depth", "n_real", "n_synth")
    return {"offsets": offsets,
            **{k: np.concatenate([tr[i] for tr in trees]) for i, k in enumerate(keys)}}


def _bootstrap(params: ForestParams, t: int, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    rng = substream(params.seed, "bootstrap", t)
    real = np.bincount(rng.integers(0, n, size=n), minlength=n)
    synth = np.bincount(rng.integers(0, m, size=m), minlength=m) if m else np.zeros(0, np.int64)
    return real, synth


def _check_oob_coverage(mult: np.ndarray) -> None:
    never = np.flatnonzero((mult > 0).all(axis=1))
    if never.size:
        logger.warning(
            "%d real row(s) are in bag in every tree (first: %s); proximities are undefined "
            "for them. Increase the number of trees.", never.size, never[:5].tolist())


def fit_discriminator(
    real: Dataset,
    synth: Dataset,
    params: ForestParams = ForestParams(),
    synthetic_method: str = "uniform",
    threads: int = 1,
) -> Forest:
    """Train trees to tell real rows (class 1) from synthetic rows (class 0).

    Every tree sees a bootstrap of the real rows and an independent
    bootstrap of the synthetic rows.
    """
    if real.rows == 0 or synth.rows == 0:
        raise ForestError("real and synthetic data must be non-empty")
    if real.feature_names != synth.feature_names:
        raise ForestError("real and synthetic data have different features")
    mode = {"uniform": "uniform-discriminator", "marginal": "marginal-discriminator"}.get(
        synthetic_method)
    if mode is None:
        raise ForestError(f"unknown synthetic method {synthetic_method!r}")
    params = params.resolved(real.features, discriminate=True, rows=real.rows)
    n, m = real.rows, synth.rows
    X = np.ascontiguousarray(np.vstack([real.values, synth.values]))
    y = np.concatenate([np.ones(n, np.int8), np.zeros(m, np.int8)])

    boots = [_bootstrap(params, t, n, m) for t in range(params.n_trees)]

    def weights_for(t):
        r, s = boots[t]
        return np.concatenate([r, s]).astype(np.float64)

    arrays = _assemble(_grow_all(X, y, weights_for, True, params, threads))
    mult = np.stack([b[0] for b in boots], axis=1).astype(np.int32)
    lower, upper = _bounding_box(X)
    forest = Forest(mode, params, real.feature_names, multiplicities=mult,
                    root_lower=lower, root_upper=upper, n_synth_rows=m, **arrays)

    synth_mult = np.stack([b[1] for b in boots], axis=1)
    acc = _oob_accuracy(forest, X, np.vstack([mult, synth_mult]) == 0, y, threads)
    forest = replace(forest, oob_accuracy=acc)
    _check_oob_coverage(mult)
    logger.info("fitted %s forest: %d trees, %d internal nodes, OOB accuracy %.4f",
                mode, params.n_trees, forest.internal_nodes(), acc)
    return forest


def _oob_accuracy(forest: Forest, X: np.ndarray, oob: np.ndarray, y: np.ndarray,
                  threads: int) -> float:
    leaves = apply(forest, X, threads)
    frac = forest.leaf_real_fraction()
    votes = frac[forest.offsets[:-1][np.newaxis, :] + leaves]
    counts = oob.sum(axis=1)
    ok = counts > 0
    prob = np.where(oob, votes, 0.0).sum(axis=1)[ok] / counts[ok]
    truth = y[ok] == 1
    correct = np.where(prob == 0.5, 0.5, ((prob > 0.5) == truth).astype(float))
    return float(correct.mean()) if correct.size else float("nan")


def fit_extratrees(d: Dataset, params: ForestParams = ForestParams(), threads: int = 1) -> Forest:
    """Completely random trees grown on bootstraps of ``d``."""
    if d.rows == 0:
        raise ForestError("cannot fit on an empty dataset")
    params = params.resolved(d.features, discriminate=False, rows=d.rows)
    n = d.rows
    X = np.ascontiguousarray(d.values)
    y = np.ones(n, np.int8)
    boots = [_bootstrap(params, t, n, 0)[0] for t in range(params.n_trees)]
    arrays = _assemble(
        _grow_all(X, y, lambda t: boots[t].astype(np.float64), False, params, threads))
    mult = np.stack(boots, axis=1).astype(np.int32)
    lower, upper = _bounding_box(X)
    _check_oob_coverage(mult)
    return Forest("completely-random", params, d.feature_names, multiplicities=mult,
                  root_lower=lower, root_upper=upper, **arrays)


def apply(forest: Forest, data: Dataset | np.ndarray, threads: int = 1) -> np.ndarray:
    """Tree-local leaf index for every (row, tree); shape (rows, n_trees)."""
    X = _as_matrix(data)
    if X.shape[1] != forest.n_features:
        raise ForestError(f"data has {X.shape[1]} features, forest was trained on {forest.n_features}")
    out = np.empty((X.shape[0], forest.n_trees), dtype=np.int32)
    args = (forest.offsets, forest.feature, forest.threshold, forest.left, forest.right,
            forest.missing_left)
    T = forest.n_trees
    if threads > 1 and T > 1:
        bounds = np.linspace(0, T, min(threads, T) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda k: _kernels.route(X, *args, bounds[k], bounds[k + 1], out),
                          range(len(bounds) - 1)))
    else:
        _kernels.route(X, *args, 0, T, out)
    return out


def node_regions(forest: Forest, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper corners of every node region of tree t, shape (nodes, features)."""
    sl = forest.tree_slice(t)
    feature, threshold = forest.feature[sl], forest.threshold[sl]
    left, right = forest.left[sl], forest.right[sl]
    n_nodes = feature.size
    lower = np.empty((n_nodes, forest.n_features))
    upper = np.empty((n_nodes, forest.n_features))
    lower[0], upper[0] = forest.root_lower, forest.root_upper
    # children always have larger indices than their parent
    for node in range(n_nodes):
        f = feature[node]
        if f < 0:
            continue
        lc, rc, thr = left[node], right[node], threshold[node]
        lower[lc], upper[lc] = lower[node], upper[node]
        lower[rc], upper[rc] = lower[node], upper[node]
        upper[lc, f] = min(thr, upper[node, f])
        lower[rc, f] = max(thr, lower[node, f])
    return lower, upper


@dataclass(frozen=True, eq=False)
class Hyperrectangle:
    """One split restricted to its node's region; degenerate in ``feature``."""

    lower: np.ndarray
    upper: np.ndarray
    feature: int
    tree: int
    node: int
    depth: int

    @property
    def threshold(self) -> float:
        return float(self.lower[self.feature])


@dataclass(frozen=True, eq=False)
class Partitions(Sequence[Hyperrectangle]):
    """Columnar store of every internal-node split across a forest.

    Row j is a box with ``lower[j, feature[j]] == upper[j, feature[j]]``.
    """

    lower: np.ndarray
    upper: np.ndarray
    feature: np.ndarray
    tree: np.ndarray
    node: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return self.feature.size

    def __getitem__(self, j):  # type: ignore[override]
        if isinstance(j, slice):
            return [self[i] for i in range(*j.indices(len(self)))]
        return Hyperrectangle(self.lower[j], self.upper[j], int(self.feature[j]),
                              int(self.tree[j]), int(self.node[j]), int(self.depth[j]))

    def __iter__(self) -> Iterator[Hyperrectangle]:
        return (self[j] for j in range(len(self)))

    def subset(self, mask_or_index: np.ndarray) -> Partitions:
        return Partitions(self.lower[mask_or_index], self.upper[mask_or_index],
                          self.feature[mask_or_index], self.tree[mask_or_index],
                          self.node[mask_or_index], self.depth[mask_or_index])

    @classmethod
    def from_boxes(cls, boxes: Sequence[Hyperrectangle]) -> Partitions:
        boxes = list(boxes)
        return cls(np.array([b.lower for b in boxes], dtype=float).reshape(len(boxes), -1),
                   np.array([b.upper for b in boxes], dtype=float).reshape(len(boxes), -1),
                   np.array([b.feature for b in boxes], dtype=np.int64),
                   np.array([b.tree for b in boxes], dtype=np.int64),
                   np.array([b.node for b in boxes], dtype=np.int64),
                   np.array([b.depth for b in boxes], dtype=np.int64))


def partitions(forest: Forest) -> Partitions:
    """One degenerate box per internal node, in (tree, node) order."""
    lowers, uppers, feats, trees, nodes, depths = [], [], [], [], [], []
    for t in range(forest.n_trees):
        lower, upper = node_regions(forest, t)
        sl = forest.tree_slice(t)
        internal = np.flatnonzero(forest.feature[sl] >= 0)
        f = forest.feature[sl][internal].astype(np.int64)
        thr = forest.threshold[sl][internal]
        lo, hi = lower[internal].copy(), upper[internal].copy()
        lo[np.arange(internal.size), f] = thr
        hi[np.arange(internal.size), f] = thr
        lowers.append(lo)
        uppers.append(hi)
        feats.append(f)
        trees.append(np.full(internal.size, t, dtype=np.int64))
        nodes.append(internal.astype(np.int64))
        depths.append(forest.depth[sl][internal].astype(np.int64))
    p = forest.n_features
    cat = lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape)  # noqa: E731
    return Partitions(cat(lowers, (0, p)), cat(uppers, (0, p)), cat(feats, 0).astype(np.int64),
                      cat(trees, 0).astype(np.int64), cat(nodes, 0).astype(np.int64),
                      cat(depths, 0).astype(np.int64))
