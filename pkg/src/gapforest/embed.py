"""Classical MDS (principal coordinates), stress, rank correlation and
distance histograms for comparing distance matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import spearmanr

from gapforest.errors import EmbedError
from gapforest.gap import clamp_infinite

logger = logging.getLogger(__name__)

MAX_DIMS = 10

__all__ = [
    "MAX_DIMS",
    "Embedding",
    "classical_mds",
    "stress",
    "stress_curve",
    "spearman_rho",
    "HistogramSummary",
    "histogram_summary",
    "prepare_distances",
]


@dataclass(frozen=True, eq=False)
class Embedding:
    """Coordinates plus the full eigenvalue spectrum (descending) they came from."""

    coords: np.ndarray
    eigenvalues: np.ndarray
    stress_by_dims: dict[int, float] = field(default_factory=dict)

    @property
    def dims(self) -> int:
        return self.coords.shape[1]


def _symmetric(d: np.ndarray) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise EmbedError(f"distance matrix must be square, got shape {d.shape}")
    if not np.isfinite(d).all():
        raise EmbedError("distance matrix has non-finite entries; clamp infinities first")
    scale = max(1.0, float(np.abs(d).max()))
    if np.abs(d - d.T).max() > 1e-12 * scale:
        raise EmbedError("distance matrix is not symmetric")
    return 0.5 * (d + d.T)


def prepare_distances(d: np.ndarray, factor: float = 10.0) -> tuple[np.ndarray, int]:
    """Clamp +inf entries so the matrix can be embedded; returns (matrix, clamped count)."""
    return clamp_infinite(d, factor)


def _spectrum(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = d.shape[0]
    sq = d * d
    # -1/2 J D^2 J without forming J
    B = -0.5 * (sq - sq.mean(axis=0, keepdims=True) - sq.mean(axis=1, keepdims=True) + sq.mean())
    vals, vecs = np.linalg.eigh(B)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # fix eigenvector signs so output does not depend on LAPACK internals
    flip = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(n)] < 0
    vecs[:, flip] *= -1
    return vals, vecs


def _coords(vals: np.ndarray, vecs: np.ndarray, dims: int) -> np.ndarray:
    return vecs[:, :dims] * np.sqrt(np.clip(vals[:dims], 0.0, None))


def classical_mds(d: np.ndarray, dims: int = 2) -> Embedding:
    """Principal coordinates of a finite symmetric distance matrix.

    Negative eigenvalues are kept in ``eigenvalues`` but contribute zero
    coordinates. ``stress_by_dims`` covers 1..min(10, n-1).
    """
    d = _symmetric(d)
    n = d.shape[0]
    top = min(MAX_DIMS, n - 1)
    if not 1 <= dims <= top:
        raise EmbedError(f"dims must be in 1..{top}, got {dims}")
    vals, vecs = _spectrum(d)
    curve = {k: _stress(d, _coords(vals, vecs, k)) for k in range(1, top + 1)}
    return Embedding(_coords(vals, vecs, dims), vals, curve)


def _stress(d: np.ndarray, coords: np.ndarray) -> float:
    iu = np.triu_indices(d.shape[0], 1)
    target = d[iu]
    denom = float((target ** 2).sum())
    if denom == 0.0:
        raise EmbedError("stress is undefined for an all-zero distance matrix")
    return float(np.sqrt(((target - pdist(coords)) ** 2).sum() / denom))


def stress(d: np.ndarray, e: Embedding | np.ndarray) -> float:
    """Kruskal stress-1 of an embedding against the distances it represents."""
    d = _symmetric(d)
    coords = e.coords if isinstance(e, Embedding) else np.asarray(e, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] != d.shape[0]:
        raise EmbedError(f"{coords.shape[0]} embedded points for {d.shape[0]} distances")
    return _stress(d, coords)


def stress_curve(d: np.ndarray) -> dict[int, float]:
    return classical_mds(d, 1).stress_by_dims


def spearman_rho(d1: np.ndarray, d2: np.ndarray) -> float:
    """Spearman correlation between the upper triangles of two distance matrices.

    Infinite entries rank above every finite one and tie with each other.
    """
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.shape != d2.shape or d1.ndim != 2 or d1.shape[0] != d1.shape[1]:
        raise EmbedError(f"matrices must be square and equal in size, got {d1.shape} and {d2.shape}")
    iu = np.triu_indices(d1.shape[0], 1)
    a, b = d1[iu], d2[iu]
    if a.size < 2 or np.all(a == a[0]) or np.all(b == b[0]):
        raise EmbedError("rank correlation is undefined for a constant triangle")
    return float(spearmanr(a, b)[0])


@dataclass(frozen=True)
class HistogramSummary:
    """Inlier-inlier vs outlier-to-all distance distributions.

    ``edges``/``inlier_counts``/``outlier_counts`` histogram the finite
    distances on shared bins; infinite distances are counted separately.
    """

    inlier_median: float
    outlier_median: float
    ratio: float
    edges: np.ndarray
    inlier_counts: np.ndarray
    outlier_counts: np.ndarray
    inlier_infinite: int
    outlier_infinite: int


def histogram_summary(d: np.ndarray, labels: np.ndarray, bins: int = 50) -> HistogramSummary:
    d = np.asarray(d, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (d.shape[0],):
        raise EmbedError(f"{labels.size} labels for {d.shape[0]} rows")
    out = labels == 1
    if not out.any() or out.all():
        raise EmbedError("need both inliers and outliers")
    inl = np.flatnonzero(~out)
    iu = np.triu_indices(inl.size, 1)
    inlier = d[np.ix_(inl, inl)][iu]
    # distances from each outlier to every other row
    rows = np.flatnonzero(out)
    mask = np.ones((rows.size, d.shape[0]), dtype=bool)
    mask[np.arange(rows.size), rows] = False
    outlier = d[rows][mask]
    finite = np.concatenate([inlier[np.isfinite(inlier)], outlier[np.isfinite(outlier)]])
    edges = np.histogram_bin_edges(finite if finite.size else np.zeros(1), bins=bins)
    med_in = float(np.median(inlier))
    med_out = float(np.median(outlier))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = med_out / med_in if med_in > 0 else np.inf
    return HistogramSummary(
        med_in, med_out, float(ratio), edges,
        np.histogram(inlier[np.isfinite(inlier)], edges)[0],
        np.histogram(outlier[np.isfinite(outlier)], edges)[0],
        int(np.isinf(inlier).sum()), int(np.isinf(outlier).sum()),
    )
