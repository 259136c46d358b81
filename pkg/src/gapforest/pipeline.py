"""Fit-then-score plumbing shared by the command line and the test suites."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gapforest.dataset import Dataset, impute_mean
from gapforest.errors import DatasetError, ForestError
from gapforest.forest import Forest, ForestParams, fit_discriminator, fit_extratrees
from gapforest.gap import gap_distance, gap_proximity
from gapforest.score import central_set, outlier_scores
from gapforest.synth import generate

MODES = {"rf_uni": "uniform", "rf_marginal": "marginal", "extratrees": None}
MISSING = ("impute", "native")

__all__ = ["MODES", "MISSING", "FitOptions", "prepare", "fit_model", "GapScores", "gap_scores"]


@dataclass(frozen=True)
class FitOptions:
    mode: str = "rf_uni"
    params: ForestParams = ForestParams()
    synth_ratio: float = 1.0
    bounds: str = "minmax"
    percentiles: tuple[float, float] = (1.0, 99.0)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ForestError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if not self.synth_ratio > 0:
            raise ForestError(f"synthetic ratio must be positive, got {self.synth_ratio}")


def prepare(d: Dataset, missing: str) -> Dataset:
    """Apply the missing-data policy: mean imputation, or leave cells missing."""
    if missing not in MISSING:
        raise DatasetError(f"missing-data policy must be one of {MISSING}, got {missing!r}")
    return impute_mean(d) if missing == "impute" and d.has_missing else d


def fit_model(d: Dataset, options: FitOptions, threads: int = 1) -> Forest:
    method = MODES[options.mode]
    if method is None:
        return fit_extratrees(d, options.params, threads)
    synth = generate(d, method, options.params.seed, options.synth_ratio,
                     options.bounds, options.percentiles)
    return fit_discriminator(d, synth, options.params, method, threads)


@dataclass(frozen=True, eq=False)
class GapScores:
    distances: np.ndarray
    central: np.ndarray
    scores: np.ndarray


def gap_scores(forest: Forest, d: Dataset, threads: int = 1, isolated: str = "raise") -> GapScores:
    """GAP distances over the training rows, the central half, and median scores."""
    D = gap_distance(gap_proximity(forest, d, threads, isolated))
    central = central_set(D)
    return GapScores(D, central, outlier_scores(D, central))
