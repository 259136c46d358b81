"""Synthetic contrast data for training real-vs-synthetic discriminators.

Two generators:

* ``uniform`` -- every feature drawn independently and uniformly over the
  real data's per-feature bounds. Any feature whose distribution is not
  uniform becomes informative to the forest.
* ``marginal`` -- every feature resampled independently from its own observed
  values. Marginals survive, joint structure does not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gapforest._rng import substream
from gapforest.dataset import Dataset, FeatureBounds, feature_bounds
from gapforest.errors import DatasetError, SynthError

__all__ = ["SyntheticSpec", "gen_uniform", "gen_marginal", "generate", "mirror_missingness"]


@dataclass(frozen=True)
class SyntheticSpec:
    method: str
    count: int
    seed: int
    bounds: FeatureBounds | None = None
    mirror_missing: bool = False

    def __post_init__(self) -> None:
        if self.method not in ("uniform", "marginal"):
            raise SynthError(f"unknown synthetic method {self.method!r}")
        if self.count < 1:
            raise SynthError(f"synthetic count must be >= 1, got {self.count}")
        if (self.bounds is not None) != (self.method == "uniform"):
            raise SynthError("bounds are required for the uniform method and only for it")


def mirror_missingness(d: Dataset, synth: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Blank synthetic cells at each feature's observed missing rate."""
    rates = d.missing.mean(axis=0)
    if not rates.any():
        return synth
    mask = rng.random(synth.shape) < rates[np.newaxis, :]
    return np.where(mask, np.nan, synth)


def gen_uniform(d: Dataset, spec: SyntheticSpec) -> Dataset:
    if spec.method != "uniform":
        raise SynthError("gen_uniform needs a spec with method='uniform'")
    bounds = spec.bounds
    if bounds.lower.shape != (d.features,):
        raise SynthError(f"bounds cover {bounds.lower.shape[0]} features, data has {d.features}")
    rng = substream(spec.seed, "synth")
    width = bounds.upper - bounds.lower
    values = bounds.lower + rng.random((spec.count, d.features)) * width
    # Rounding in lower + u*width can land one ulp past upper.
    values = np.minimum(values, bounds.upper)
    if spec.mirror_missing:
        values = mirror_missingness(d, values, rng)
    return Dataset(values, None, d.feature_names)


def gen_marginal(d: Dataset, spec: SyntheticSpec) -> Dataset:
    if spec.method != "marginal":
        raise SynthError("gen_marginal needs a spec with method='marginal'")
    rng = substream(spec.seed, "synth")
    values = np.empty((spec.count, d.features))
    for k in range(d.features):
        observed = d.values[~np.isnan(d.values[:, k]), k]
        if observed.size == 0:
            raise DatasetError(f"feature {d.feature_names[k]!r} entirely missing")
        values[:, k] = observed[rng.integers(0, observed.size, size=spec.count)]
    if spec.mirror_missing:
        values = mirror_missingness(d, values, rng)
    return Dataset(values, None, d.feature_names)


def generate(
    d: Dataset,
    method: str,
    seed: int,
    ratio: float = 1.0,
    bounds_mode: str = "minmax",
    percentiles: tuple[float, float] = (1.0, 99.0),
    mirror_missing: bool | None = None,
) -> Dataset:
    """Build a spec from ``d`` and run the matching generator.

    ``ratio`` is synthetic rows per real row. ``mirror_missing`` defaults to
    on whenever ``d`` has missing cells.
    """
    count = max(1, int(round(ratio * d.rows)))
    if mirror_missing is None:
        mirror_missing = d.has_missing
    bounds = feature_bounds(d, bounds_mode, percentiles) if method == "uniform" else None
    spec = SyntheticSpec(method, count, seed, bounds, mirror_missing)
    return gen_uniform(d, spec) if method == "uniform" else gen_marginal(d, spec)
