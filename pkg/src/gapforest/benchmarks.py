"""Bundled benchmark data and the simulated Gaussian used for geometry checks.

Tabular sets (label 1 = anomaly):

* ``breastw`` -- 683 rows, 9 features, 35% malignant
* ``wbc`` -- 223 rows, 9 features, 10 malignant cases among unique benign ones
* ``wine`` -- 129 rows, 13 features, 10 class-0 wines among classes 1 and 2
* ``hepatitis`` -- 80 complete rows, 19 features, 13 deaths

``mnist_4_9`` holds the MNIST test-set images of digits 4 and 9 (978 nines,
980 fours, pixels 0..255). ``scripts/build_benchmark_data.py`` rebuilds all
of them.
"""

from __future__ import annotations

import gzip
from importlib import resources

import numpy as np

from gapforest._rng import substream
from gapforest.dataset import Dataset, load_csv
from gapforest.errors import DatasetError

TABULAR = ("breastw", "wbc", "wine", "hepatitis")

__all__ = ["TABULAR", "load_benchmark", "mnist_4_9", "gaussian_2d", "bundled"]


def load_benchmark(name: str) -> Dataset:
    if name not in TABULAR:
        raise DatasetError(f"unknown benchmark {name!r}; choose from {', '.join(TABULAR)}")
    with resources.as_file(resources.files("gapforest") / "data" / f"{name}.csv") as path:
        return load_csv(path, label_column="label")


def _mnist_table() -> tuple[np.ndarray, np.ndarray]:
    ref = resources.files("gapforest") / "data" / "mnist_4_9.csv.gz"
    with ref.open("rb") as raw, gzip.open(raw, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", skiprows=1)
    return table[:, :-1], table[:, -1].astype(int)


def mnist_4_9(seed: int, inlier_fraction: float = 0.9) -> Dataset:
    """Every digit-9 image plus enough random digit-4 images to make up the rest.

    With the default fraction this is 978 nines and 109 fours (label 1).
    """
    if not 0 < inlier_fraction < 1:
        raise DatasetError("inlier_fraction must be in (0, 1)")
    pixels, digits = _mnist_table()
    nines = np.flatnonzero(digits == 9)
    fours = np.flatnonzero(digits == 4)
    n_four = int(round(nines.size * (1 - inlier_fraction) / inlier_fraction))
    if n_four > fours.size:
        raise DatasetError(f"need {n_four} fours, only {fours.size} bundled")
    pick = np.sort(substream(seed, "subsample").choice(fours, size=n_four, replace=False))
    idx = np.concatenate([nines, pick])
    labels = (digits[idx] == 4).astype(np.int8)
    return Dataset(pixels[idx], labels, tuple(f"px{i}" for i in range(pixels.shape[1])))


def gaussian_2d(n: int = 1000, seed: int = 0, quantile: float = 90.0) -> Dataset:
    """Standard 2-D Gaussian; rows beyond the given percentile of radius are outliers."""
    if n < 2:
        raise DatasetError("need at least 2 rows")
    X = substream(seed, "synth", 1).normal(size=(n, 2))
    r = np.linalg.norm(X, axis=1)
    labels = (r > np.percentile(r, quantile)).astype(np.int8)
    return Dataset(X, labels, ("x0", "x1"))


def bundled(spec: str, seed: int | None) -> Dataset:
    """Resolve ``NAME`` from the ``bundled:NAME`` input syntax."""
    if spec in TABULAR:
        return load_benchmark(spec)
    if spec in ("mnist_4_9", "gaussian"):
        if seed is None:
            raise DatasetError(f"bundled:{spec} is sampled and needs --seed")
        return mnist_4_9(seed) if spec == "mnist_4_9" else gaussian_2d(1000, seed)
    raise DatasetError(
        f"unknown bundled dataset {spec!r}; choose from {', '.join(TABULAR)}, mnist_4_9, gaussian")
