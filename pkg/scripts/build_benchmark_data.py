"""Rebuild the bundled benchmark CSVs from their upstream distributions.

The sandbox this project was built in could only reach package registries,
so the raw tables are pulled out of packages that ship them:

* ``rdatasets`` wheel -- MASS ``biopsy`` (UCI Breast Cancer Wisconsin, original)
* ``imbalanced_databases`` wheel -- UCI ``hepatitis.data``
* ``mnist`` npm tarball -- the 10,000 MNIST test digits as JSON, pixels in [0, 1]
* ``scikit-learn`` -- UCI Wine

Usage::

    pip download --no-deps rdatasets imbalanced_databases -d wheels/
    (cd wheels && npm pack mnist@1.1.0)
    python scripts/build_benchmark_data.py wheels/ src/gapforest/data/
"""

from __future__ import annotations

import glob
import gzip
import io
import json
import lzma
import pickle
import sys
import tarfile
import zipfile
from pathlib import Path

import numpy as np
import pandas as pd

SEED = 0


def _wheel(wheels: Path, prefix: str) -> zipfile.ZipFile:
    (path,) = glob.glob(str(wheels / f"{prefix}-*.whl"))
    return zipfile.ZipFile(path)


def _write(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.10g")
    print(f"{path.name}: {len(frame)} rows, {frame.shape[1] - 1} features, "
          f"{100 * frame['label'].mean():.2f}% outliers")


def breast_tables(wheels: Path) -> tuple[pd.DataFrame, pd.DataFrame]:
    z = _wheel(wheels, "rdatasets")
    biopsy = pickle.loads(lzma.decompress(z.read("rdatasets/_data/MASS/biopsy.pkl.compress")))
    biopsy = biopsy.dropna()
    feats = [f"V{i}" for i in range(1, 10)]
    names = ["clump_thickness", "cell_size", "cell_shape", "adhesion", "epithelial_size",
             "bare_nuclei", "bland_chromatin", "normal_nucleoli", "mitoses"]
    table = biopsy[feats].rename(columns=dict(zip(feats, names))).astype(float)
    table["label"] = (biopsy["class"] == "malignant").astype(int).to_numpy()
    breastw = table.reset_index(drop=True)

    # WBC: unique benign cases plus 10 unique malignant cases.
    benign = breastw[breastw.label == 0].drop_duplicates(subset=names)
    malignant = breastw[breastw.label == 1].drop_duplicates(subset=names)
    rng = np.random.default_rng(SEED)
    pick = np.sort(rng.choice(len(malignant), size=10, replace=False))
    wbc = pd.concat([benign, malignant.iloc[pick]]).reset_index(drop=True)
    return breastw, wbc


def wine_table() -> pd.DataFrame:
    from sklearn.datasets import load_wine

    bunch = load_wine()
    frame = pd.DataFrame(bunch.data, columns=bunch.feature_names)
    target = bunch.target
    rng = np.random.default_rng(SEED)
    first = np.flatnonzero(target == 0)
    keep = np.sort(np.concatenate([np.flatnonzero(target != 0),
                                   rng.choice(first, size=10, replace=False)]))
    frame = frame.iloc[keep].reset_index(drop=True)
    frame["label"] = (target[keep] == 0).astype(int)
    return frame


def hepatitis_table(wheels: Path) -> pd.DataFrame:
    z = _wheel(wheels, "imbalanced_databases")
    text = z.read("imbalanced_databases/data/hepatitis/hepatitis.data.txt").decode()
    cols = ["class", "age", "sex", "steroid", "antivirals", "fatigue", "malaise", "anorexia",
            "liver_big", "liver_firm", "spleen_palpable", "spiders", "ascites", "varices",
            "bilirubin", "alk_phosphate", "sgot", "albumin", "protime", "histology"]
    frame = pd.read_csv(io.StringIO(text), header=None, names=cols, na_values="?").dropna()
    frame["label"] = (frame.pop("class") == 1).astype(int)
    return frame.astype(float).astype({"label": int}).reset_index(drop=True)


def mnist_table(wheels: Path) -> pd.DataFrame:
    (path,) = glob.glob(str(wheels / "mnist-*.tgz"))
    frames = []
    with tarfile.open(path) as tar:
        for digit in (4, 9):
            doc = json.load(tar.extractfile(f"package/src/digits/{digit}.json"))
            px = np.rint(np.asarray(doc["data"], dtype=float).reshape(-1, 784) * 255).astype(int)
            frame = pd.DataFrame(px, columns=[f"px{i}" for i in range(784)])
            frame["digit"] = digit
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def main(wheels: str, out: str) -> None:
    wheels_dir, out_dir = Path(wheels), Path(out)
    breastw, wbc = breast_tables(wheels_dir)
    _write(breastw, out_dir / "breastw.csv")
    _write(wbc, out_dir / "wbc.csv")
    _write(wine_table(), out_dir / "wine.csv")
    _write(hepatitis_table(wheels_dir), out_dir / "hepatitis.csv")
    mnist = mnist_table(wheels_dir)
    with gzip.GzipFile(out_dir / "mnist_4_9.csv.gz", "wb", mtime=0) as fh:
        fh.write(mnist.to_csv(index=False).encode())
    print(f"mnist_4_9.csv.gz: {len(mnist)} images")


if __name__ == "__main__":
    main(*sys.argv[1:3])
