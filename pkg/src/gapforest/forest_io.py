"""Saving and loading fitted forests.

A model file is a zip archive with fixed member timestamps, so identical
forests give identical bytes:

* ``header.json`` -- format name and version, mode, parameters, feature
  names, root box and scalar fit results
* one ``.npy`` member per node array, plus ``multiplicities.npy``
* ``oob.npy`` -- the out-of-bag mask, bit-packed along trees

Node region corners are not stored; they follow exactly from the root box
and the thresholds (see ``forest.node_regions``).
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from gapforest.errors import ModelFormatError
from gapforest.forest import Forest, ForestParams

FORMAT = "gapforest-model"
VERSION = 1
_STAMP = (1980, 1, 1, 0, 0, 0)
_ARRAYS = ("offsets", "feature", "threshold", "left", "right", "missing_left", "depth",
           "n_real", "n_synth", "multiplicities", "root_lower", "root_upper")

__all__ = ["FORMAT", "VERSION", "save_forest", "load_forest"]


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_STAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_forest(forest: Forest, path: str | Path) -> None:
    p = forest.params
    header = {
        "format": FORMAT,
        "version": VERSION,
        "mode": forest.mode,
        "params": {"n_trees": p.n_trees, "min_leaf": p.min_leaf, "max_depth": p.max_depth,
                   "mtry": p.mtry, "seed": p.seed},
        "feature_names": list(forest.feature_names),
        "oob_accuracy": forest.oob_accuracy,
        "n_synth_rows": forest.n_synth_rows,
        "n_rows": forest.n_rows,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "header.json", json.dumps(header, indent=1).encode())
        for name in _ARRAYS:
            _member(zf, f"{name}.npy", _npy(getattr(forest, name)))
        _member(zf, "oob.npy", _npy(np.packbits(forest.oob, axis=1)))


def load_forest(path: str | Path) -> Forest:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ModelFormatError(f"{path}: not a model file ({exc})") from None
    with zf:
        names = set(zf.namelist())
        try:
            header = json.loads(zf.read("header.json"))
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"{path}: unreadable header ({exc})") from None
        if header.get("format") != FORMAT:
            raise ModelFormatError(f"{path}: not a {FORMAT} file")
        if header.get("version") != VERSION:
            raise ModelFormatError(
                f"{path}: format version {header.get('version')} is not supported (expected {VERSION})")
        missing = [n for n in (*_ARRAYS, "oob") if f"{n}.npy" not in names]
        if missing:
            raise ModelFormatError(f"{path}: missing member(s) {', '.join(missing)}")
        try:
            arrays = {n: np.load(io.BytesIO(zf.read(f"{n}.npy")), allow_pickle=False)
                      for n in _ARRAYS}
            packed = np.load(io.BytesIO(zf.read("oob.npy")), allow_pickle=False)
        except (ValueError, EOFError, OSError, zipfile.BadZipFile) as exc:
            raise ModelFormatError(f"{path}: unreadable array ({exc})") from None

    mult = arrays["multiplicities"]
    if mult.ndim != 2 or mult.shape[0] != header.get("n_rows"):
        raise ModelFormatError(f"{path}: multiplicity matrix does not match the header")
    oob = np.unpackbits(packed, axis=1, count=mult.shape[1]).astype(bool)
    if not np.array_equal(oob, mult == 0):
        raise ModelFormatError(f"{path}: out-of-bag mask disagrees with multiplicities")
    try:
        params = ForestParams(**header["params"])
        return Forest(header["mode"], params, tuple(header["feature_names"]),
                      oob_accuracy=header["oob_accuracy"], n_synth_rows=header["n_synth_rows"],
                      **arrays)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: inconsistent model ({exc})") from None
