import json
import zipfile

import numpy as np
import pytest

from gapforest.errors import ModelFormatError
from gapforest.forest import ForestParams, partitions
from gapforest.forest_io import load_forest, save_forest
from gapforest.gap import gap_proximity
from gapforest.pipeline import FitOptions, fit_model


@pytest.fixture(scope="module", params=["rf_uni", "extratrees"])
def forest(request, gauss200):
    return fit_model(gauss200, FitOptions(request.param, ForestParams(n_trees=25, seed=4)))


def test_round_trip_is_exact(forest, gauss200, tmp_path):
    save_forest(forest, tmp_path / "m.zip")
    back = load_forest(tmp_path / "m.zip")
    assert back.same_structure(forest)
    assert back.oob_accuracy == forest.oob_accuracy
    assert back.n_synth_rows == forest.n_synth_rows
    assert np.array_equal(gap_proximity(back, gauss200, isolated="zero"),
                          gap_proximity(forest, gauss200, isolated="zero"))
    assert np.array_equal(partitions(back).lower, partitions(forest).lower)
    save_forest(back, tmp_path / "again.zip")
    assert (tmp_path / "again.zip").read_bytes() == (tmp_path / "m.zip").read_bytes()


def rewrite(src, dst, header=None, drop=(), replace=None):
    with zipfile.ZipFile(src) as zin, zipfile.ZipFile(dst, "w") as zout:
        for name in zin.namelist():
            if name in drop:
                continue
            data = zin.read(name)
            if name == "header.json" and header is not None:
                h = json.loads(data)
                h.update(header)
                data = json.dumps(h).encode()
            if replace and name in replace:
                data = replace[name]
            zout.writestr(name, data)


@pytest.mark.parametrize("change, match", [
    (dict(header={"version": 99}), "version 99"),
    (dict(header={"format": "other"}), "not a"),
    (dict(header={"n_rows": 3}), "multiplicity"),
    (dict(header={"params": {"n_trees": 0}}), "inconsistent"),
    (dict(drop=("threshold.npy",)), "missing member"),
    (dict(drop=("header.json",)), "header"),
    (dict(replace={"oob.npy": b"junk"}), "unreadable array"),
])
def test_corrupt_models(forest, tmp_path, change, match):
    save_forest(forest, tmp_path / "m.zip")
    rewrite(tmp_path / "m.zip", tmp_path / "bad.zip", **change)
    with pytest.raises(ModelFormatError, match=match):
        load_forest(tmp_path / "bad.zip")


def test_not_a_zip(tmp_path):
    (tmp_path / "m.zip").write_text("hello")
    with pytest.raises(ModelFormatError, match="not a model file"):
        load_forest(tmp_path / "m.zip")
    with pytest.raises(ModelFormatError):
        load_forest(tmp_path / "absent.zip")


def test_oob_mask_checked(forest, tmp_path):
    import io
    save_forest(forest, tmp_path / "m.zip")
    flipped = np.packbits(~forest.oob, axis=1)
    buf = io.BytesIO()
    np.save(buf, flipped)
    rewrite(tmp_path / "m.zip", tmp_path / "bad.zip", replace={"oob.npy": buf.getvalue()})
    with pytest.raises(ModelFormatError, match="out-of-bag"):
        load_forest(tmp_path / "bad.zip")
