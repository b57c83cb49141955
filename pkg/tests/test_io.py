import json

import numpy as np
import pytest

from solrcmf import io as sio
from solrcmf.datamodel import MatrixKey
from solrcmf.errors import IoError, SchemaMismatch

from conftest import collection_from_arrays


def test_matrix_csv_roundtrip_with_missing(tmp_path, rng):
    x = rng.standard_normal((4, 3))
    x[1, 2] = np.nan
    sio.write_matrix_csv(tmp_path / "x.csv", x)
    y = sio.read_matrix_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(np.isnan(y), np.isnan(x))
    np.testing.assert_array_equal(y[~np.isnan(y)], x[~np.isnan(x)])


def test_single_row_matrix(tmp_path):
    sio.write_matrix_csv(tmp_path / "r.csv", np.array([[1.0, 2.0, 3.0]]))
    assert sio.read_matrix_csv(tmp_path / "r.csv").shape == (1, 3)


def test_manifest_roundtrip(tmp_path, rng):
    data = collection_from_arrays({(1, 2): rng.standard_normal((3, 4))}, {1: 3, 2: 4})
    path = sio.save_manifest(data, tmp_path / "d")
    back = sio.load_manifest(path)
    assert back.views == data.views
    np.testing.assert_array_equal(back[(1, 2, 1)].values, data[(1, 2, 1)].values)


def test_manifest_errors(tmp_path):
    with pytest.raises(IoError):
        sio.load_manifest(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(SchemaMismatch):
        sio.load_manifest(tmp_path / "bad.json")
    (tmp_path / "m.json").write_text(json.dumps({"views": [{"id": 1}]}))
    with pytest.raises(SchemaMismatch):
        sio.load_manifest(tmp_path / "m.json")


def test_json_nonfinite(tmp_path):
    sio.write_json(tmp_path / "a.json", {"x": np.inf, "y": np.float64(1.5), "z": np.arange(2)})
    back = sio.read_json(tmp_path / "a.json")
    assert back == {"x": "inf", "y": 1.5, "z": [0, 1]}
    assert sio.as_float(back["x"]) == np.inf


def test_truth_roundtrip(tmp_path, small_truth):
    sc = small_truth.scenario
    path = sio.save_truth(tmp_path, small_truth.V_truth, sc.D_truth, small_truth.sigma2, {MatrixKey(1, 2, 1): "M"})
    t = sio.load_truth(path)
    assert t.k == 4 and t.names[MatrixKey(1, 2, 1)] == "M"
    for v in small_truth.V_truth:
        np.testing.assert_array_equal(t.V[v], small_truth.V_truth[v])
    with pytest.raises(SchemaMismatch):
        sio.write_json(tmp_path / "x.json", {"format": "other"})
        sio.load_truth(tmp_path / "x.json")
