import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solrcmf.datamodel import (
    MatrixKey,
    ObservedMatrix,
    bicenter,
    build_collection,
    make_folds,
    normalize,
    preprocess,
    unnormalize,
)
from solrcmf.errors import (
    ConfigError,
    DimensionMismatch,
    DuplicateKey,
    EmptyRowOrColumn,
    SelfRelation,
    TooFewEntries,
    ZeroMatrix,
)

from conftest import collection_from_arrays


def test_matrix_key_roundtrip():
    key = MatrixKey(2, 5, 3)
    assert str(key) == "(2,5,3)"
    assert MatrixKey.parse("(2,5,3)") == key
    assert MatrixKey(1, 2) == (1, 2, 1)


def test_nan_marks_missing():
    x = np.array([[1.0, np.nan], [3.0, 4.0]])
    m = ObservedMatrix.from_array((1, 2), x)
    assert m.n_obs == 3
    np.testing.assert_array_equal(m.filled, [[1.0, 0.0], [3.0, 4.0]])
    assert m.observed_norm2() == pytest.approx(26.0)


def test_build_collection_validation(rng):
    good = {(1, 2): rng.standard_normal((3, 4))}
    data = collection_from_arrays(good, {1: 3, 2: 4})
    assert data.keys == [MatrixKey(1, 2, 1)]
    with pytest.raises(DimensionMismatch):
        collection_from_arrays(good, {1: 3, 2: 5})
    with pytest.raises(DimensionMismatch):
        collection_from_arrays(good, {1: 3})
    with pytest.raises(SelfRelation):
        collection_from_arrays({(1, 1): np.ones((3, 3))}, {1: 3})
    with pytest.raises(DuplicateKey):
        build_collection([(1, 3), (1, 3)], [])
    entry = ObservedMatrix.from_array((1, 2), np.ones((3, 4)))
    with pytest.raises(DuplicateKey):
        build_collection([(1, 3), (2, 4)], [entry, entry])


def test_config_errors_are_value_errors():
    assert issubclass(DimensionMismatch, ConfigError)
    assert issubclass(ConfigError, ValueError)
    assert ConfigError.exit_code == 2


def test_bicenter_full_matches_closed_form(rng):
    x = rng.standard_normal((6, 4)) + 3.0
    m, rows, cols = bicenter(ObservedMatrix.from_array((1, 2), x))
    n = x.shape
    closed = x - x.mean(1, keepdims=True) - x.mean(0, keepdims=True) + x.mean()
    np.testing.assert_allclose(m.values, closed, atol=1e-12)
    np.testing.assert_allclose(m.values + rows[:, None] + cols[None, :], x, atol=1e-12)


def test_bicenter_with_missing_entries(rng):
    x = rng.standard_normal((8, 7)) + 1.0
    x[rng.random(x.shape) < 0.2] = np.nan
    x[0, 0] = 1.0
    m, _, _ = bicenter(ObservedMatrix.from_array((1, 2), x))
    obs = np.where(m.mask, m.values, 0.0)
    np.testing.assert_allclose(obs.sum(1) / m.mask.sum(1), 0.0, atol=1e-8)
    np.testing.assert_allclose(obs.sum(0) / m.mask.sum(0), 0.0, atol=1e-8)


def test_bicenter_empty_row():
    x = np.ones((3, 3))
    x[1] = np.nan
    with pytest.raises(EmptyRowOrColumn):
        bicenter(ObservedMatrix.from_array((1, 2), x))


def test_normalize_and_inverse(rng):
    x = rng.standard_normal((5, 4))
    x[0, 1] = np.nan
    m = ObservedMatrix.from_array((1, 2), x)
    scaled, factor = normalize(m)
    assert np.sqrt(scaled.observed_norm2()) == pytest.approx(19 / 20)
    np.testing.assert_allclose(unnormalize(scaled, factor).values[m.mask], x[m.mask])
    with pytest.raises(ZeroMatrix):
        normalize(ObservedMatrix.from_array((1, 2), np.zeros((2, 2))))


def test_preprocess_records(rng):
    data = collection_from_arrays({(1, 2): rng.standard_normal((5, 4)) + 2}, {1: 5, 2: 4})
    out = preprocess(data)
    key = data.keys[0]
    assert out[key].observed_norm2() == pytest.approx(1.0)
    rec = out.preprocessing_log[key]
    restored = out[key].values / rec.scale + rec.row_means[:, None] + rec.col_means[None, :]
    np.testing.assert_allclose(restored, data[key].values)
    untouched = preprocess(data, center=False, scale=False)
    np.testing.assert_array_equal(untouched[key].values, data[key].values)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(0, 1000), st.integers(3, 9), st.integers(3, 9))
def test_folds_partition_observed_entries(K, seed, p, q):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((p, q))
    x[rng.random((p, q)) < 0.2] = np.nan
    data = collection_from_arrays({(1, 2): x}, {1: p, 2: q})
    key = data.keys[0]
    if data[key].n_obs < K:
        with pytest.raises(TooFewEntries):
            make_folds(data, K, seed)
        return
    folds = make_folds(data, K, seed)
    lab = folds.labels[key]
    assert np.all((lab == 0) == ~data[key].mask)
    counts = np.bincount(lab[data[key].mask], minlength=K + 1)[1:]
    assert counts.max() - counts.min() <= 1
    for f in range(1, K + 1):
        train = folds.training_masks(data, f)[key]
        assert not np.any(train & folds.held_out(key, f))


def test_folds_deterministic(rng):
    data = collection_from_arrays({(1, 2): rng.standard_normal((6, 5))}, {1: 6, 2: 5})
    a = make_folds(data, 3, 7).labels[data.keys[0]]
    b = make_folds(data, 3, 7).labels[data.keys[0]]
    np.testing.assert_array_equal(a, b)
    with pytest.raises(TooFewEntries):
        make_folds(data, 1, 0)
