import pytest
import numpy as np

from vflsel.datasets import (
    PartitionScheme,
    PartitionSpec,
    TabularDataset,
    inject_spurious,
    inject_spurious_per_party,
    load_csv,
    partition,
    reassemble,
    save_csv,
    split,
    standardize,
)
from vflsel.errors import ConfigError, DataError, ShapeError


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def _dataset(n=20, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return TabularDataset(features=rng.normal(size=(n, d)), labels=rng.integers(0, 2, size=n))


def test_load_csv_by_name(tmp_path):
    path = _write(tmp_path, "a,label,b\n1.5,0,2\n-3,1,4e-1\n")
    ds = load_csv(path, "label")
    assert ds.feature_names == ["a", "b"]
    assert np.allclose(ds.features, [[1.5, 2.0], [-3.0, 0.4]])
    assert ds.labels.dtype == np.int64
    assert np.all(np.equal(ds.labels, [0, 1]))
    assert not np.any(ds.spurious_flags)


def test_load_csv_without_header(tmp_path):
    path = _write(tmp_path, "1,2,0.5\n3,4,1.5\n")
    ds = load_csv(path, 2, has_header=False)
    assert ds.feature_names == ["x0", "x1"]
    assert np.allclose(ds.labels, [0.5, 1.5])


@pytest.mark.parametrize(
    "text, label, match",
    [
        ("a,label\n1,0\n2,1,5\n", "label", "Ragged"),
        ("a,b,label\n1,2,0\n3,1\n", "label", "line 3"),
        ("a,label\n1,0\nfoo,1\n", "label", "Non-numeric cell 'foo'.*line 3, column a"),
        ("a,label\n1,0\n", "target", "Unknown label column"),
        ("", "label", "empty"),
        ("a,label\n", "label", "no data rows"),
    ],
    ids=["long_row", "short_row", "non_numeric", "unknown_label", "empty_file", "header_only"],
)
def test_load_csv_errors(tmp_path, text, label, match):
    path = _write(tmp_path, text)
    with pytest.raises(DataError, match=match):
        load_csv(path, label)


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_csv(str(tmp_path / "nope.csv"), "label")


def test_save_then_load_is_exact(tmp_path):
    ds = _dataset()
    path = str(tmp_path / "out.csv")
    save_csv(ds, path)
    again = load_csv(path, "label")
    assert np.all(np.equal(again.features, ds.features))
    assert np.all(np.equal(again.labels, ds.labels))
    assert again.feature_names == ds.feature_names


def test_dataset_validation():
    with pytest.raises(ShapeError):
        TabularDataset(features=np.zeros((3, 2)), labels=np.zeros(2))
    with pytest.raises(ShapeError):
        TabularDataset(features=np.zeros((3, 2)), labels=np.zeros(3), feature_names=["a"])
    with pytest.raises(DataError):
        TabularDataset(features=np.array([[np.nan, 1.0]]), labels=np.zeros(1))


def test_inject_spurious():
    ds = _dataset(d=5)
    out = inject_spurious(ds, 0.5, seed=1)
    assert out.n_features == 7
    assert np.all(np.equal(out.features[:, :5], ds.features))
    assert np.all(np.equal(out.spurious_flags, [False] * 5 + [True] * 2))
    assert out.feature_names[-2:] == ["noise5", "noise6"]
    assert inject_spurious(ds, 0.1, seed=1) is ds
    with pytest.raises(ConfigError):
        inject_spurious(ds, -0.5)
    again = inject_spurious(ds, 0.5, seed=1)
    assert np.all(np.equal(again.features, out.features))


def test_even_contiguous_partition():
    spec = PartitionSpec.even_contiguous(5, 2)
    assert spec.columns == [[0, 1, 2], [3, 4]]
    assert spec.scheme == PartitionScheme.EVEN_CONTIGUOUS
    flags = np.array([False] * 4 + [True] * 2)
    spec = PartitionSpec.even_contiguous(6, 2, flags=flags)
    assert spec.columns == [[0, 1, 4], [2, 3, 5]]


@pytest.mark.parametrize(
    "columns, match",
    [
        ([[0, 1], [1, 2]], "more than one party"),
        ([[0], [2]], "not assigned"),
        ([[0, 1, 2], []], "no columns"),
        ([[0, 1], [2, 3]], "outside"),
    ],
    ids=["overlap", "uncovered", "empty_party", "out_of_range"],
)
def test_explicit_partition_errors(columns, match):
    with pytest.raises(ConfigError, match=match):
        PartitionSpec.explicit(columns, 3)


def test_partition_then_reassemble():
    ds = _dataset(d=5)
    spec = PartitionSpec.explicit([[4, 0], [1, 3, 2]], 5)
    shards, columns = partition(ds, spec)
    assert shards[0].shape == (20, 2)
    assert np.all(np.equal(shards[0][:, 0], ds.features[:, 4]))
    assert np.all(np.equal(reassemble(shards, columns), ds.features))


def test_inject_spurious_per_party():
    ds = _dataset(d=4)
    spec = PartitionSpec.explicit([[0, 1], [2, 3]], 4)
    out, new_spec = inject_spurious_per_party(ds, spec, [1.0, 0.5], seed=0)
    assert out.n_features == 7
    assert new_spec.columns == [[0, 1, 4, 5], [2, 3, 6]]
    assert np.all(out.spurious_flags[4:])
    with pytest.raises(ConfigError):
        inject_spurious_per_party(ds, spec, [1.0], seed=0)


def test_split_is_seeded_and_disjoint():
    ds = TabularDataset(features=np.arange(20, dtype=float).reshape(10, 2), labels=np.arange(10))
    train, test = split(ds, 0.8, seed=4)
    assert train.n_samples == 8
    assert test.n_samples == 2
    assert set(train.labels.tolist()).isdisjoint(test.labels.tolist())
    # rows move together with their labels
    assert np.all(np.equal(train.features[:, 0], 2 * train.labels))
    again, _ = split(ds, 0.8, seed=4)
    assert np.all(np.equal(again.labels, train.labels))
    with pytest.raises(ConfigError):
        split(ds, 1.0)


def test_standardize_uses_training_statistics():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(3.0, 2.0, size=(50, 2)), np.ones((50, 1)), rng.normal(size=(50, 1))], axis=1)
    ds = TabularDataset(features=x, labels=np.zeros(50), spurious_flags=[False, False, False, True])
    train, test = split(ds, 0.8, seed=0)
    s_train, s_test = standardize(train, test)
    assert np.allclose(s_train.features[:, :2].mean(axis=0), 0.0)
    assert np.allclose(s_train.features[:, :2].std(axis=0), 1.0)
    # constant column: centred, not divided by zero
    assert np.all(s_train.features[:, 2] == 0.0)
    # flagged column untouched
    assert np.all(np.equal(s_test.features[:, 3], test.features[:, 3]))
    expected = (test.features[:, 0] - train.features[:, 0].mean()) / train.features[:, 0].std()
    assert np.allclose(s_test.features[:, 0], expected)
