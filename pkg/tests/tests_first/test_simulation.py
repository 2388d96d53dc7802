import pytest
import numpy as np

from vflsel.errors import ConfigError
from vflsel.regularization import group_norms
from vflsel.simulation import SyntheticSpec, SyntheticTask, generating_output, make_generating_system, synth_generate


def test_party_columns_and_partition():
    spec = SyntheticSpec(n_parties=2, significant=[3, 2], spurious=[1, 2], n_samples=10)
    assert spec.party_columns() == [[0, 1, 2, 3], [4, 5, 6, 7]]
    assert spec.partition().columns == spec.party_columns()
    assert spec.significant_counts() == [3, 2]
    assert SyntheticSpec(n_parties=3, significant=2, spurious=0).spurious_counts() == [0, 0, 0]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n_parties": 0},
        {"significant": [1, 2, 3]},
        {"significant": 0, "spurious": 0},
        {"noise_sigma": -1.0},
        {"label_flip": 0.7},
        {"n_samples": 0},
        {"hidden_sizes": [0]},
    ],
    ids=["no_parties", "count_mismatch", "empty_party", "negative_noise", "flip_too_large", "no_rows", "zero_width"],
)
def test_spec_validation(kwargs):
    with pytest.raises(ConfigError):
        SyntheticSpec(**kwargs)


def test_generating_system_zeroes_spurious_columns():
    spec = SyntheticSpec(n_parties=2, significant=3, spurious=2, n_samples=10)
    system = make_generating_system(spec)
    for party in system.parties:
        norms = group_norms(party.network)
        assert np.all(norms[:3] > 0)
        assert np.all(norms[3:] == 0.0)
    assert system.server.layer_sizes() == [8, 1]


def test_spurious_columns_do_not_move_the_output():
    spec = SyntheticSpec(n_parties=2, significant=3, spurious=2, n_samples=10)
    system = make_generating_system(spec)
    x = np.random.default_rng(0).normal(size=(6, 10))
    shifted = x.copy()
    shifted[:, [3, 4, 8, 9]] += 100.0
    assert np.allclose(generating_output(system, x), generating_output(system, shifted))
    assert "probe" not in system.labels


def test_regression_labels_without_noise_are_the_generating_output():
    spec = SyntheticSpec(n_parties=2, significant=2, spurious=1, n_samples=30, noise_sigma=0.0, seed=3)
    ds, system = synth_generate(spec)
    assert ds.features.shape == (30, 6)
    assert np.allclose(ds.labels, generating_output(system, ds.features))
    assert np.all(np.equal(ds.spurious_flags, [False, False, True, False, False, True]))
    assert ds.feature_names == ["p0_sig0", "p0_sig1", "p0_spur0", "p1_sig0", "p1_sig1", "p1_spur0"]


def test_generation_is_deterministic():
    spec = SyntheticSpec(n_samples=50, seed=4)
    a, _ = synth_generate(spec)
    b, _ = synth_generate(SyntheticSpec(n_samples=50, seed=4))
    assert np.all(np.equal(a.features, b.features))
    assert np.all(np.equal(a.labels, b.labels))
    c, _ = synth_generate(SyntheticSpec(n_samples=50, seed=5))
    assert not np.all(np.equal(a.features, c.features))


def test_classification_labels_are_roughly_balanced():
    spec = SyntheticSpec(n_samples=400, task="classification", noise_sigma=0.0, seed=1)
    ds, _ = synth_generate(spec)
    assert spec.task == SyntheticTask.CLASSIFICATION
    assert set(np.unique(ds.labels).tolist()) <= {0, 1}
    # threshold at the median of f
    assert np.sum(ds.labels) == 200


def test_label_flips():
    base, _ = synth_generate(SyntheticSpec(n_samples=400, task="classification", seed=1))
    flipped, _ = synth_generate(SyntheticSpec(n_samples=400, task="classification", seed=1, label_flip=0.5))
    changed = np.mean(base.labels != flipped.labels)
    assert 0.3 < changed < 0.7


def test_to_dict():
    out = SyntheticSpec(task="classification").to_dict()
    assert out["task"] == "classification"
    assert out["hidden_sizes"] == [8]
