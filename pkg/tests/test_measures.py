import numpy as np
import pytest

from batchot.measures import (AtomCloud, GaussianSource, PairBatch,
                              TargetMeasure, ValidationError, diam,
                              load_cloud, sample_batch, save_cloud, sep)


def test_cloud_rejects_duplicates():
    with pytest.raises(ValidationError):
        AtomCloud([[1.0, 2.0], [1.0, 2.0]])


def test_cloud_rejects_nonfinite():
    with pytest.raises(ValidationError):
        AtomCloud([[np.inf, 0.0]])


def test_sep_two_points():
    assert sep(AtomCloud([[-1.0], [1.0]])) == 2.0


def test_sep_three_points():
    cloud = AtomCloud([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    assert sep(cloud) == 1.0


def test_sep_singleton_error():
    with pytest.raises(ValidationError):
        sep(AtomCloud([[0.0]]))


def test_diam_trivial():
    assert diam(AtomCloud([[5.0, 1.0]])) == 0.0
    assert diam(AtomCloud([[-1.0], [1.0]])) == 2.0


def test_sep_diam_against_pair_scan(rng):
    atoms = rng.uniform(-1, 1, size=(7, 2))
    cloud = AtomCloud(atoms)
    dists = [np.linalg.norm(atoms[i] - atoms[j])
             for i in range(7) for j in range(i + 1, 7)]
    assert np.isclose(sep(cloud), min(dists))
    assert np.isclose(diam(cloud), max(dists))
    assert diam(cloud) >= sep(cloud) > 0


def test_weights_must_sum_to_one():
    cloud = AtomCloud([[0.0], [1.0]])
    with pytest.raises(ValidationError):
        TargetMeasure(cloud, np.array([0.5, 0.6]))
    with pytest.raises(ValidationError):
        TargetMeasure(cloud, np.array([-0.1, 1.1]))


def test_default_weights_uniform():
    t = TargetMeasure(AtomCloud([[0.0], [1.0], [2.0]]))
    assert np.allclose(t.weights, 1 / 3)
    assert t.uniform


def test_sample_batch_deterministic(key):
    src = GaussianSource(3)
    tgt = TargetMeasure(AtomCloud([[0.0] * 3, [1.0] * 3]))
    b1 = sample_batch(src, tgt, 5, key.child(1))
    b2 = sample_batch(src, tgt, 5, key.child(1))
    assert b1.xs.tobytes() == b2.xs.tobytes()
    assert np.array_equal(b1.ys, b2.ys)


def test_sample_batch_moments(key):
    src = GaussianSource(1)
    tgt = TargetMeasure(AtomCloud([[0.0]]))
    n = 100_000
    batch = sample_batch(src, tgt, n, key.child(2))
    x = batch.xs.ravel()
    assert abs(x.mean()) < 3.0 / np.sqrt(n)
    assert abs(x.var() - 1.0) < 0.05


def test_sample_batch_atom_frequencies(key):
    src = GaussianSource(2)
    tgt = TargetMeasure(AtomCloud(np.arange(10).reshape(5, 2).astype(float)))
    n = 100_000
    batch = sample_batch(src, tgt, n, key.child(3))
    freqs = np.bincount(batch.ys, minlength=5) / n
    tol = 3.0 * np.sqrt(0.2 * 0.8 / n)
    assert np.all(np.abs(freqs - 0.2) < tol)


def test_pair_batch_validation():
    with pytest.raises(ValidationError):
        PairBatch(np.zeros((3, 2)), np.zeros(4, dtype=int))


def test_cloud_io_roundtrip(tmp_path):
    tgt = TargetMeasure(AtomCloud([[0.5, -1.0], [2.0, 3.0]]), np.array([0.25, 0.75]))
    save_cloud(tgt, tmp_path / "atoms.txt", tmp_path / "weights.txt")
    back = load_cloud(tmp_path / "atoms.txt", tmp_path / "weights.txt")
    assert np.allclose(back.cloud.atoms, tgt.cloud.atoms)
    assert np.allclose(back.weights, tgt.weights)
