import numpy as np
import pytest
import torch

from gesturegen import fgd
from gesturegen.errors import CorpusError, InvalidInputError, ShapeError
from gesturegen.fgd import (
    ConvAutoencoder,
    ExtractorConfig,
    GaussianStats,
    GestureFeatureExtractor,
    extract_features,
    frechet_distance,
    gaussian_stats,
    mae_accel,
    maej,
    train_feature_extractor,
)


def random_extractor(seed=0, latent=32):
    torch.manual_seed(seed)
    cfg = ExtractorConfig(latent_dim=latent)
    module = ConvAutoencoder(cfg)
    module.eval()
    return GestureFeatureExtractor(module, cfg, f"rand{seed}")


def unit_windows(rng, n, t=34):
    v = rng.normal(size=(n, t, 9, 3))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v.reshape(n, t, 27).astype(np.float32)


def test_gaussian_stats_two_points():
    stats = gaussian_stats(np.array([[0.0, 0.0], [2.0, 0.0]]))
    assert np.allclose(stats.mean, [1.0, 0.0])
    assert np.allclose(stats.covariance, [[2.0, 0.0], [0.0, 0.0]])


def test_gaussian_stats_identical_rows():
    stats = gaussian_stats(np.tile([3.0, -1.0], (5, 1)))
    assert np.allclose(stats.covariance, 0.0)


def test_gaussian_stats_standard_normal(rng):
    x = rng.standard_normal((1000, 4))
    stats = gaussian_stats(x)
    assert np.abs(stats.mean).max() < 0.1
    assert np.abs(np.diag(stats.covariance) - 1.0).max() < 0.15


def test_gaussian_stats_matches_two_pass(rng):
    x = rng.normal(size=(7, 3))
    stats = gaussian_stats(x)
    mean = x.sum(axis=0) / 7
    cov = np.zeros((3, 3))
    for row in x:
        d = row - mean
        cov += np.outer(d, d)
    cov /= 6
    assert np.allclose(stats.mean, mean)
    assert np.allclose(stats.covariance, cov)


def test_gaussian_stats_needs_two_rows():
    with pytest.raises(InvalidInputError):
        gaussian_stats(np.zeros((1, 4)))


def test_frechet_identity(rng):
    x = rng.normal(size=(50, 6))
    s = gaussian_stats(x)
    assert frechet_distance(s, s) <= 1e-6


def test_frechet_one_dim_case():
    a = GaussianStats(np.zeros(1), np.eye(1))
    b = GaussianStats(np.ones(1), np.eye(1))
    assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-6)


def test_frechet_two_dim_case():
    a = GaussianStats(np.zeros(2), np.eye(2))
    b = GaussianStats(np.zeros(2), 4.0 * np.eye(2))
    assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-6)


def test_frechet_symmetric(rng):
    for _ in range(10):
        x = rng.normal(size=(40, 5))
        y = rng.normal(size=(40, 5)) * 2 + 1
        a, b = gaussian_stats(x), gaussian_stats(y)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-6)


def test_frechet_diagonal_closed_form(rng):
    for _ in range(25):
        d = 4
        mu_a, mu_b = rng.normal(size=d), rng.normal(size=d)
        va, vb = rng.uniform(0.1, 3.0, d), rng.uniform(0.1, 3.0, d)
        a = GaussianStats(mu_a, np.diag(va))
        b = GaussianStats(mu_b, np.diag(vb))
        expected = float(np.sum((mu_a - mu_b) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2))
        assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-6)


def test_frechet_dimension_mismatch():
    a = GaussianStats(np.zeros(2), np.eye(2))
    b = GaussianStats(np.zeros(3), np.eye(3))
    with pytest.raises(ShapeError):
        frechet_distance(a, b)


def test_extract_features_shapes(rng):
    ext = random_extractor()
    w = unit_windows(rng, 3)
    feats = extract_features(w, ext)
    assert feats.shape == (3, 32)
    one = extract_features(w[:1], ext)
    assert one.shape == (1, 32)
    assert np.allclose(one[0], feats[0], atol=1e-6)


def test_extract_features_duplicates(rng):
    ext = random_extractor()
    w = unit_windows(rng, 2)
    dup = np.concatenate([w, w])
    feats = extract_features(dup, ext)
    assert np.array_equal(feats[:2], feats[2:])


def test_extract_features_wrong_length(rng):
    ext = random_extractor()
    with pytest.raises(ShapeError):
        extract_features(unit_windows(rng, 2, t=20), ext)


def test_extractor_training_and_determinism(rng):
    w = unit_windows(rng, 520)
    cfg = ExtractorConfig(epochs=2, seed=0, batch_size=128)
    ext1, hist1 = train_feature_extractor(w, cfg)
    ext2, hist2 = train_feature_extractor(w, cfg)
    assert hist1[-1] < hist1[0]
    assert hist1 == hist2
    assert ext1.extractor_id == ext2.extractor_id
    feats = extract_features(w[:100], ext1)
    # a collapsed extractor would produce constant features
    live = (feats.std(axis=0) > 1e-6).mean()
    assert live >= 0.9


def test_extractor_corpus_gate(rng):
    with pytest.raises(CorpusError):
        train_feature_extractor(unit_windows(rng, 100), ExtractorConfig(epochs=1))


def test_extractor_archive_round_trip(rng, tmp_path):
    ext = random_extractor(seed=5)
    path = tmp_path / "ext.npz"
    ext.save(path)
    loaded = GestureFeatureExtractor.load(path)
    w = unit_windows(rng, 4)
    assert np.array_equal(extract_features(w, ext), extract_features(w, loaded))
    assert loaded.extractor_id == ext.extractor_id


def test_fgd_identity_and_symmetry(rng):
    ext = random_extractor()
    x = unit_windows(rng, 30)
    y = unit_windows(rng, 30)
    assert fgd.fgd(x, x, ext) <= 1e-6
    assert fgd.fgd(x, y, ext) == pytest.approx(fgd.fgd(y, x, ext), abs=1e-6)


def test_maej_cases(rng):
    ref = rng.normal(size=(2, 34, 10, 3))
    assert maej(ref, ref) == 0.0
    assert maej(ref, ref + 0.25) == pytest.approx(0.25)
    cand = ref.copy()
    cand[0, 5, 3, 1] += 0.3
    assert maej(ref[:1], cand[:1]) == pytest.approx(0.3 / (34 * 30))


def test_maej_pair_order_invariance(rng):
    ref = rng.normal(size=(4, 10, 10, 3))
    cand = ref + rng.normal(size=ref.shape) * 0.1
    perm = rng.permutation(4)
    assert maej(ref, cand) == pytest.approx(maej(ref[perm], cand[perm]))


def test_mae_accel_cases(rng):
    ref = rng.normal(size=(2, 34, 10, 3))
    assert mae_accel(ref, ref) == 0.0
    # constant-velocity drift: second difference unchanged
    drift = np.arange(34)[None, :, None, None] * np.array([0.01, 0.02, -0.01])
    assert mae_accel(ref, ref + drift) == pytest.approx(0.0, abs=1e-12)


def test_mae_accel_sinusoid_oracle():
    t = np.arange(34)
    w = 0.7
    x = np.zeros((1, 34, 10, 3))
    x[0, :, 8, 0] = np.sin(w * t)
    ref = np.zeros_like(x)
    got = mae_accel(ref, x)
    # second difference of sin(wt) is 2(cos w - 1) sin(wt)
    accel = 2 * (np.cos(w) - 1) * np.sin(w * t[1:-1])
    expected = np.abs(accel).sum() / (32 * 30)
    assert got == pytest.approx(expected, abs=1e-12)


def test_mae_accel_needs_three_frames(rng):
    ref = rng.normal(size=(1, 2, 10, 3))
    with pytest.raises(InvalidInputError):
        mae_accel(ref, ref)


def test_paired_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        maej(rng.normal(size=(2, 34, 10, 3)), rng.normal(size=(3, 34, 10, 3)))
