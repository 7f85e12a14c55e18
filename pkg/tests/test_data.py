import numpy as np
import pytest

from rankcon.data import (CIFAR10_CLASSES, CIFAR10_TRAIN_FILES, Augmenter, Dataset, RankSampler, SyntheticSpec,
                          augment, distance_ranking, generate_blobs, hflip, load_cifar10_binary, load_dataset,
                          sample_batch, save_dataset, stratified_split, write_cifar10_binary)
from rankcon.errors import IngestionError, ValidationError
from rankcon.evaluation import knn_accuracy
from rankcon.ranking import RankingTable, rank_of


# -- synthetic blobs ------------------------------------------------------------

def test_blobs_deterministic():
    spec = SyntheticSpec.chain(samples_per_class=20)
    a, _ = generate_blobs(spec, 7)
    b, _ = generate_blobs(spec, 7)
    c, _ = generate_blobs(spec, 8)
    assert a.x.tobytes() == b.x.tobytes()
    assert not np.array_equal(a.x, c.x)
    assert a.class_counts().tolist() == [20] * 5


def test_chain_ranking_for_first_class():
    _, table = generate_blobs(SyntheticSpec.chain(samples_per_class=2), 0)
    assert table.ranks[0] == (frozenset({1}), frozenset({2}), frozenset({3}), frozenset({4}))
    assert table.ranks[2] == (frozenset({1, 3}), frozenset({0, 4}))
    assert table.r == 5


def test_distance_ranking_ties_share_rank():
    means = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [3.0, 0.0]])
    t = distance_ranking(means, ["a", "b", "c", "d"])
    assert t.ranks[0] == (frozenset({1, 2}), frozenset({3}))


def test_well_separated_blobs_are_knn_separable():
    means = 10.0 * np.eye(4, 6)
    ds, _ = generate_blobs(SyntheticSpec(means, 1.0, 100), 0)
    tr, te = stratified_split(ds, 0.5, 0)
    assert knn_accuracy(tr.x, tr.y, te.x, te.y, k=5) >= 0.999


def test_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticSpec(np.zeros((2, 3)))
    with pytest.raises(ValidationError):
        SyntheticSpec(np.eye(2), sigma=0.0)


def test_stratified_split_disjoint_and_balanced():
    ds, _ = generate_blobs(SyntheticSpec.chain(samples_per_class=30), 1)
    tr, te = stratified_split(ds, 0.2, 3)
    assert tr.class_counts().tolist() == [24] * 5
    assert te.class_counts().tolist() == [6] * 5
    rows = {r.tobytes() for r in tr.x}
    assert not any(r.tobytes() in rows for r in te.x)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 2)), [0, 1, 2], ("a", "b"))
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 2)), [0, 1], ("a", "b"))
    with pytest.raises(ValidationError):
        Dataset(np.zeros((3, 2)), [0, 1, 0], ("a", "b"), kind="image", image_shape=(1, 1, 3))


def test_dataset_cache_round_trip(tmp_path):
    ds, _ = generate_blobs(SyntheticSpec.chain(samples_per_class=5), 2)
    p1, p2 = tmp_path / "a.rkc", tmp_path / "b.rkc"
    save_dataset(ds, p1)
    back = load_dataset(p1)
    save_dataset(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert back.x.tobytes() == ds.x.tobytes() and back.class_names == ds.class_names


def test_dataset_cache_corruption(tmp_path):
    ds, _ = generate_blobs(SyntheticSpec.chain(samples_per_class=5), 2)
    p = tmp_path / "a.rkc"
    save_dataset(ds, p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(IngestionError):
        load_dataset(p)


# -- CIFAR-10 binary --------------------------------------------------------------

def _write_split(directory, per_file, rng, files=CIFAR10_TRAIN_FILES):
    labels = []
    for name in files:
        y = rng.integers(0, 10, per_file)
        write_cifar10_binary(directory / name, rng.integers(0, 256, (per_file, 3, 32, 32)), y)
        labels.append(y)
    return np.concatenate(labels)


def test_cifar_full_size_test_split(tmp_path):
    rng = np.random.default_rng(0)
    y = _write_split(tmp_path, 10000, rng, files=("test_batch.bin",))
    ds = load_cifar10_binary(tmp_path, "test")
    assert ds.x.shape == (10000, 3072) and ds.x.dtype == np.float32
    assert ds.image_shape == (3, 32, 32) and ds.class_names == CIFAR10_CLASSES
    np.testing.assert_array_equal(ds.y, y)
    assert 0.0 <= ds.x.min() and ds.x.max() <= 1.0


def test_cifar_train_split_record_layout(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, (5, 3, 32, 32))
    y = _write_split(tmp_path, 4, rng)
    write_cifar10_binary(tmp_path / CIFAR10_TRAIN_FILES[0], images[:4], y[:4])
    ds = load_cifar10_binary(tmp_path, "train", expected_records=4)
    assert len(ds) == 20
    # channel-major: first 1024 values are the red plane
    np.testing.assert_allclose(ds.x[1, :1024], images[1, 0].reshape(-1) / 255.0, rtol=1e-6)
    assert load_cifar10_binary(tmp_path, "train", expected_records=4, limit=7).x.shape == (7, 3072)


def test_cifar_truncated_file(tmp_path):
    rng = np.random.default_rng(2)
    _write_split(tmp_path, 3, rng)
    path = tmp_path / CIFAR10_TRAIN_FILES[2]
    path.write_bytes(path.read_bytes()[:-100])
    with pytest.raises(IngestionError, match="data_batch_3"):
        load_cifar10_binary(tmp_path, "train", expected_records=3)


def test_cifar_wrong_record_count(tmp_path):
    _write_split(tmp_path, 3, np.random.default_rng(3))
    with pytest.raises(IngestionError, match="expected 10000 records"):
        load_cifar10_binary(tmp_path, "train")


def test_cifar_bad_label_and_missing_file(tmp_path):
    rng = np.random.default_rng(4)
    _write_split(tmp_path, 2, rng)
    write_cifar10_binary(tmp_path / CIFAR10_TRAIN_FILES[1], rng.integers(0, 256, (2, 3072)), np.array([3, 12]))
    with pytest.raises(IngestionError, match="label byte 12"):
        load_cifar10_binary(tmp_path, "train", expected_records=2)
    with pytest.raises(IngestionError, match="missing"):
        load_cifar10_binary(tmp_path, "test", expected_records=2)


# -- augmentation -----------------------------------------------------------------

def test_zero_noise_is_identity():
    x = np.arange(5.0)
    np.testing.assert_array_equal(augment(x, "vector", 0, Augmenter(noise_sigma=0.0)), x)


def test_image_identity_when_disabled():
    img = np.random.default_rng(0).random(3 * 32 * 32).astype(np.float32)
    out = augment(img, "image", 0, Augmenter(flip_prob=0.0, crop_padding=0, jitter=0.0))
    np.testing.assert_array_equal(out, img)


def test_flip_is_involution():
    img = np.random.default_rng(1).random((3, 4, 5))
    np.testing.assert_array_equal(hflip(hflip(img)), img)
    np.testing.assert_array_equal(hflip(img)[:, :, 0], img[:, :, -1])


def test_always_flip_matches_hflip():
    img = np.random.default_rng(1).random(3 * 32 * 32)
    out = augment(img, "image", 0, Augmenter(flip_prob=1.0, crop_padding=0, jitter=0.0))
    np.testing.assert_array_equal(out, hflip(img.reshape(3, 32, 32)).reshape(-1))


def test_vector_noise_is_unbiased():
    x = np.array([1.0, -2.0, 0.5])
    sigma = 0.3
    rng = np.random.default_rng(5)
    draws = np.stack([augment(x, "vector", rng, Augmenter(noise_sigma=sigma)) for _ in range(10000)])
    assert np.all(np.abs(draws.mean(axis=0) - x) < 3 * sigma / 100)


def test_augment_seeded_and_mode_checked():
    x = np.random.default_rng(0).random(3072)
    assert np.array_equal(augment(x, "image", 9), augment(x, "image", 9))
    with pytest.raises(ValidationError):
        augment(x, "audio", 0)


# -- sampler ----------------------------------------------------------------------

def chain_dataset(n=40, c=5):
    return generate_blobs(SyntheticSpec.chain(num_classes=c, samples_per_class=n), 0)


def test_batch_layout():
    ds, table = chain_dataset()
    b = sample_batch(ds, table.truncate(3), 16, 0)
    assert b.x.shape == (32, ds.dim) and b.size == 16
    np.testing.assert_array_equal(b.x[0::2], ds.x[b.indices])
    np.testing.assert_array_equal(b.row_labels, np.repeat(ds.y[b.indices], 2))
    assert len(set(b.indices.tolist())) == 16


def empty_level_fraction(batch, table):
    """Fraction of (anchor row, level) pairs whose positive set is empty."""
    m = table.rank_matrix(batch.row_labels)
    np.fill_diagonal(m, -1)
    empty = total = 0
    for a, c in enumerate(batch.row_labels):
        for level in range(1, table.rank_count(int(c)) + 1):
            total += 1
            empty += not np.any(m[a] == level)
    return empty, total


def test_sampler_coverage_over_many_batches():
    ds, table = chain_dataset()
    table = table.truncate(3)
    sampler = RankSampler(ds, table, 32, 0)
    empty = total = 0
    for _ in range(1000):
        e, t = empty_level_fraction(sampler.sample(), table)
        empty += e
        total += t
    assert empty / total < 0.01


def test_small_batch_every_anchor_has_p1_and_p2():
    ds, table = chain_dataset(c=3)
    table = table.truncate(2)
    for seed in range(50):
        b = sample_batch(ds, table, 12, seed)
        assert empty_level_fraction(b, table) == (0, 2 * 12 * 2), f"seed {seed}"


def test_r1_batches_balanced():
    ds, _ = chain_dataset()
    counts = np.zeros(5)
    sampler = RankSampler(ds, RankingTable.empty(ds.class_names), 20, 1)
    for _ in range(200):
        counts += np.bincount(sampler.sample().labels, minlength=5)
    assert counts.min() / counts.max() > 0.9


def test_sampler_seed_determinism():
    ds, table = chain_dataset()
    a, b = RankSampler(ds, table, 16, 3), RankSampler(ds, table, 16, 3)
    for _ in range(5):
        x, y = a.sample(), b.sample()
        assert x.x.tobytes() == y.x.tobytes()


def test_sampler_pool_restricts_indices():
    ds, table = chain_dataset()
    pool = np.flatnonzero(ds.y != 4)
    compact, _ = table.without([4])
    s = RankSampler(ds, table, 16, 0, pool=pool)
    seen = np.concatenate([s.sample().indices for _ in range(50)])
    assert not np.any(ds.y[seen] == 4)
    assert compact.num_classes == 4


@pytest.mark.filterwarnings("ignore:class 'b' has a single sample")
def test_sampler_warns_when_pool_too_small():
    ds = Dataset(np.random.default_rng(0).normal(size=(3, 2)), [0, 0, 1], ("a", "b"))
    with pytest.warns(RuntimeWarning, match="distinct samples"):
        b = sample_batch(ds, RankingTable.empty(ds.class_names), 8, 0)
    assert b.size == 3


def test_sampler_rejects_bad_input():
    ds, table = chain_dataset()
    with pytest.raises(ValidationError):
        RankSampler(ds, table, 1, 0)
    with pytest.raises(ValidationError):
        RankSampler(ds, RankingTable.empty(("a", "b")), 8, 0)


def test_rank_of_consistent_with_sampler_table():
    _, table = chain_dataset()
    assert rank_of(table, 0, 4) == 5 and rank_of(table.truncate(3), 0, 4) == 0
