"""Datasets, augmentation and the rank-aware batch sampler.

Two sources are supported: synthetic Gaussian blobs (the default, with a
companion ranking ordered by mean distance) and the CIFAR-10 binary release
(``data_batch_{1..5}.bin`` / ``test_batch.bin``, each record one label byte
followed by 3072 channel-major pixel bytes).
"""
from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import CheckpointError, IngestionError, ValidationError
from .ranking import RankingTable, check_class_name

CIFAR10_CLASSES = (
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
)
CIFAR10_SHAPE = (3, 32, 32)
CIFAR10_RECORD = 1 + 3072
CIFAR10_PER_FILE = 10000
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)

DATASET_KIND = "dataset"


@dataclass
class Dataset:
    """Feature rows ``x`` with integer labels ``y`` in ``[0, C)``."""

    x: np.ndarray
    y: np.ndarray
    class_names: tuple
    kind: str = "vector"
    image_shape: tuple = ()
    source: str = "memory"

    def __post_init__(self):
        self.x = np.asarray(self.x)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.class_names = tuple(check_class_name(str(n)) for n in self.class_names)
        self.image_shape = tuple(self.image_shape)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise ValidationError(f"dataset needs x (N, D) and y (N,), got {self.x.shape} and {self.y.shape}")
        c = len(self.class_names)
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= c):
            raise ValidationError(f"labels must lie in [0, {c})")
        if self.kind not in ("vector", "image"):
            raise ValidationError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "image" and int(np.prod(self.image_shape)) != self.x.shape[1]:
            raise ValidationError("image_shape does not match feature dimension")

    def __len__(self):
        return len(self.y)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)

    @property
    def metadata(self) -> dict:
        return {
            "source": self.source,
            "dim": self.dim,
            "kind": self.kind,
            "class_counts": dict(zip(self.class_names, self.class_counts().tolist())),
        }

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.x[idx], self.y[idx], self.class_names, self.kind, self.image_shape, self.source)

    def label_ids(self, names) -> list:
        ids = []
        for n in names:
            if n not in self.class_names:
                raise ValidationError(f"unknown class name {n!r}")
            ids.append(self.class_names.index(n))
        return ids


def save_dataset(ds: Dataset, path) -> None:
    meta = {"class_names": list(ds.class_names), "kind": ds.kind,
            "image_shape": list(ds.image_shape), "source": ds.source}
    container.write(path, DATASET_KIND, meta, {"x": ds.x, "y": ds.y})


def load_dataset(path) -> Dataset:
    try:
        meta, arrays = container.read(path, DATASET_KIND)
    except CheckpointError as exc:
        raise IngestionError(f"{path}: {exc}") from None
    return Dataset(arrays["x"], arrays["y"], tuple(meta["class_names"]), meta["kind"],
                   tuple(meta["image_shape"]), meta["source"])


def stratified_split(ds: Dataset, test_fraction: float, seed: int):
    """Per-class random split into ``(train, test)``."""
    if not 0 < test_fraction < 1:
        raise ValidationError("test_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.y == c))
        k = int(round(len(idx) * test_fraction))
        test.append(idx[:k])
        train.append(idx[k:])
    return ds.subset(np.sort(np.concatenate(train))), ds.subset(np.sort(np.concatenate(test)))


# -- CIFAR-10 ----------------------------------------------------------------

def _read_cifar_file(path, expected_records):
    if not os.path.exists(path):
        raise IngestionError(f"missing CIFAR-10 file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR10_RECORD:
        raise IngestionError(f"{path}: size {raw.size} is not a whole number of {CIFAR10_RECORD}-byte records")
    records = raw.reshape(-1, CIFAR10_RECORD)
    if expected_records is not None and len(records) != expected_records:
        raise IngestionError(f"{path}: expected {expected_records} records, found {len(records)}")
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) >= len(CIFAR10_CLASSES):
        bad = int(np.argmax(labels >= len(CIFAR10_CLASSES)))
        raise IngestionError(f"{path}: record {bad} has label byte {labels[bad]} (must be < 10)")
    return records[:, 1:], labels


def load_cifar10_binary(directory, split: str = "train", expected_records=CIFAR10_PER_FILE,
                        limit: int | None = None) -> Dataset:
    """Load one split of the CIFAR-10 binary release; pixels scaled to [0, 1], channel-major."""
    files = {"train": CIFAR10_TRAIN_FILES, "test": CIFAR10_TEST_FILES}.get(split)
    if files is None:
        raise ValidationError(f"split must be 'train' or 'test', got {split!r}")
    pixels, labels = [], []
    for name in files:
        p, l = _read_cifar_file(os.path.join(directory, name), expected_records)
        pixels.append(p)
        labels.append(l)
    x = np.concatenate(pixels)
    y = np.concatenate(labels)
    if limit is not None:
        x, y = x[:limit], y[:limit]
    names = CIFAR10_CLASSES
    meta = os.path.join(directory, "batches.meta.txt")
    if os.path.exists(meta):
        with open(meta, encoding="utf-8") as fh:
            listed = tuple(line.strip() for line in fh if line.strip())
        if len(listed) == len(CIFAR10_CLASSES):
            names = listed
    return Dataset((x / np.float32(255.0)).astype(np.float32), y, names, "image", CIFAR10_SHAPE,
                   f"cifar10:{split}")


def write_cifar10_binary(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images ``(N, 3, 32, 32)`` or ``(N, 3072)`` in the CIFAR-10 record layout."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], images], axis=1)
    rec.tofile(path)


# -- synthetic blobs ------------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Isotropic Gaussian blobs with per-class means and shared scale ``sigma``."""

    means: np.ndarray
    sigma: float = 1.0
    samples_per_class: int = 100
    class_names: tuple = ()

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim != 2 or len(self.means) < 2:
            raise ValidationError("means must be a (C, d) array with C >= 2")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.samples_per_class < 1:
            raise ValidationError("samples_per_class must be positive")
        d = np.linalg.norm(self.means[:, None] - self.means[None], axis=-1)
        if np.any(d[~np.eye(len(d), dtype=bool)] == 0):
            raise ValidationError("class means must be pairwise distinct")
        if not self.class_names:
            self.class_names = tuple(f"c{i}" for i in range(len(self.means)))
        if len(self.class_names) != len(self.means):
            raise ValidationError("one class name per mean required")

    @property
    def num_classes(self) -> int:
        return len(self.means)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def chain(cls, num_classes=5, dim=16, spacing=4.0, sigma=1.0, samples_per_class=100):
        """Means equally spaced along the first axis, ``spacing`` apart."""
        means = np.zeros((num_classes, dim))
        means[:, 0] = spacing * np.arange(num_classes)
        return cls(means, sigma, samples_per_class)


def distance_ranking(means: np.ndarray, class_names, rtol: float = 1e-9) -> RankingTable:
    """Rank every other class by ascending mean distance; equal distances share a rank."""
    means = np.asarray(means, dtype=np.float64)
    dist = np.linalg.norm(means[:, None] - means[None], axis=-1)
    ranks = []
    for c in range(len(means)):
        others = sorted((k for k in range(len(means)) if k != c), key=lambda k: (dist[c, k], k))
        per, cur, ref = [], [], None
        for k in others:
            if ref is not None and abs(dist[c, k] - ref) > rtol * max(ref, 1.0):
                per.append(frozenset(cur))
                cur = []
            if not cur:
                ref = dist[c, k]
            cur.append(k)
        if cur:
            per.append(frozenset(cur))
        ranks.append(tuple(per))
    return RankingTable(tuple(class_names), tuple(ranks))


def generate_blobs(spec: SyntheticSpec, seed: int):
    """Sample the blobs; returns ``(dataset, ground_truth_ranking)``."""
    rng = np.random.default_rng(seed)
    n = spec.samples_per_class
    x = np.concatenate([m + spec.sigma * rng.standard_normal((n, spec.dim)) for m in spec.means])
    y = np.repeat(np.arange(spec.num_classes), n)
    ds = Dataset(x, y, spec.class_names, "vector", (), f"blobs:seed={seed}")
    return ds, distance_ranking(spec.means, spec.class_names)


# -- augmentation -----------------------------------------------------------------

@dataclass(frozen=True)
class Augmenter:
    """Vector mode adds Gaussian noise; image mode flips, pad-crops and jitters channels."""

    noise_sigma: float = 0.1
    flip_prob: float = 0.5
    crop_padding: int = 4
    jitter: float = 0.1
    image_shape: tuple = CIFAR10_SHAPE


def hflip(image: np.ndarray) -> np.ndarray:
    """Mirror a ``(C, H, W)`` image left-right."""
    return image[..., ::-1]


def _pad_crop(image, dy, dx, pad):
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    return padded[:, pad + dy:pad + dy + h, pad + dx:pad + dx + w]


def augment(sample: np.ndarray, mode: str, rng, aug: Augmenter = Augmenter()) -> np.ndarray:
    """Return an augmented copy of one flattened sample; ``rng`` is a Generator or a seed."""
    rng = np.random.default_rng(rng)
    sample = np.asarray(sample)
    if mode == "vector":
        if aug.noise_sigma == 0:
            return sample.copy()
        return sample + aug.noise_sigma * rng.standard_normal(sample.shape).astype(sample.dtype)
    if mode != "image":
        raise ValidationError(f"unknown augmentation mode {mode!r}")
    img = sample.reshape(aug.image_shape)
    if rng.random() < aug.flip_prob:
        img = hflip(img)
    if aug.crop_padding:
        dy, dx = rng.integers(-aug.crop_padding, aug.crop_padding + 1, size=2)
        img = _pad_crop(img, int(dy), int(dx), aug.crop_padding)
    if aug.jitter:
        gains = 1 + rng.uniform(-aug.jitter, aug.jitter, size=(img.shape[0], 1, 1))
        img = np.clip(img * gains, 0.0, 1.0)
    return np.ascontiguousarray(img, dtype=sample.dtype).reshape(-1)


# -- batches ------------------------------------------------------------------

@dataclass
class Batch:
    """``2B`` rows: row ``2k`` is sample ``k`` and row ``2k+1`` its augmented view."""

    x: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    diagnostics: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def row_labels(self) -> np.ndarray:
        return np.repeat(self.labels, 2)


class RankSampler:
    """Draws batches in which each anchor class finds its ranked classes.

    Classes are visited in random order.  Each visited class reserves two of
    its own samples and one sample of every class it ranks, as long as the
    reservation fits in the remaining budget.  Leftover slots are handed out
    round-robin over the visited classes, drawing uniformly within class.
    Sampling is without replacement inside one batch.
    """

    def __init__(self, dataset: Dataset, table: RankingTable, batch_size: int, seed,
                 augmenter: Augmenter | None = None, pool=None):
        if batch_size < 2:
            raise ValidationError("batch size must be at least 2")
        if table.num_classes != dataset.num_classes:
            raise ValidationError("ranking and dataset disagree on the number of classes")
        self.dataset = dataset
        self.table = table
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self.augmenter = augmenter or Augmenter()
        pool = np.arange(len(dataset)) if pool is None else np.asarray(pool, dtype=np.intp)
        self.by_class = [pool[dataset.y[pool] == c] for c in range(dataset.num_classes)]
        self.present = [c for c in range(dataset.num_classes) if len(self.by_class[c])]
        if not self.present:
            raise ValidationError("sampler pool is empty")

    def _needs(self, c):
        need = {c: 2}
        for members in self.table.ranks[c]:
            for k in members:
                need[k] = max(need.get(k, 0), 1)
        return need

    def draw_indices(self):
        rng, budget, notes = self.rng, self.batch_size, []
        counts: dict[int, int] = {}
        visited = []
        for c in rng.permutation(self.present):
            c = int(c)
            need = {k: min(v, len(self.by_class[k])) for k, v in self._needs(c).items()}
            extra = sum(max(0, v - counts.get(k, 0)) for k, v in need.items())
            if extra > budget:
                break
            for k, v in need.items():
                counts[k] = max(counts.get(k, 0), v)
            budget -= extra
            visited.append(c)
            if len(self.by_class[c]) < 2:
                notes.append(f"class {self.dataset.class_names[c]!r} has a single sample")
        if not visited:
            visited = [int(rng.choice(self.present))]
            counts = {visited[0]: 0}
            notes.append("batch too small for the ranking; falling back to one class")
            budget = self.batch_size
        while budget > 0:
            progressed = False
            for c in visited:
                if budget == 0:
                    break
                if counts.get(c, 0) < len(self.by_class[c]):
                    counts[c] = counts.get(c, 0) + 1
                    budget -= 1
                    progressed = True
            if not progressed:
                break
        if budget > 0:
            notes.append(f"only {self.batch_size - budget} distinct samples available")
        picked = []
        for k in sorted(counts):
            if counts[k]:
                picked.append(rng.choice(self.by_class[k], size=counts[k], replace=False))
        idx = rng.permutation(np.concatenate(picked))
        for n in notes:
            warnings.warn(n, RuntimeWarning, stacklevel=3)
        return idx, notes

    def sample(self) -> Batch:
        idx, notes = self.draw_indices()
        ds, aug = self.dataset, self.augmenter
        rows = np.empty((2 * len(idx), ds.dim), dtype=ds.x.dtype)
        rows[0::2] = ds.x[idx]
        if ds.kind == "vector":
            noise = self.rng.standard_normal((len(idx), ds.dim)).astype(ds.x.dtype)
            rows[1::2] = ds.x[idx] + aug.noise_sigma * noise
        else:
            for k, i in enumerate(idx):
                rows[2 * k + 1] = augment(ds.x[i], ds.kind, self.rng, aug)
        return Batch(rows, ds.y[idx], idx, notes)


def sample_batch(dataset: Dataset, table: RankingTable, batch_size: int, seed,
                 augmenter: Augmenter | None = None) -> Batch:
    """One-shot convenience wrapper around :class:`RankSampler`."""
    return RankSampler(dataset, table, batch_size, seed, augmenter).sample()
