"""Run configuration and the training loop shared by the CLI and the protocols."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import autodiff as ad
from .data import (Augmenter, Dataset, RankSampler, SyntheticSpec, augment, generate_blobs,
                   load_cifar10_binary, stratified_split)
from .errors import TrainingDiverged, ValidationError
from .evaluation import knn_accuracy
from .losses import ranked_contrastive_loss, softmax_ce_loss
from .model import SGD, EncoderModel, ModelConfig
from .ranking import RankingTable, default_schedule, load_ranking

LOSS_MODES = ("ranked", "supcon", "softmax")
REFERENCE_CLASS = "__reference__"


@dataclass
class DatasetSection:
    kind: str = "synthetic"
    path: str | None = None
    num_classes: int = 5
    dim: int = 16
    spacing: float = 4.0
    sigma: float = 1.0
    samples_per_class: int = 600
    test_fraction: float = 1 / 6
    limit_train: int | None = None
    limit_test: int | None = None
    standardize: bool = True


@dataclass
class LossSection:
    mode: str = "ranked"
    r: int = 3
    tau1: float = 0.1
    growth: float = 1.5


@dataclass
class ModelSection:
    hidden: list = field(default_factory=lambda: [128, 128])
    feature_dim: int = 64
    proj_dim: int = 32
    conv_channels: list = field(default_factory=list)
    dtype: str = "float64"


@dataclass
class OptimizerSection:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    decay_every: int = 0
    decay_gamma: float = 0.1


@dataclass
class TrainSection:
    steps: int = 0
    epochs: int = 1
    batch_size: int = 64


@dataclass
class AugmentSection:
    noise_sigma: float = 0.1
    flip_prob: float = 0.5
    crop_padding: int = 4
    jitter: float = 0.1


@dataclass
class EvalSection:
    probe: str = "knn"
    k: int = 5
    space: str = "auto"
    max_train: int = 5000
    probe_epochs: int = 200


_SECTIONS = {
    "dataset": DatasetSection, "loss": LossSection, "model": ModelSection,
    "optimizer": OptimizerSection, "train": TrainSection, "augment": AugmentSection,
    "eval": EvalSection,
}


@dataclass
class RunConfig:
    """One experiment.  ``seed`` is mandatory; everything else has defaults."""

    seed: int
    dataset: DatasetSection = field(default_factory=DatasetSection)
    ranking: str | None = None
    loss: LossSection = field(default_factory=LossSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    train: TrainSection = field(default_factory=TrainSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    eval: EvalSection = field(default_factory=EvalSection)
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def bad(name, msg):
            raise ValidationError(f"config field '{name}': {msg}")

        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            bad("seed", "must be an integer")
        d = self.dataset
        if d.kind not in ("synthetic", "cifar10"):
            bad("dataset.kind", "must be 'synthetic' or 'cifar10'")
        if d.kind == "cifar10" and not d.path:
            bad("dataset.path", "required for cifar10")
        if d.kind == "synthetic" and d.num_classes < 2:
            bad("dataset.num_classes", "must be >= 2")
        if self.loss.mode not in LOSS_MODES:
            bad("loss.mode", f"must be one of {LOSS_MODES}")
        if self.loss.r < 1:
            bad("loss.r", "must be >= 1")
        if self.loss.tau1 <= 0:
            bad("loss.tau1", "must be positive")
        if self.loss.growth <= 1:
            bad("loss.growth", "must exceed 1 so temperatures strictly increase")
        if self.train.batch_size < 2:
            bad("train.batch_size", "must be >= 2")
        if self.train.steps < 0 or self.train.epochs < 0 or (self.train.steps == 0 and self.train.epochs == 0):
            bad("train.steps", "set steps > 0 or epochs > 0")
        if self.eval.probe not in ("knn", "linear"):
            bad("eval.probe", "must be 'knn' or 'linear'")
        if self.eval.space not in ("auto", "projection", "features"):
            bad("eval.space", "must be auto, projection or features")
        if self.eval.k < 1:
            bad("eval.k", "must be >= 1")

    @property
    def effective_r(self) -> int:
        return self.loss.r if self.loss.mode == "ranked" else 1

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ValidationError("config must be a mapping")
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValidationError(f"unknown config fields: {unknown}")
        if "seed" not in raw:
            raise ValidationError("config field 'seed': required")
        kwargs = {}
        for key, value in raw.items():
            if key in _SECTIONS:
                section = _SECTIONS[key]
                value = value or {}
                if not isinstance(value, dict):
                    raise ValidationError(f"config field '{key}': must be a mapping")
                names = {f.name for f in dataclasses.fields(section)}
                extra = sorted(set(value) - names)
                if extra:
                    raise ValidationError(f"unknown config fields: {[f'{key}.{e}' for e in extra]}")
                try:
                    value = section(**value)
                except TypeError as exc:
                    raise ValidationError(f"config field '{key}': {exc}") from None
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ValidationError(f"{path}: not a valid key-value document: {exc}") from None
        for k, v in (overrides or {}).items():
            if v is not None:
                raw[k] = v
        return cls.from_dict(raw)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


# -- building blocks ----------------------------------------------------------

def build_datasets(config: RunConfig):
    """Return ``(train, test, ground_truth_table_or_None)``."""
    d = config.dataset
    if d.kind == "synthetic":
        spec = SyntheticSpec.chain(d.num_classes, d.dim, d.spacing, d.sigma, d.samples_per_class)
        full, truth = generate_blobs(spec, config.seed)
        train, test = stratified_split(full, d.test_fraction, config.seed)
        if d.standardize:
            train, test = standardize(train, test)
        return train, test, truth
    train = load_cifar10_binary(d.path, "train", limit=d.limit_train)
    test = load_cifar10_binary(d.path, "test", limit=d.limit_test)
    return train, test, None


def standardize(train: Dataset, *others: Dataset):
    """Center each feature and divide by one global scale, both from ``train`` only.

    A single scale keeps Euclidean and cosine geometry between samples intact.
    """
    mu = train.x.mean(axis=0)
    sd = float(np.sqrt(np.mean((train.x - mu) ** 2)))
    sd = sd if sd > 0 else 1.0
    out = [Dataset((ds.x - mu) / sd, ds.y, ds.class_names, ds.kind, ds.image_shape, ds.source)
           for ds in (train, *others)]
    return tuple(out)


def resolve_table(config: RunConfig, dataset: Dataset, truth: RankingTable | None) -> RankingTable:
    """Ranking used for training, after applying the loss mode's precedence rules."""
    mode = config.loss.mode
    if mode != "ranked":
        if config.ranking or (mode == "supcon" and config.loss.r != 1):
            warnings.warn("ranking ignored, r=1", UserWarning, stacklevel=2)
        return RankingTable.empty(dataset.class_names)
    if config.ranking:
        table = load_ranking(config.ranking, dataset.class_names)
    elif truth is not None:
        table = truth
    else:
        warnings.warn("no ranking file given; training with r=1", UserWarning, stacklevel=2)
        table = RankingTable.empty(dataset.class_names)
    return table.truncate(config.loss.r)


def build_model(config: RunConfig, dataset: Dataset, num_classes: int | None = None) -> EncoderModel:
    m = config.model
    image = dataset.kind == "image" and bool(m.conv_channels)
    return EncoderModel(ModelConfig(
        input_dim=dataset.dim,
        num_classes=num_classes or dataset.num_classes,
        hidden=tuple(m.hidden),
        feature_dim=m.feature_dim,
        proj_dim=m.proj_dim,
        conv_channels=tuple(m.conv_channels) if image else (),
        image_shape=dataset.image_shape if image else (),
        seed=config.seed,
        dtype=m.dtype,
    ))


def augmenter_for(config: RunConfig, dataset: Dataset) -> Augmenter:
    a = config.augment
    shape = dataset.image_shape or (1, 1, dataset.dim)
    return Augmenter(a.noise_sigma, a.flip_prob, a.crop_padding, a.jitter, shape)


def eval_space(config: RunConfig) -> str:
    if config.eval.space != "auto":
        return config.eval.space
    return "features" if config.loss.mode == "softmax" else "projection"


def embed(model: EncoderModel, x, space: str = "projection", chunk: int = 512) -> np.ndarray:
    """Embeddings without recording a graph; ``features`` rows are l2-normalised."""
    out = []
    with ad.no_grad():
        for s in range(0, len(x), chunk):
            h = model.forward_features(x[s:s + chunk])
            if space == "projection":
                out.append(model.project(h).data)
            else:
                out.append(ad.l2_normalize(h).data)
    return np.concatenate(out).astype(np.float64)


def logits(model: EncoderModel, x, chunk: int = 512) -> np.ndarray:
    with ad.no_grad():
        return np.concatenate([model.forward_logits(x[s:s + chunk]).data for s in range(0, len(x), chunk)])


def eval_subset(config: RunConfig, n: int) -> np.ndarray:
    """Deterministic subset of training rows used as the probe's reference set."""
    if n <= config.eval.max_train:
        return np.arange(n)
    rng = np.random.default_rng(config.seed + 7)
    return np.sort(rng.choice(n, size=config.eval.max_train, replace=False))


# -- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    model: EncoderModel
    log: list
    columns: list
    seen_indices: np.ndarray
    table: RankingTable
    taus: tuple
    reference: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)

    def loss_csv(self, config_hash: str, seed: int) -> str:
        lines = [f"# config_hash={config_hash} seed={seed}", ",".join(self.columns)]
        for row in self.log:
            lines.append(",".join([str(int(row[0]))] + [f"{v:.12g}" for v in row[1:]]))
        return "\n".join(lines) + "\n"

    def smoothed(self, window: int = 10) -> np.ndarray:
        totals = np.array([r[1] for r in self.log])
        if len(totals) < window:
            return totals
        return np.convolve(totals, np.ones(window) / window, mode="valid")


def num_steps(config: RunConfig, n_train: int) -> int:
    if config.train.steps:
        return config.train.steps
    return config.train.epochs * math.ceil(n_train / config.train.batch_size)


def train(config: RunConfig, dataset: Dataset, table: RankingTable, *, num_classes: int | None = None,
          aux_x: np.ndarray | None = None, reference=None, aux_per_batch: int | None = None) -> TrainResult:
    """Train an encoder on ``dataset`` with the configured loss.

    With ``aux_x`` (samples known to be OOD), each batch also carries
    ``aux_per_batch`` of them under an extra pseudo-class whose only other
    member is the fixed unit vector ``reference`` (default all-ones), so the
    auxiliary samples are pulled towards it and every known class treats it
    as a negative.
    """
    mode = config.loss.mode
    model = build_model(config, dataset, num_classes)
    opt = SGD(model.parameters("cls" if mode == "softmax" else "proj"), lr=config.optimizer.lr, momentum=config.optimizer.momentum,
              weight_decay=config.optimizer.weight_decay, decay_every=config.optimizer.decay_every,
              decay_gamma=config.optimizer.decay_gamma)
    aug = augmenter_for(config, dataset)
    sampler = RankSampler(dataset, table, config.train.batch_size, config.seed, aug)
    r = config.effective_r
    taus = default_schedule(r, config.loss.tau1, config.loss.growth) if mode != "softmax" else None

    use_aux = aux_x is not None and len(aux_x) > 0
    if aux_x is not None and not use_aux:
        warnings.warn("no auxiliary OOD samples; reference-vector mode disabled", UserWarning, stacklevel=2)
    ref_row = None
    loss_table = table
    if use_aux:
        if mode == "softmax":
            raise ValidationError("reference-vector mode needs a contrastive loss mode")
        f = np.ones(config.model.proj_dim) if reference is None else np.asarray(reference, dtype=np.float64)
        ref_row = ad.l2_normalize(ad.Tensor(f.reshape(1, -1))).data.astype(config.model.dtype)
        loss_table = table.with_class(REFERENCE_CLASS)
        aux_x = np.asarray(aux_x, dtype=dataset.x.dtype)
        aux_per_batch = aux_per_batch or max(2, config.train.batch_size // 4)
        aux_rng = np.random.default_rng(config.seed + 1)

    columns = ["step", "total"] + ([f"l_{i}" for i in range(1, r + 1)] if taus is not None else [])
    log, seen, diagnostics = [], [], []
    steps = num_steps(config, len(dataset))
    for step in range(1, steps + 1):
        batch = sampler.sample()
        seen.append(batch.indices)
        diagnostics.extend(batch.diagnostics)
        opt.zero_grad()
        if mode == "softmax":
            loss = softmax_ce_loss(model.forward_logits(batch.x), batch.row_labels)
            row = [step, float(loss.data)]
        else:
            x, labels = batch.x, batch.row_labels
            anchors = None
            if use_aux:
                pick = aux_rng.choice(len(aux_x), size=min(aux_per_batch, len(aux_x)), replace=False)
                views = np.stack([augment(aux_x[i], dataset.kind, aux_rng, aug) for i in pick])
                x = np.concatenate([x, aux_x[pick], views])
                labels = np.concatenate([labels, np.full(2 * len(pick), table.num_classes)])
            z = model.forward_embed(x)
            if use_aux:
                z = ad.concat([z, ad.Tensor(ref_row)])
                labels = np.concatenate([labels, [table.num_classes]])
                anchors = np.r_[np.ones(len(labels) - 1, dtype=bool), False]
            parts = ranked_contrastive_loss(z, labels, loss_table, taus, anchor_mask=anchors)
            loss = parts.total
            row = [step, float(loss.data)] + list(parts.per_level) + [0.0] * (r - len(parts.per_level))
        if not np.isfinite(row[1]):
            raise TrainingDiverged(step, batch.indices)
        loss.backward()
        opt.step()
        log.append(row)
    return TrainResult(model, log, columns, np.concatenate(seen), table,
                       taus.taus if taus is not None else (), ref_row, diagnostics)


def validation_accuracy(config: RunConfig, model: EncoderModel, train_ds: Dataset, test_ds: Dataset) -> float:
    """The probe accuracy reported at the end of training and recomputed by ``eval``."""
    from .evaluation import linear_probe

    space = eval_space(config)
    sub = eval_subset(config, len(train_ds))
    tr = embed(model, train_ds.x[sub], space)
    te = embed(model, test_ds.x, space)
    if config.eval.probe == "knn":
        return knn_accuracy(tr, train_ds.y[sub], te, test_ds.y, min(config.eval.k, len(sub)))
    return linear_probe(tr, train_ds.y[sub], te, test_ds.y, epochs=config.eval.probe_epochs,
                        seed=config.seed, num_classes=train_ds.num_classes)
