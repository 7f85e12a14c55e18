"""Small MLP encoder with projection and classifier heads, and SGD with momentum."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import container
from .autodiff import Tensor
from .errors import CheckpointError, ContractError, ValidationError

CHECKPOINT_KIND = "checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of an :class:`EncoderModel`.

    ``conv_channels`` enables a stem of stride-2 3x3 convolutions (each
    followed by ReLU) applied to inputs of shape ``image_shape`` before the
    MLP; leave it empty for vector data.
    """

    input_dim: int
    num_classes: int
    hidden: tuple = (128, 128)
    feature_dim: int = 64
    proj_dim: int = 32
    conv_channels: tuple = ()
    image_shape: tuple = ()
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        for name in ("input_dim", "num_classes", "feature_dim", "proj_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"model.{name} must be positive")
        if any(h < 1 for h in self.hidden + self.conv_channels):
            raise ValidationError("model layer sizes must be positive")
        if self.conv_channels:
            if len(self.image_shape) != 3 or int(np.prod(self.image_shape)) != self.input_dim:
                raise ValidationError("model.image_shape must be (C, H, W) matching input_dim")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError("model.dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("hidden", "conv_channels", "image_shape"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class EncoderModel:
    """Encoder (optional conv stem + MLP) feeding a unit-norm projection head and a linear classifier."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        dt = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}

        def add(name, fan_in, shape):
            self.params[name] = Tensor(_uniform(rng, fan_in, shape, dt), requires_grad=True)

        flat = config.input_dim
        self._conv_out_shapes = []
        if config.conv_channels:
            c, h, w = config.image_shape
            for k, ch in enumerate(config.conv_channels):
                add(f"conv{k}.weight", c * 9, (ch, c, 3, 3))
                add(f"conv{k}.bias", c * 9, (1, ch, 1, 1))
                h, w = (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
                c = ch
            flat = c * h * w
        dims = [flat, *config.hidden, config.feature_dim]
        for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            add(f"enc{k}.weight", a, (a, b))
            add(f"enc{k}.bias", a, (b,))
        self._n_enc = len(dims) - 1
        add("proj.weight", config.feature_dim, (config.feature_dim, config.proj_dim))
        add("proj.bias", config.feature_dim, (config.proj_dim,))
        add("cls.weight", config.feature_dim, (config.feature_dim, config.num_classes))
        add("cls.bias", config.feature_dim, (config.num_classes,))

    def parameters(self, head: str | None = None) -> list[Tensor]:
        """All parameters, or the encoder plus one head (``"proj"`` or ``"cls"``)."""
        if head is None:
            return list(self.params.values())
        if head not in ("proj", "cls"):
            raise ContractError(f"unknown head {head!r}")
        other = "cls." if head == "proj" else "proj."
        return [p for k, p in self.params.items() if not k.startswith(other)]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        ad.zero_grad(self.parameters())

    def _input(self, x) -> Tensor:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=self.config.dtype)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ContractError(f"expected inputs of shape (B, {self.config.input_dim}), got {x.shape}")
        return Tensor(x)

    def forward_features(self, x) -> Tensor:
        h = self._input(x)
        p = self.params
        if self.config.conv_channels:
            h = h.reshape((h.shape[0], *self.config.image_shape))
            for k in range(len(self.config.conv_channels)):
                h = ad.relu(ad.conv2d(h, p[f"conv{k}.weight"], stride=2, padding=1) + p[f"conv{k}.bias"])
            h = h.reshape((h.shape[0], -1))
        for k in range(self._n_enc):
            h = h @ p[f"enc{k}.weight"] + p[f"enc{k}.bias"]
            if k < self._n_enc - 1:
                h = ad.relu(h)
        return h

    def project(self, features: Tensor) -> Tensor:
        p = self.params
        return ad.l2_normalize(features @ p["proj.weight"] + p["proj.bias"])

    def classify(self, features: Tensor) -> Tensor:
        p = self.params
        return features @ p["cls.weight"] + p["cls.bias"]

    def forward_embed(self, x) -> Tensor:
        """Unit-norm projection embeddings, one row per input."""
        return self.project(self.forward_features(x))

    def forward_logits(self, x) -> Tensor:
        return self.classify(self.forward_features(x))

    def state_arrays(self) -> dict:
        return {k: v.data for k, v in self.params.items()}

    def load_state(self, arrays: dict) -> None:
        if set(arrays) != set(self.params):
            raise CheckpointError("checkpoint parameters do not match the model architecture")
        for k, v in arrays.items():
            if v.shape != self.params[k].shape:
                raise CheckpointError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
        for k, v in arrays.items():
            self.params[k].data = v.astype(self.config.dtype, copy=True)


def forward_embed(model: EncoderModel, inputs) -> Tensor:
    return model.forward_embed(inputs)


@dataclass
class SGD:
    """SGD with heavy-ball momentum: ``v <- mu v + g``, ``p <- p - lr v``.

    ``decay_every``/``decay_gamma`` give an optional step decay of the
    learning rate.
    """

    params: list
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    decay_every: int = 0
    decay_gamma: float = 0.1
    step_count: int = 0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise ValidationError("optimizer needs lr >= 0 and 0 <= momentum < 1")
        if not self.velocity:
            self.velocity = [np.zeros_like(p.data) for p in self.params]

    def current_lr(self) -> float:
        if self.decay_every > 0:
            return self.lr * self.decay_gamma ** (self.step_count // self.decay_every)
        return self.lr

    def step(self) -> None:
        lr = self.current_lr()
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"parameter {i} has no gradient; call backward() first")
        for p, v in zip(self.params, self.velocity):
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data = p.data - lr * v
        self.step_count += 1

    def zero_grad(self) -> None:
        ad.zero_grad(self.params)


def sgd_step(state: SGD) -> SGD:
    state.step()
    return state


def save_checkpoint(model: EncoderModel, path, extra: dict | None = None) -> None:
    meta = {"version": CHECKPOINT_VERSION, "model": model.config.to_dict(), "extra": extra or {}}
    container.write(path, CHECKPOINT_KIND, meta, model.state_arrays())


def read_checkpoint(path):
    """Return ``(model, extra)``; ``extra`` is whatever was passed to :func:`save_checkpoint`."""
    meta, arrays = container.read(path, CHECKPOINT_KIND)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {meta.get('version')} unsupported")
    try:
        config = ModelConfig.from_dict(meta["model"])
    except (TypeError, KeyError, ValidationError) as exc:
        raise CheckpointError(f"invalid architecture in checkpoint: {exc}") from None
    model = EncoderModel(config)
    model.load_state(arrays)
    return model, meta.get("extra", {})


def load_checkpoint(path, config: ModelConfig | None = None) -> EncoderModel:
    """Load a model; if ``config`` is given the stored architecture must match it."""
    model, _ = read_checkpoint(path)
    if config is not None:
        a, b = model.config.to_dict(), config.to_dict()
        a.pop("seed"), b.pop("seed")
        if a != b:
            diff = sorted(k for k in a if a[k] != b.get(k))
            raise CheckpointError(f"checkpoint architecture differs in {diff}")
    return model
