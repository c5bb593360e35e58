"""Multi-label image classifier with masked BCE and EMA weight averaging.

A compact convolutional net: a full-resolution stem, three strided
stages, global average pooling and a linear head over the 14 labels.
The pooled vector doubles as the feature embedding for distribution
distances.  Training keeps an exponential moving average of the weights
and snapshots it whenever the EMA validation loss improves; the snapshot
with the lowest validation loss becomes the model.

Masked BCE averages elementwise binary cross-entropy over unmasked
(label, image) slots only, so Uncertain test labels and undefined slots
never contribute gradient or score.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .checkpoint import MAGIC_CLASSIFIER, load_checkpoint, save_checkpoint
from .conditioning import LABEL_NAMES, N_LABELS
from .imageops import affine_warp
from .optim import ema_update, init_momentum, lion_update
from .params import ModelParams, RecordedForward
from .toydata import ResolvedData


@dataclass(frozen=True)
class AugmentSpec:
    """Random flips, rotation, isotropic resize and translation ranges."""
    horizontal_flip: bool = True
    vertical_flip: bool = True
    rotate_deg: float = 60.0
    resize_frac: float = 0.10
    translate_frac: float = 12.0 / 256.0

    def __post_init__(self):
        if self.rotate_deg < 0 or self.resize_frac < 0 or self.translate_frac < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if self.resize_frac >= 1.0:
            raise ValueError("resize_frac must stay below 1")

    @classmethod
    def none(cls) -> "AugmentSpec":
        return cls(horizontal_flip=False, vertical_flip=False, rotate_deg=0.0,
                   resize_frac=0.0, translate_frac=0.0)


@dataclass(frozen=True)
class ClassifierConfig:
    image_size: int = 32
    base_channels: int = 24
    learning_rate: float = 1e-5
    weight_decay: float = 3e-4
    ema_decay: float = 0.9999
    batch_size: int = 64
    max_epochs: int = 8
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8 or self.image_size % 8 != 0:
            raise ValueError("image_size must be a multiple of 8")
        if self.base_channels < 4:
            raise ValueError("base_channels must be at least 4")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("bad optimizer settings")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie strictly inside (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = asdict(self.augment)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        d = dict(d)
        d["augment"] = AugmentSpec(**d["augment"])
        return cls(**d)


def augment(image, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """One random flip/rotate/resize/translate draw, zero-filled."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    theta = math.radians(rng.uniform(-spec.rotate_deg, spec.rotate_deg)) \
        if spec.rotate_deg else 0.0
    zoom = 1.0 + (rng.uniform(-spec.resize_frac, spec.resize_frac)
                  if spec.resize_frac else 0.0)
    flip_h = spec.horizontal_flip and rng.random() < 0.5
    flip_v = spec.vertical_flip and rng.random() < 0.5
    max_t = spec.translate_frac * img.shape[0]
    shift = (rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t)) \
        if spec.translate_frac else (0.0, 0.0)
    # affine_warp wants the output->input map: inverse rotation over zoom
    c, s = math.cos(-theta), math.sin(-theta)
    m = np.array([[c, -s], [s, c]]) / zoom
    m = m @ np.diag([-1.0 if flip_v else 1.0, -1.0 if flip_h else 1.0])
    if np.allclose(m, np.eye(2)) and shift == (0.0, 0.0):
        return img
    return affine_warp(img, m, shift=shift)


def masked_bce(logits: torch.Tensor, targets: torch.Tensor,
               mask: torch.Tensor) -> torch.Tensor:
    """Mean of elementwise BCE-with-logits over unmasked slots."""
    if logits.shape != targets.shape or logits.shape != mask.shape:
        raise ValueError("logits, targets and mask must share a shape")
    total = mask.sum()
    if total.item() == 0:
        raise ValueError("mask excludes every slot; loss undefined")
    per_slot = nn.functional.binary_cross_entropy_with_logits(
        logits, targets, reduction="none")
    return (per_slot * mask).sum() / total


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ClassifierNet(nn.Module):
    """Stem + three strided stages + GAP + linear head."""

    def __init__(self, image_size: int, base_channels: int):
        super().__init__()
        c = base_channels
        widths = (c, 2 * c, 4 * c, 4 * c)
        self.stem = nn.Sequential(
            nn.Conv2d(1, widths[0], 3, padding=1), _norm(widths[0]), nn.SiLU(),
            nn.Conv2d(widths[0], widths[0], 3, padding=1), _norm(widths[0]), nn.SiLU())
        stages = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            stages.append(nn.Sequential(
                nn.Conv2d(cin, cout, 3, stride=2, padding=1), _norm(cout), nn.SiLU(),
                nn.Conv2d(cout, cout, 3, padding=1), _norm(cout), nn.SiLU()))
        self.stages = nn.ModuleList(stages)
        self.head = nn.Linear(widths[-1], N_LABELS)
        self.feature_dim = widths[-1]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        h = self.stem(x)
        for stage in self.stages:
            h = stage(h)
        return h.mean(dim=(2, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x))


class TrainedClassifier(RecordedForward):
    """Classifier wrapper holding the weights selected by validation loss."""

    def __init__(self, config: ClassifierConfig, net: ClassifierNet,
                 best_val_loss: float = float("nan"), history: tuple = ()):
        self.config = config
        self.net = net
        self.best_val_loss = best_val_loss
        self.history = tuple(history)
        self.label_names = LABEL_NAMES

    @classmethod
    def create(cls, config: ClassifierConfig, seed: int | None = None) -> "TrainedClassifier":
        with torch.random.fork_rng():
            torch.manual_seed(config.seed if seed is None else seed)
            net = ClassifierNet(config.image_size, config.base_channels)
        return cls(config, net)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.net)

    def _batch(self, images) -> torch.Tensor:
        arr = np.asarray(images, dtype=np.float32)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        size = self.config.image_size
        if arr.ndim != 3 or arr.shape[1:] != (size, size):
            raise ValueError(f"expected {size}x{size} images")
        dtype = next(self.net.parameters()).dtype
        return torch.from_numpy(arr.copy())[:, None].to(dtype), single

    def predict(self, images) -> np.ndarray:
        """Per-label probabilities, (N, 14) for a batch or (14,) for one image."""
        x, single = self._batch(images)
        with torch.no_grad():
            probs = torch.sigmoid(self.net(x)).double().numpy()
        return probs[0] if single else probs

    def penultimate_features(self, images) -> np.ndarray:
        """Pooled feature vectors, (N, D) or (D,) for a single image."""
        x, single = self._batch(images)
        with torch.no_grad():
            feats = self.net.features(x).double().numpy()
        return feats[0] if single else feats

    def forward_recorded(self, images) -> np.ndarray:
        x, single = self._batch(images)
        logits = self.net(x)
        out = logits[0] if single else logits
        self._record(out)
        return out.detach().numpy().astype(np.float64)

    def save(self, path) -> None:
        config = {"classifier": self.config.to_dict(),
                  "label_names": list(self.label_names),
                  "best_val_loss": self.best_val_loss,
                  "history": [list(h) for h in self.history]}
        save_checkpoint(path, MAGIC_CLASSIFIER, config, self.params.state_arrays())

    @classmethod
    def load(cls, path) -> "TrainedClassifier":
        config, arrays = load_checkpoint(path, MAGIC_CLASSIFIER)
        model = cls.create(ClassifierConfig.from_dict(config["classifier"]), seed=0)
        model.params.load_state_arrays(arrays)
        model.best_val_loss = config.get("best_val_loss", float("nan"))
        model.history = tuple(tuple(h) for h in config.get("history", ()))
        return model


def _epoch_loss(net: ClassifierNet, data: ResolvedData, batch_size: int) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            sl = slice(start, start + batch_size)
            x = torch.from_numpy(data.images[sl].copy())[:, None]
            logits = net(x)
            loss = masked_bce(logits, torch.from_numpy(data.targets[sl].copy()),
                              torch.from_numpy(data.masks[sl].astype(np.float32)))
            n = int(data.masks[sl].sum())
            total += float(loss) * n
            count += n
    return total / count


def train_classifier(train: ResolvedData, val: ResolvedData,
                     config: ClassifierConfig) -> TrainedClassifier:
    """Train on ``train``, select the best EMA snapshot by ``val`` loss.

    Validation must be entirely real-provenance data; synthetic records
    there would let generated images steer model selection.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("train and validation sets must be non-empty")
    if not val.all_real:
        raise ValueError("validation set contains synthetic records; "
                         "model selection requires real data")

    model = TrainedClassifier.create(config)
    net = model.net
    params = model.params.tensors()
    momentum = init_momentum(params)
    ema = {name: p.detach().clone() for name, p in params.items()}
    eval_net = ClassifierNet(config.image_size, config.base_channels)

    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed & 0x7FFFFFFF, 0xA46]))
    n = len(train)
    best_val = float("inf")
    best_state = None
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = np.stack([augment(train.images[i], config.augment, rng)
                              for i in idx]).astype(np.float32)
            x = torch.from_numpy(batch)[:, None]
            logits = net(x)
            loss = masked_bce(logits,
                              torch.from_numpy(train.targets[idx]),
                              torch.from_numpy(train.masks[idx].astype(np.float32)))
            model.params.zero_grads()
            loss.backward()
            lion_update(params, model.params.grads(), momentum,
                        lr=config.learning_rate, weight_decay=config.weight_decay)
            ema_update(ema, params, config.ema_decay)
            epoch_losses.append(float(loss.detach()))
        with torch.no_grad():
            for name, p in eval_net.named_parameters():
                p.copy_(ema[name])
        val_loss = _epoch_loss(eval_net, val, config.batch_size)
        history.append((float(np.mean(epoch_losses)), val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_state = {name: t.detach().clone() for name, t in ema.items()}

    with torch.no_grad():
        for name, p in net.named_parameters():
            p.copy_(best_state[name])
    model.best_val_loss = best_val
    model.history = tuple(history)
    return model
