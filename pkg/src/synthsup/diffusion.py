"""Training and sampling for the conditional denoiser.

Training draws a timestep and noise per item, jumps to x_t in closed
form, and regresses the injected noise under MSE; each item's condition
is replaced by the null token at the guidance drop rate so one network
learns both conditional and unconditional prediction.

Sampling runs the deterministic implicit reverse path (no fresh noise)
over a strided timestep subsequence.  Guided prediction blends the two
passes as

    eps_hat = eps_c + s * (eps_c - eps_u)

so scale 0 is a single conditional pass and positive scales cost exactly
one extra evaluation per step.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
import torch

from .conditioning import ConditionVector, multihot_batch
from .denoiser import Denoiser
from .optim import ema_update, init_momentum, lion_update
from .schedule import NoiseSchedule, forward_diffuse
from .toydata import ImageRecord, Provenance

DEFAULT_SAMPLE_STEPS = 200


@dataclass(frozen=True)
class DiffusionTrainConfig:
    steps: int = 4000
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    guidance_drop_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.guidance_drop_rate < 1.0:
            raise ValueError("guidance_drop_rate must lie in [0, 1)")
        if not 0.0 < self.ema_decay < 1.0:
            raise ValueError("ema_decay must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class SampleRequest:
    cond: ConditionVector
    cfg_scale: float = 0.0
    n_steps: int = DEFAULT_SAMPLE_STEPS
    seed: int = 0

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be non-negative")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")


class DiffusionTrainer:
    """Noise-regression training loop with EMA weight tracking."""

    def __init__(self, model: Denoiser, schedule: NoiseSchedule,
                 config: DiffusionTrainConfig):
        self.model = model
        self.schedule = schedule
        self.config = config
        self._rng = np.random.default_rng(
            np.random.SeedSequence([config.seed & 0x7FFFFFFF, 0x5EED]))
        params = model.params.tensors()
        self._momentum = init_momentum(params)
        self._ema = {name: p.detach().clone() for name, p in params.items()}

    def train_step(self, images, conds) -> float:
        """One update from images in [0, 1] and their conditions."""
        images = np.asarray(images, dtype=np.float64)
        if images.ndim != 3 or images.shape[0] == 0:
            raise ValueError("expected a non-empty (N, S, S) image batch")
        n = images.shape[0]
        if len(conds) != n:
            raise ValueError("one condition per image required")
        x0 = images * 2.0 - 1.0
        t = self._rng.integers(0, self.schedule.T, size=n)
        eps = self._rng.standard_normal(images.shape)
        x_t = forward_diffuse(x0, t, eps, self.schedule)

        drop = self._rng.random(n) < self.config.guidance_drop_rate
        null_row = ConditionVector.null().to_multihot()
        rows = multihot_batch(conds)
        rows[drop] = null_row

        net = self.model.net
        xt = torch.from_numpy(x_t[:, None].astype(np.float32))
        tt = torch.from_numpy(t)
        cc = torch.from_numpy(rows)
        target = torch.from_numpy(eps.astype(np.float32))[:, None]
        pred = net(xt, tt, cc)
        loss = torch.mean((pred - target) ** 2)
        self.model.params.zero_grads()
        loss.backward()
        params = self.model.params.tensors()
        lion_update(params, self.model.params.grads(), self._momentum,
                    lr=self.config.learning_rate,
                    weight_decay=self.config.weight_decay)
        ema_update(self._ema, params, self.config.ema_decay)
        return float(loss.detach())

    def fit(self, images, conds, log_every: int = 0) -> list:
        """Run the configured number of steps over a fixed corpus and
        return the per-step loss trajectory."""
        images = np.asarray(images, dtype=np.float64)
        n = images.shape[0]
        if n == 0:
            raise ValueError("empty training corpus")
        losses = []
        for step in range(self.config.steps):
            pick = self._rng.integers(0, n, size=min(self.config.batch_size, n))
            losses.append(self.train_step(images[pick], [conds[i] for i in pick]))
            if log_every and (step + 1) % log_every == 0:
                recent = float(np.mean(losses[-log_every:]))
                print(f"step {step + 1}/{self.config.steps} loss {recent:.4f}")
        return losses

    def ema_model(self) -> Denoiser:
        """Denoiser carrying the EMA weights (the ones worth sampling from)."""
        clone = Denoiser.create(self.model.config, seed=0)
        clone.params.load_state_arrays(
            {name: t.detach().cpu().numpy() for name, t in self._ema.items()})
        return clone


def guided_epsilon(model: Denoiser, x_t, t, cond, cfg_scale: float) -> np.ndarray:
    """Classifier-free-guided noise estimate.

    Scale 0 returns the conditional prediction from a single pass; any
    positive scale adds one null-condition pass and extrapolates.
    """
    if cfg_scale < 0:
        raise ValueError("cfg_scale must be non-negative")
    eps_c = model.predict(x_t, t, cond)
    if cfg_scale == 0:
        return eps_c
    null = ConditionVector.null().to_multihot()
    eps_u = model.predict(x_t, t, null)
    return eps_c + cfg_scale * (eps_c - eps_u)


def sample_timesteps(T: int, n_steps: int) -> np.ndarray:
    """Strided descending subsequence from T-1 down to 0, n_steps long."""
    if not 1 <= n_steps <= T:
        raise ValueError(f"n_steps must lie in [1, {T}]")
    ts = np.unique(np.round(np.linspace(T - 1, 0, n_steps)).astype(np.int64))[::-1]
    return ts


def _implicit_reverse(model: Denoiser, x, ts, cond_rows, cfg_scale: float,
                      schedule: NoiseSchedule) -> np.ndarray:
    """Deterministic reverse walk; returns the final clean estimate in [-1, 1]."""
    bars = schedule.alpha_bars
    for i, t in enumerate(ts):
        eps = guided_epsilon(model, x, int(t), cond_rows, cfg_scale)
        ab = bars[t]
        x0 = np.clip((x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab), -1.0, 1.0)
        if i + 1 < len(ts):
            ab_prev = bars[ts[i + 1]]
            x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return x0


def ddim_sample(model: Denoiser, request: SampleRequest,
                schedule: NoiseSchedule) -> np.ndarray:
    """One image in [0, 1] from a seeded deterministic reverse path."""
    size = model.config.image_size
    rng = np.random.default_rng(request.seed)
    x = rng.standard_normal((1, size, size))
    ts = sample_timesteps(schedule.T, request.n_steps)
    rows = request.cond.to_multihot()[None, :]
    x0 = _implicit_reverse(model, x, ts, rows, request.cfg_scale, schedule)
    return ((x0[0] + 1.0) / 2.0).clip(0.0, 1.0)


def replica_seed(base_seed: int, source_index: int, replica_index: int) -> int:
    """Stable per-replica noise seed from (base, source, replica)."""
    digest = hashlib.blake2b(
        struct.pack("<qqq", base_seed, source_index, replica_index),
        digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generate_replicas(model: Denoiser, source_records, n_replicas: int,
                      cfg_scale: float, base_seed: int,
                      schedule: NoiseSchedule,
                      n_steps: int = DEFAULT_SAMPLE_STEPS,
                      batch_size: int = 128, progress: bool = False) -> list:
    """``n_replicas`` label-faithful synthetic copies of every source record.

    Replica k of source i reuses record i's labels and demographics and
    draws its starting noise from ``replica_seed(base_seed, i, k)``, so
    pools are reproducible record by record and can be sliced by replica
    index.  Output order is replica-major: all of replica 1, then 2, ...
    """
    source_records = list(source_records)
    if not source_records:
        raise ValueError("no source records to replicate")
    if n_replicas < 1:
        raise ValueError("n_replicas must be positive")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    size = model.config.image_size
    ts = sample_timesteps(schedule.T, n_steps)
    out = []
    for k in range(1, n_replicas + 1):
        for start in range(0, len(source_records), batch_size):
            chunk = source_records[start:start + batch_size]
            seeds = [replica_seed(base_seed, start + j, k)
                     for j in range(len(chunk))]
            x = np.stack([np.random.default_rng(s)
                          .standard_normal((size, size)) for s in seeds])
            rows = multihot_batch([r.condition_vector() for r in chunk])
            x0 = _implicit_reverse(model, x, ts, rows, cfg_scale, schedule)
            images = ((x0 + 1.0) / 2.0).clip(0.0, 1.0)
            for j, rec in enumerate(chunk):
                out.append(ImageRecord(
                    pixels=images[j].astype(np.float32),
                    patient_id=rec.patient_id,
                    label_states=rec.label_states,
                    age_decade=rec.age_decade, sex=rec.sex, race=rec.race,
                    provenance=Provenance.synthetic(
                        seed=seeds[j], cfg_scale=float(cfg_scale),
                        replica_index=k, source_index=start + j)))
            if progress:
                done = start + len(chunk)
                print(f"replica {k}/{n_replicas}: {done}/{len(source_records)}")
    return out
