"""Conditional UNet noise predictor.

The network maps (x_t, t, condition) -> predicted noise with the same
shape as x_t.  Timesteps enter through a sinusoidal embedding and a
two-layer MLP; the condition enters as a sum of embedding-table rows
projected to the same width.  Every residual block folds the combined
embedding in as an additive channel bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from .checkpoint import MAGIC_DENOISER, load_checkpoint, save_checkpoint
from .conditioning import N_CONDITION_ROWS, ConditionVector, multihot_batch
from .params import ModelParams, RecordedForward


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 32
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2, 2)
    time_embed_dim: int = 64
    cond_embed_dim: int = 64
    guidance_drop_rate: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "channel_multipliers",
                           tuple(int(m) for m in self.channel_multipliers))
        if self.image_size < 4:
            raise ValueError("image_size must be at least 4")
        if not self.channel_multipliers:
            raise ValueError("need at least one channel multiplier")
        if any(m < 1 for m in self.channel_multipliers):
            raise ValueError("channel multipliers must be positive")
        levels = len(self.channel_multipliers)
        if self.image_size % (2 ** (levels - 1)) != 0:
            raise ValueError("image_size must be divisible by 2**(levels-1)")
        if self.base_channels < 4 or self.base_channels % 4 != 0:
            raise ValueError("base_channels must be a positive multiple of 4")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be a positive even number")
        if self.cond_embed_dim < 1:
            raise ValueError("cond_embed_dim must be positive")
        if not 0.0 <= self.guidance_drop_rate < 1.0:
            raise ValueError("guidance_drop_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(d["channel_multipliers"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        d = dict(d)
        d["channel_multipliers"] = tuple(d["channel_multipliers"])
        return cls(**d)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard sin/cos position code: (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32)
                      / max(half - 1, 1))
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    """Two 3x3 convs with an additive embedding bias between them."""

    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, c_out)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class DenoiserNet(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        cfg = config
        emb_dim = cfg.time_embed_dim
        chans = [cfg.base_channels * m for m in cfg.channel_multipliers]

        self.cond_table = nn.Parameter(torch.zeros(N_CONDITION_ROWS, cfg.cond_embed_dim))
        nn.init.normal_(self.cond_table, std=0.02)
        self.cond_proj = nn.Linear(cfg.cond_embed_dim, emb_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_embed_dim, emb_dim), nn.SiLU(),
            nn.Linear(emb_dim, emb_dim))

        self.conv_in = nn.Conv2d(1, chans[0], 3, padding=1)
        self.down_blocks = nn.ModuleList(
            [ResidualBlock(chans[i], chans[i], emb_dim) for i in range(len(chans))])
        self.downsamples = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i + 1], 3, stride=2, padding=1)
             for i in range(len(chans) - 1)])
        self.mid_block = ResidualBlock(chans[-1], chans[-1], emb_dim)
        self.up_blocks = nn.ModuleList(
            [ResidualBlock(chans[i] * 2, chans[i], emb_dim)
             for i in reversed(range(len(chans)))])
        self.upsamples = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i - 1], 3, padding=1)
             for i in reversed(range(1, len(chans)))])
        self.out_norm = _norm(chans[0])
        self.conv_out = nn.Conv2d(chans[0], 1, 3, padding=1)
        self._time_dim = cfg.time_embed_dim

    def forward(self, x, t, cond_rows):
        emb = self.time_mlp(sinusoidal_embedding(t, self._time_dim).to(x.dtype))
        emb = emb + self.cond_proj(cond_rows @ self.cond_table)

        h = self.conv_in(x)
        skips = []
        for i, block in enumerate(self.down_blocks):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = self.mid_block(h, emb)
        for i, block in enumerate(self.up_blocks):
            h = block(torch.cat([h, skips[len(skips) - 1 - i]], dim=1), emb)
            if i < len(self.upsamples):
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)
        return self.conv_out(torch.nn.functional.silu(self.out_norm(h)))


class Denoiser(RecordedForward):
    """Numpy-facing wrapper around the UNet.

    ``eval_count`` increments once per network evaluation (one batch pass),
    which is what samplers are billed by.
    """

    def __init__(self, config: DenoiserConfig, net: DenoiserNet):
        self.config = config
        self.net = net
        self.eval_count = 0

    @classmethod
    def create(cls, config: DenoiserConfig, seed: int = 0) -> "Denoiser":
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            net = DenoiserNet(config)
        return cls(config, net)

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.net)

    def _prepare(self, x_t, t, cond):
        x = np.asarray(x_t, dtype=np.float32)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.config.image_size, self.config.image_size):
            raise ValueError(f"expected images of size {self.config.image_size}, "
                             f"got array of shape {np.asarray(x_t).shape}")
        n = x.shape[0]
        t_arr = np.broadcast_to(np.asarray(t, dtype=np.int64), (n,))
        if np.any(t_arr < 0):
            raise ValueError("negative timestep")
        if isinstance(cond, ConditionVector):
            rows = np.tile(cond.to_multihot(), (n, 1))
        else:
            rows = np.asarray(cond, dtype=np.float32)
            if rows.ndim == 1:
                rows = np.tile(rows, (n, 1))
        if rows.shape != (n, N_CONDITION_ROWS):
            raise ValueError(f"condition rows must have shape ({n}, {N_CONDITION_ROWS})")
        dtype = next(self.net.parameters()).dtype
        xt = torch.from_numpy(x[:, None]).to(dtype)
        tt = torch.from_numpy(t_arr.copy())
        cc = torch.from_numpy(np.ascontiguousarray(rows, dtype=np.float32)).to(dtype)
        return xt, tt, cc, single

    def predict(self, x_t, t, cond) -> np.ndarray:
        """Predicted noise for a batch (N,H,W) or a single image (H,W)."""
        xt, tt, cc, single = self._prepare(x_t, t, cond)
        self.eval_count += 1
        with torch.no_grad():
            eps = self.net(xt, tt, cc)
        out = eps[:, 0].numpy().astype(np.float64)
        return out[0] if single else out

    def forward_recorded(self, x_t, t, cond) -> np.ndarray:
        """Like predict, but keeps the graph so ``backward`` can run."""
        xt, tt, cc, single = self._prepare(x_t, t, cond)
        self.eval_count += 1
        eps = self.net(xt, tt, cc)
        out = eps[0, 0] if single else eps[:, 0]
        self._record(out)
        return out.detach().numpy().astype(np.float64)

    def save(self, path) -> None:
        save_checkpoint(path, MAGIC_DENOISER, self.config.to_dict(),
                        self.params.state_arrays())

    @classmethod
    def load(cls, path) -> "Denoiser":
        config, arrays = load_checkpoint(path, MAGIC_DENOISER)
        model = cls.create(DenoiserConfig.from_dict(config), seed=0)
        model.params.load_state_arrays(arrays)
        return model
