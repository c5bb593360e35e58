"""Noise schedules and the closed-form forward noising process.

A schedule is a beta sequence over timesteps t = 0 .. T-1.  With
alpha_t = 1 - beta_t and alpha_bar_t = prod_{s<=t} alpha_s, the forward
process admits the single-draw closed form

    x_t = sqrt(alpha_bar_t) * x_0 + sqrt(1 - alpha_bar_t) * eps,

eps ~ N(0, I), which is what training uses instead of walking the
t-step chain.  ``forward_diffuse_stepwise`` keeps the explicit walk
around as a distributional cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEDULE_KINDS = ("cosine", "linear")

# The cosine curve pins alpha_bar_0 = f(0)/f(0) = 1 exactly, which would
# force beta_0 = 0.  A tiny floor keeps every beta strictly inside (0, 1)
# while leaving alpha_bar_t within 1e-12 of the closed form.
_BETA_FLOOR = 1e-12
_BETA_CEIL = 0.999

_LINEAR_BETA_START = 1e-4
_LINEAR_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta / alpha / alpha_bar sequences, read-only."""

    kind: str
    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def from_betas(cls, kind: str, betas: np.ndarray) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64).copy()
        if betas.ndim != 1 or betas.size < 2:
            raise ValueError("beta sequence must be 1-D with at least 2 steps")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for arr in (betas, alphas, alpha_bars):
            arr.flags.writeable = False
        return cls(kind=kind, T=betas.size, betas=betas, alphas=alphas,
                   alpha_bars=alpha_bars)


def _cosine_alpha_bars(T: int) -> np.ndarray:
    t = np.arange(T, dtype=np.float64)
    f = np.cos(((t / T) + 0.008) / 1.008 * (math.pi / 2.0)) ** 2
    return f / f[0]


def make_schedule(kind: str, T: int) -> NoiseSchedule:
    """Build a schedule of ``T`` steps.

    kind "cosine": alpha_bar_t follows the squared-cosine curve
    f(t) = cos^2(((t/T + 0.008) / 1.008) * pi/2) normalized by f(0); betas
    are recovered from consecutive ratios and clipped to at most 0.999.
    kind "linear": betas linearly spaced from 1e-4 to 2e-2.
    """
    if T < 2:
        raise ValueError(f"T must be at least 2, got {T}")
    if kind == "cosine":
        bars = _cosine_alpha_bars(T)
        prev = np.concatenate(([1.0], bars[:-1]))
        betas = np.clip(1.0 - bars / prev, _BETA_FLOOR, _BETA_CEIL)
    elif kind == "linear":
        betas = np.linspace(_LINEAR_BETA_START, _LINEAR_BETA_END, T)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    return NoiseSchedule.from_betas(kind, betas)


def _check_timesteps(t: np.ndarray, T: int) -> None:
    if t.size == 0:
        raise ValueError("empty timestep array")
    if np.any(t < 0) or np.any(t >= T):
        raise ValueError(f"timestep out of range [0, {T})")


def forward_diffuse(x0: np.ndarray, t, eps: np.ndarray,
                    schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form jump to timestep ``t``.

    ``t`` may be a scalar or a leading-axis array matching ``x0``'s first
    dimension; ``eps`` must match ``x0``'s shape exactly.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {eps.shape} != x0 shape {x0.shape}")
    t_arr = np.asarray(t, dtype=np.int64)
    _check_timesteps(np.atleast_1d(t_arr), schedule.T)
    ab = schedule.alpha_bars[t_arr]
    if t_arr.ndim == 1:
        if t_arr.shape[0] != x0.shape[0]:
            raise ValueError("per-sample t must match the leading axis of x0")
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def forward_diffuse_stepwise(x0: np.ndarray, t: int, rng: np.random.Generator,
                             schedule: NoiseSchedule) -> np.ndarray:
    """Walk the Markov chain x_s = sqrt(1-beta_s) x_{s-1} + sqrt(beta_s) eps_s
    up to and including step ``t``.  Marginally equivalent to
    ``forward_diffuse`` at the same ``t``; used only as a cross-check.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _check_timesteps(np.atleast_1d(np.int64(t)), schedule.T)
    x = x0
    for s in range(int(t) + 1):
        noise = rng.standard_normal(x0.shape)
        x = np.sqrt(schedule.alphas[s]) * x + np.sqrt(schedule.betas[s]) * noise
    return x
