"""Parameter-update rules: sign-momentum descent and exponential moving average.

Both operate in place on name -> tensor mappings so the same code drives
the denoiser and the classifier.  The descent rule interpolates fresh
gradient into the stored momentum, takes the sign, and applies decoupled
weight decay:

    u = sign(b1 * m + (1 - b1) * g)
    p <- p - lr * (u + wd * p)
    m <- b2 * m + (1 - b2) * g

sign(0) = 0, so a zero-gradient zero-momentum entry moves only through
weight decay.
"""

from __future__ import annotations

import torch

LION_BETA1 = 0.9
LION_BETA2 = 0.99


def init_momentum(params: dict) -> dict:
    return {name: torch.zeros_like(p) for name, p in params.items()}


@torch.no_grad()
def lion_update(params: dict, grads: dict, momentum: dict, lr: float,
                weight_decay: float = 0.0, beta1: float = LION_BETA1,
                beta2: float = LION_BETA2) -> None:
    """One optimizer step, mutating ``params`` and ``momentum``."""
    if lr <= 0.0:
        raise ValueError("learning rate must be positive")
    if weight_decay < 0.0:
        raise ValueError("weight decay must be non-negative")
    if set(params) != set(grads) or set(params) != set(momentum):
        raise ValueError("params, grads and momentum must share the same keys")
    for name, p in params.items():
        g = grads[name]
        m = momentum[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        update = torch.sign(beta1 * m + (1.0 - beta1) * g)
        p.add_(update + weight_decay * p, alpha=-lr)
        m.mul_(beta2).add_(g, alpha=1.0 - beta2)


@torch.no_grad()
def ema_update(ema: dict, params: dict, decay: float) -> None:
    """ema <- decay * ema + (1 - decay) * params, elementwise in place."""
    if not 0.0 < decay < 1.0:
        raise ValueError("decay must lie strictly inside (0, 1)")
    if set(ema) != set(params):
        raise ValueError("ema and params must share the same keys")
    for name, e in ema.items():
        p = params[name]
        if e.shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        e.mul_(decay).add_(p, alpha=1.0 - decay)
