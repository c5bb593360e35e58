"""Ordered, named access to module parameters and their gradients.

Model wrappers expose their weights through ``ModelParams`` so the
optimizer, the EMA tracker and the checkpoint writer all agree on one
naming scheme and one ordering: the module's declaration order.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch


class ModelParams:
    """View over a module's parameters keyed by dotted name."""

    def __init__(self, module: torch.nn.Module):
        self._module = module

    def names(self) -> list:
        return [name for name, _ in self._module.named_parameters()]

    def tensors(self) -> "OrderedDict[str, torch.Tensor]":
        return OrderedDict(self._module.named_parameters())

    def grads(self) -> "OrderedDict[str, torch.Tensor]":
        """Gradient per parameter, zeros where nothing has accumulated.

        Shapes always match the parameters exactly.
        """
        out = OrderedDict()
        for name, p in self._module.named_parameters():
            out[name] = p.grad if p.grad is not None else torch.zeros_like(p)
        return out

    def zero_grads(self) -> None:
        for _, p in self._module.named_parameters():
            if p.grad is not None:
                p.grad.detach_()
                p.grad.zero_()

    @property
    def count(self) -> int:
        return sum(p.numel() for _, p in self._module.named_parameters())

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """float32 copies in declaration order, for serialization."""
        out = OrderedDict()
        for name, p in self._module.named_parameters():
            out[name] = p.detach().cpu().numpy().astype(np.float32)
        return out

    def load_state_arrays(self, arrays) -> None:
        params = self.tensors()
        if list(arrays.keys()) != list(params.keys()):
            raise ValueError("parameter names do not match this model")
        with torch.no_grad():
            for name, p in params.items():
                arr = np.asarray(arrays[name])
                if tuple(arr.shape) != tuple(p.shape):
                    raise ValueError(f"shape mismatch for {name!r}: "
                                     f"{arr.shape} vs {tuple(p.shape)}")
                p.copy_(torch.from_numpy(arr.astype(np.float32)))


class RecordedForward:
    """Mixin giving a wrapper an explicit forward/backward pair.

    ``_record(output)`` stashes the graph-bearing output; ``backward``
    seeds it with an upstream gradient and returns named gradient arrays.
    Calling backward twice, or before any forward, is a state error.
    """

    _recorded: torch.Tensor | None = None

    def _record(self, output: torch.Tensor) -> None:
        self._recorded = output

    def backward(self, upstream: np.ndarray) -> "OrderedDict[str, np.ndarray]":
        if self._recorded is None:
            raise RuntimeError("backward called without a recorded forward pass")
        out = self._recorded
        self._recorded = None
        up = torch.as_tensor(np.asarray(upstream), dtype=out.dtype)
        if up.shape != out.shape:
            raise ValueError(f"upstream gradient shape {tuple(up.shape)} "
                             f"!= output shape {tuple(out.shape)}")
        params = self.params  # type: ignore[attr-defined]
        params.zero_grads()
        out.backward(up)
        return OrderedDict((name, g.detach().cpu().numpy().astype(np.float64))
                           for name, g in params.grads().items())
