"""Adam optimizer with bias correction and a halving step schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import Tensor
from .exceptions import ContractError


class Adam:
    """Adam over an ordered parameter list.

    First/second moment buffers are kept per parameter in list order, so
    the state can be serialized and restored as plain arrays. Defaults:
    betas (0.9, 0.999), eps 1e-8.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 4e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        if not self.params:
            raise ContractError("Adam needs at least one parameter")
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        """Apply one update from the gradients currently stored on params.

        Parameters whose ``grad`` is None are skipped (their moments do
        not advance either, keeping skipped steps equivalent to a zero
        gradient only when the caller wants that explicitly).
        """
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** t
        bias2 = 1.0 - b2 ** t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)

    # -- state serialization -------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i in range(len(self.params)):
            out[f"m{i}"] = self.m[i]
            out[f"v{i}"] = self.v[i]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for i, p in enumerate(self.params):
            m = arrays[f"m{i}"]
            v = arrays[f"v{i}"]
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ContractError(
                    f"optimizer state {i} has shape {m.shape}, parameter has {p.data.shape}")
            self.m[i] = m.astype(p.data.dtype)
            self.v[i] = v.astype(p.data.dtype)
        self.step_count = int(step_count)


def halved_lr(base_lr: float, epoch: int, halve_every: int = 50) -> float:
    """Learning rate halved once per ``halve_every`` completed epochs."""
    if halve_every < 1:
        raise ContractError("halve_every must be a positive integer")
    return base_lr * (0.5 ** (epoch // halve_every))
