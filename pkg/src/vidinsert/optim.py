"""AdamW with decoupled weight decay over a named parameter dict."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    """Standard two-moment AdamW; weight decay multiplies into the weights
    directly (decoupled), not into the gradient."""

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 5e-6,
        betas: tuple[float, float] = (0.9, 0.95),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                p.data *= np.float32(1.0 - self.lr * self.weight_decay)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= np.float32(self.lr) * update

    def grad_norms(self) -> dict[str, float]:
        return {
            name: float(np.linalg.norm(p.grad)) if p.grad is not None else 0.0
            for name, p in self.params.items()
        }

    def state(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.m[name] = np.array(arrays[f"opt.m.{name}"], dtype=np.float32)
            self.v[name] = np.array(arrays[f"opt.v.{name}"], dtype=np.float32)
        self.step_count = step_count
