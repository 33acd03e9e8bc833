"""Adam optimizer with optional per-entry update masks.

Masks cover the one partially-frozen parameter in the model: the reserved
missing-value row of the categorical token table, which must stay exactly
zero while the rest of the table trains.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._entries = []
        for p in params:
            tensor, mask = p if isinstance(p, tuple) else (p, None)
            if not tensor.requires_grad:
                continue  # frozen tensors are never touched
            if mask is not None:
                mask = np.asarray(mask, dtype=bool)
                if mask.shape != tensor.shape:
                    raise ValueError("update mask shape must match the tensor")
            self._entries.append({
                "tensor": tensor,
                "mask": mask,
                "m": np.zeros_like(tensor.data),
                "v": np.zeros_like(tensor.data),
            })

    @property
    def tensors(self) -> list[Tensor]:
        return [e["tensor"] for e in self._entries]

    def zero_grad(self) -> None:
        for e in self._entries:
            e["tensor"].grad = None

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for e in self._entries:
            tensor = e["tensor"]
            if tensor.grad is None:
                continue
            g = tensor.grad
            if e["mask"] is not None:
                # masked entries see zero gradient forever, so their moments
                # stay zero and the update below is exactly 0.0
                g = np.where(e["mask"], g, 0.0)
            e["m"] = self.beta1 * e["m"] + (1.0 - self.beta1) * g
            e["v"] = self.beta2 * e["v"] + (1.0 - self.beta2) * g * g
            mhat = e["m"] / c1
            vhat = e["v"] / c2
            tensor.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
