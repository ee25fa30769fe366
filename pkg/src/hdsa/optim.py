"""AdamW: adaptive moments with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .autodiff import NumericalError, Tensor


class AdamW:
    """Standard decoupled-weight-decay Adam over a named parameter dict.

    With weight_decay=0 this is plain Adam. ``step()`` consumes and clears
    the ``grad`` slot of every parameter; parameters with no gradient are
    left untouched. State updates are deterministic given call order.
    """

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.data.dtype)
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment buffers under 'adam.m.' / 'adam.v.' prefixes, for checkpoints."""
        out = {}
        for k in self.params:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int):
        self.t = int(t)
        for k in self.params:
            self.m[k] = arrays[f"adam.m.{k}"].astype(self.m[k].dtype).reshape(self.m[k].shape)
            self.v[k] = arrays[f"adam.v.{k}"].astype(self.v[k].dtype).reshape(self.v[k].shape)
