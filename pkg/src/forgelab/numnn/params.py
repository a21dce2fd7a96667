"""Parameter store and Adam optimizer.

All parameters live in a flat name -> float32 array mapping so that
checkpointing, freezing and gradient checking can treat every model
uniformly.
"""

from __future__ import annotations

import numpy as np


class ParamStore:
    """Named float32 parameters with per-name gradients and trainable flags."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.trainable: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        value = np.ascontiguousarray(value, dtype=np.float32)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.trainable[name] = bool(trainable)
        return self.params[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def accumulate_grad(self, name: str, grad: np.ndarray) -> None:
        g = self.grads[name]
        if g.shape != grad.shape:
            raise ValueError(
                f"gradient shape {grad.shape} != parameter shape {g.shape} for {name}"
            )
        g += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def trainable_names(self) -> list[str]:
        return [n for n, t in self.trainable.items() if t]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for n, v in state.items():
            if n not in self.params:
                raise KeyError(f"unknown parameter: {n}")
            if self.params[n].shape != v.shape:
                raise ValueError(f"shape mismatch for {n}")
            self.params[n][...] = v


class Adam:
    """Adam with decoupled weight decay (p -= lr*wd*p), frozen-aware.

    Defaults: lr 1e-4, weight decay 1e-5, betas (0.9, 0.999), eps 1e-8.
    """

    def __init__(self, lr=1e-4, weight_decay=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, store: ParamStore) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in store.trainable_names():
            p = store.params[name]
            if name not in store.grads:
                raise KeyError(f"missing gradient for trainable parameter {name}")
            g = store.grads[name].astype(np.float32)
            m = self._m.setdefault(name, np.zeros_like(p))
            v = self._v.setdefault(name, np.zeros_like(p))
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(np.float32)
            if self.weight_decay:
                p -= np.float32(self.lr * self.weight_decay) * p
