"""AdamW, Adadelta and cosine annealing."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

__all__ = ["Optimizer", "AdamW", "Adadelta", "cosine_lr", "CosineSchedule"]


class Optimizer:
    """Base class holding named parameters and per-parameter state buffers."""

    state_keys: tuple[str, ...] = ()

    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = dict(params)
        self.lr = float(lr)
        self.step_count = 0
        self.state = {
            name: {k: np.zeros_like(p.data) for k in self.state_keys} for name, p in self.params.items()
        }

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        for name, p in self.params.items():
            if p.grad is None:
                continue
            self._update(p, p.grad.astype(p.dtype, copy=False), self.state[name])

    def _update(self, p: Tensor, g: np.ndarray, st: dict):
        raise NotImplementedError

    def state_dict(self) -> dict:
        return {
            "type": type(self).__name__,
            "step": self.step_count,
            "lr": self.lr,
            "hyper": self.hyper(),
            "buffers": {f"{n}/{k}": v.copy() for n, st in self.state.items() for k, v in st.items()},
        }

    def load_state_dict(self, sd: dict):
        if sd["type"] != type(self).__name__:
            raise ValueError(f"optimizer state is for {sd['type']}, not {type(self).__name__}")
        self.step_count = int(sd["step"])
        self.lr = float(sd["lr"])
        for key, arr in sd["buffers"].items():
            name, k = key.rsplit("/", 1)
            if name in self.state:
                self.state[name][k] = np.array(arr, dtype=self.state[name][k].dtype)

    def hyper(self) -> dict:
        return {}


class AdamW(Optimizer):
    """Adam with decoupled weight decay: ``p -= lr * wd * p`` before the Adam step."""

    state_keys = ("m", "v")

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-3):
        super().__init__(params, lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay

    def hyper(self):
        return {"betas": [self.beta1, self.beta2], "eps": self.eps, "weight_decay": self.weight_decay}

    def _update(self, p, g, st):
        t = self.step_count
        if self.weight_decay:
            p.data *= 1.0 - self.lr * self.weight_decay
        st["m"] *= self.beta1
        st["m"] += (1.0 - self.beta1) * g
        st["v"] *= self.beta2
        st["v"] += (1.0 - self.beta2) * g * g
        mhat = st["m"] / (1.0 - self.beta1 ** t)
        vhat = st["v"] / (1.0 - self.beta2 ** t)
        p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


class Adadelta(Optimizer):
    """Adadelta with running squared-gradient and squared-update accumulators.

    ``lr`` scales the unit-corrected step (1.0 is the textbook method).
    """

    state_keys = ("sq_grad", "sq_delta")

    def __init__(self, params, lr=1.0, rho=0.9, eps=1e-6, weight_decay=0.0):
        super().__init__(params, lr)
        self.rho = rho
        self.eps = eps
        self.weight_decay = weight_decay

    def hyper(self):
        return {"rho": self.rho, "eps": self.eps, "weight_decay": self.weight_decay}

    def _update(self, p, g, st):
        if self.weight_decay:
            g = g + self.weight_decay * p.data
        st["sq_grad"] *= self.rho
        st["sq_grad"] += (1.0 - self.rho) * g * g
        delta = np.sqrt(st["sq_delta"] + self.eps) / np.sqrt(st["sq_grad"] + self.eps) * g
        st["sq_delta"] *= self.rho
        st["sq_delta"] += (1.0 - self.rho) * delta * delta
        p.data -= (self.lr * delta).astype(p.dtype)


def cosine_lr(t: float, base_lr: float, total: float, min_lr: float = 0.0) -> float:
    """``min_lr + (base_lr - min_lr) * (1 + cos(pi * t / total)) / 2``, held at ``min_lr`` past ``total``."""
    if total <= 0:
        return base_lr
    t = min(max(t, 0.0), total)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * t / total))


class CosineSchedule:
    def __init__(self, base_lr: float, total_steps: int, min_lr: float = 0.0):
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.min_lr = min_lr

    def __call__(self, step: int) -> float:
        return cosine_lr(step, self.base_lr, self.total_steps, self.min_lr)
