"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, precision


def _relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(f: Callable[..., Tensor], inputs: Tensor | Sequence[Tensor], eps: float = 1e-4, floor: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` maps the input tensor(s) to a scalar tensor and must be
    deterministic (fix dropout masks and Gumbel noise inside it). Inputs
    must be float64. The error of each entry is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros from
    dividing by zero.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for x in xs:
        if x.dtype != np.float64:
            raise TypeError("grad_check needs float64 inputs")
        x.requires_grad = True
        x.grad = None
    with precision(np.float64):
        out = f(*xs)
        if out.data.size != 1:
            raise ValueError("grad_check needs a scalar-valued function")
        out.backward()
        worst = 0.0
        for x in xs:
            analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
            numeric = np.zeros_like(x.data)
            flat = x.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f(*xs).data)
                flat[i] = orig - eps
                fm = float(f(*xs).data)
                flat[i] = orig
                numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
            worst = max(worst, _relative_error(analytic, numeric, floor))
    return worst
