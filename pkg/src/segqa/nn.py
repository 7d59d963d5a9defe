"""Parameter containers and basic layers on top of :mod:`segqa.autodiff`."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, batch_norm, conv3d, conv_transpose3d, get_default_dtype
from .errors import ShapeMismatch


class Module:
    """Holds parameters (grad-requiring tensors), buffers and child modules.

    Names are dotted attribute paths, e.g. ``encoder.conv1.weight``.
    """

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for key, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + key] = val
            elif isinstance(val, Module):
                out.update(val.named_parameters(prefix + key + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{prefix}{key}.{i}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for key, val in vars(self).items():
            if isinstance(val, Module):
                out.update(val.named_buffers(prefix + key + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.named_buffers(f"{prefix}{key}.{i}."))
        return out

    def modules(self):
        yield self
        for val in vars(self).values():
            if isinstance(val, Module):
                yield from val.modules()
            elif isinstance(val, (list, tuple)):
                for item in val:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, flag: bool = True):
        for m in self.modules():
            m.training = flag
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        sd = {k: v.data.copy() for k, v in self.named_parameters().items()}
        sd.update({k: v.copy() for k, v in self.named_buffers().items()})
        return sd

    def load_state_dict(self, sd: dict[str, np.ndarray], strict: bool = True):
        params = self.named_parameters()
        bufs = self.named_buffers()
        missing = [k for k in list(params) + list(bufs) if k not in sd]
        unexpected = [k for k in sd if k not in params and k not in bufs]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch; missing={missing} unexpected={unexpected}")
        bad = [k for k, v in sd.items() if k in params and params[k].shape != np.shape(v)]
        bad += [k for k, v in sd.items() if k in bufs and bufs[k].shape != np.shape(v)]
        if bad:
            raise ShapeMismatch(f"shape mismatch for {bad}", names=bad)
        for k, v in sd.items():
            if k in params:
                params[k].data[...] = v
            elif k in bufs:
                bufs[k][...] = v
        return self

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.named_parameters().values())


def _param(arr) -> Tensor:
    return Tensor(np.asarray(arr), requires_grad=True, dtype=get_default_dtype())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = _param(rng.uniform(-bound, bound, (in_features, out_features)))
        self.bias = _param(rng.uniform(-bound, bound, out_features)) if bias else None
        self.in_features, self.out_features = in_features, out_features

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"Linear expects last dim {self.in_features}, got input {x.shape}")
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv3d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        fan_in = in_channels * kernel ** 3
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = _param(rng.uniform(-bound, bound, (out_channels, in_channels, kernel, kernel, kernel)))
        self.bias = _param(rng.uniform(-bound, bound, out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias)


class ConvTranspose3d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(in_channels * kernel ** 3)
        self.weight = _param(rng.uniform(-bound, bound, (in_channels, out_channels, kernel, kernel, kernel)))
        self.bias = _param(rng.uniform(-bound, bound, out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose3d(x, self.weight, self.bias)


class BatchNorm1d(Module):
    """Normalises ``(N, C)`` features over the node axis.

    With ``graph_stats`` the input's own statistics are used in eval mode as
    well (one graph is one batch), and the running buffers are only tracked.
    """

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5, graph_stats: bool = False):
        super().__init__()
        self.graph_stats = graph_stats
        dt = get_default_dtype()
        self.weight = _param(np.ones(num_features))
        self.bias = _param(np.zeros(num_features))
        self._buffers["running_mean"] = np.zeros(num_features, dt)
        self._buffers["running_var"] = np.ones(num_features, dt)
        self.momentum, self.eps = momentum, eps

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(
            x, self.weight, self.bias,
            self._buffers["running_mean"], self._buffers["running_var"],
            train=self.training or self.graph_stats, momentum=self.momentum, eps=self.eps,
            update_stats=self.training,
        )
