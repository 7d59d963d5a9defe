"""Finite-difference checks over every differentiable op and the composed model."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check, precision
from .model import EncoderConfig, GraphIndex, ModelConfig, NodeformerConfig, SegErrorModel, gumbel_noise

TOLERANCE = 1e-4


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def _weights(rng, shape):
    return rng.standard_normal(shape)


def op_cases(rng: np.random.Generator) -> dict:
    """Name -> (function, inputs). Every function returns a scalar and is deterministic."""
    W = _weights(rng, (4, 3))
    cases = {}
    cases["add_broadcast"] = (lambda a, b: ((a + b) * W[:, :1]).sum(), [_t(rng, 4, 1), _t(rng, 1, 1)])
    cases["sub"] = (lambda a, b: ((a - b) * W).sum(), [_t(rng, 4, 3), _t(rng, 3)])
    cases["mul"] = (lambda a, b: ((a * b) * W).sum(), [_t(rng, 4, 3), _t(rng, 4, 3)])
    cases["div"] = (lambda a, b: ((a / b) * W).sum(), [_t(rng, 4, 3), Tensor(rng.uniform(1, 2, (4, 3)))])
    cases["pow"] = (lambda a: ((a ** 3) * W).sum(), [_t(rng, 4, 3)])
    cases["matmul"] = (lambda a, b: ((a @ b) * W[:, :1]).sum(), [_t(rng, 4, 3), _t(rng, 3, 1)])
    cases["batched_matmul"] = (lambda a, b: ((a @ b) ** 2).sum(), [_t(rng, 2, 4, 3), _t(rng, 2, 3, 2)])
    cases["getitem"] = (lambda a: (a[np.array([0, 2, 2])] * W[:3]).sum(), [_t(rng, 4, 3)])
    cases["sum_axis"] = (lambda a: (a.sum(axis=0) ** 2).sum(), [_t(rng, 4, 3)])
    cases["mean_keepdims"] = (lambda a: ((a - a.mean(axis=1, keepdims=True)) ** 2).sum(), [_t(rng, 4, 3)])
    cases["reshape_transpose"] = (lambda a: (a.reshape(3, 4).transpose(1, 0) * W).sum(), [_t(rng, 4, 3)])
    cases["abs"] = (lambda a: (a.abs() * W).sum(), [Tensor(rng.uniform(0.2, 1, (4, 3)) * rng.choice([-1, 1], (4, 3)))])
    cases["sqrt"] = (lambda a: (a.sqrt() * W).sum(), [Tensor(rng.uniform(0.5, 2, (4, 3)))])
    cases["exp"] = (lambda a: (ad.exp(a) * W).sum(), [_t(rng, 4, 3)])
    cases["log"] = (lambda a: (ad.log(a) * W).sum(), [Tensor(rng.uniform(0.5, 2, (4, 3)))])
    cases["tanh"] = (lambda a: (ad.tanh(a) * W).sum(), [_t(rng, 4, 3)])
    # keep inputs away from the kink
    kinked = Tensor(rng.uniform(0.1, 1, (4, 3)) * rng.choice([-1, 1], (4, 3)))
    cases["relu"] = (lambda a: (ad.relu(a) * W).sum(), [kinked])
    cases["leaky_relu"] = (lambda a: (ad.leaky_relu(a) * W).sum(), [Tensor(kinked.data.copy())])
    cases["softmax"] = (lambda a: (ad.softmax(a, axis=1) * W).sum(), [_t(rng, 4, 3)])
    cases["log_softmax"] = (lambda a: (ad.log_softmax(a, axis=1) * W).sum(), [_t(rng, 4, 3)])
    cases["concat"] = (lambda a, b: (ad.concat([a, b], axis=0) ** 2 * rng_fixed(7, (5, 3))).sum(), [_t(rng, 2, 3), _t(rng, 3, 3)])
    idx = np.array([0, 1, 1, 3, 2])
    cases["gather_scatter"] = (
        lambda a: (ad.scatter_add_rows(ad.gather_rows(a, idx) * rng_fixed(3, (5, 3)), idx[::-1], 4) ** 2).sum(),
        [_t(rng, 4, 3)],
    )
    mask = rng.random((4, 3)) > 0.3
    cases["dropout"] = (lambda a: (ad.dropout(a, 0.3, True, mask=mask) * W).sum(), [_t(rng, 4, 3)])
    rm, rv = np.zeros(3), np.ones(3)
    cases["batch_norm"] = (
        lambda x, g, b: (ad.batch_norm(x, g, b, rm.copy(), rv.copy(), True) * rng_fixed(5, (6, 3))).sum(),
        [_t(rng, 6, 3), _t(rng, 3), _t(rng, 3)],
    )
    cases["conv3d"] = (
        lambda x, w, b: (ad.conv3d(x, w, b) * rng_fixed(11, (2, 2, 3, 3, 3))).sum(),
        [_t(rng, 2, 1, 5, 5, 5), _t(rng, 2, 1, 3, 3, 3), _t(rng, 2)],
    )
    cases["conv_transpose3d"] = (
        lambda x, w, b: (ad.conv_transpose3d(x, w, b) * rng_fixed(13, (2, 1, 3, 3, 3))).sum(),
        [_t(rng, 2, 2, 1, 1, 1), _t(rng, 2, 1, 3, 3, 3), _t(rng, 1)],
    )
    cases["smooth_l1"] = (lambda a: ad.smooth_l1(a, rng_fixed(17, (6,))), [_t(rng, 6)])
    cases["l1"] = (lambda a: ad.l1(a, rng_fixed(19, (6,)) + 3.0), [_t(rng, 6)])
    cases["mse"] = (lambda a: ad.mse(a, rng_fixed(23, (6,))), [_t(rng, 6)])
    labels = rng.integers(0, 5, 6)
    cases["cross_entropy"] = (lambda a: ad.cross_entropy(a, labels), [_t(rng, 6, 5)])
    cases["cosine_similarity_loss"] = (lambda a: ad.cosine_similarity_loss(a, rng_fixed(29, (6, 3))), [_t(rng, 6, 3)])
    return cases


def rng_fixed(seed: int, shape) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def composed_case(seed: int = 0, n_nodes: int = 7):
    """Scalar loss through encoder -> one attention layer -> head with fixed Gumbel noise and dropout masks."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(
        encoder=EncoderConfig(c1=2, c2=4),
        nodeformer=NodeformerConfig(layers=1, heads=2, model_dim=8, random_features=8),
        seed=seed,
    )
    model = SegErrorModel(cfg).train()
    edges = np.array([[i, i + 1] for i in range(n_nodes - 1)])
    graph = GraphIndex(edges, n_nodes)
    gumbel = [[gumbel_noise(rng, (2, n_nodes, 4))]]
    masks = (rng.random((n_nodes, 4)) >= 0.2, rng.random((n_nodes, 2)) >= 0.2)
    target = rng.uniform(-0.3, 0.3, n_nodes)
    x = Tensor(rng.standard_normal((n_nodes, 1, 5, 5, 5)))

    def f(x):
        return ad.smooth_l1(model(x, graph, seed, gumbel, masks), target, beta=0.05)

    return f, x, model


def gradient_check_suite(seed: int = 0, include_parameters: bool = True) -> dict[str, float]:
    """Max relative error per case (64-bit)."""
    results = {}
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        for name, (f, inputs) in op_cases(rng).items():
            results[name] = grad_check(f, inputs)
        f, x, model = composed_case(seed)
        results["composed_input"] = grad_check(f, [x])
        if include_parameters:
            params = list(model.named_parameters().values())
            # a few small parameter tensors cover every block
            picks = [p for p in params if p.data.size <= 64]

            def g(*ps):
                return f(x)

            results["composed_parameters"] = grad_check(g, picks)
    return results
