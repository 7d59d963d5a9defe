"""Graph-transformer error estimator, its ablations and the pretext networks.

Pipeline of the full model: per-node 5x5x5 intensity blocks -> two 3x3x3
convolutions -> linear lift to the model width -> stacked kernelized
attention layers over all nodes (plus a neighbour-mean term along mesh
edges) -> three-layer MLP head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (
    Tensor,
    exp,
    flatten,
    gather_rows,
    leaky_relu,
    load_checkpoint,
    relu,
    save_checkpoint,
    scatter_add_rows,
    tanh,
)
from .autodiff import dropout as _dropout
from .errors import ConfigError, ShapeMismatch
from .nn import BatchNorm1d, Conv3d, ConvTranspose3d, Linear, Module

MAIN_VARIANTS = ("full", "cnn_mlp", "gnn_mlp")
PRETEXT_VARIANTS = ("vertnorm", "recon", "maskrecon")
VARIANTS = MAIN_VARIANTS + PRETEXT_VARIANTS
MODES = ("regression", "classification")
N_CLASSES = 5
SUBVOLUME = 5


# ---------------------------------------------------------------- configs


@dataclass
class EncoderConfig:
    c1: int = 16
    c2: int = 32
    kernel: int = 3


@dataclass
class NodeformerConfig:
    layers: int = 3
    heads: int = 8
    model_dim: int = 64
    random_features: int = 64
    gumbel_temperature: float = 0.25
    # linear warm-down target for the temperature; None keeps it constant
    gumbel_temperature_final: float | None = None
    gumbel_samples: int = 1
    use_edge_bias: bool = True
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}", "nodeformer.model_dim")
        if self.random_features < 1:
            raise ConfigError("random_features must be >= 1", "nodeformer.random_features")
        if self.gumbel_temperature <= 0:
            raise ConfigError("gumbel_temperature must be > 0", "nodeformer.gumbel_temperature")
        if self.gumbel_samples < 1:
            raise ConfigError("gumbel_samples must be >= 1", "nodeformer.gumbel_samples")


@dataclass
class HeadConfig:
    dropout: float = 0.2
    # mm value of a saturated tanh output
    sd_scale: float = 0.5


@dataclass
class ModelConfig:
    variant: str = "full"
    mode: str = "regression"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    nodeformer: NodeformerConfig = field(default_factory=NodeformerConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    seed: int = 0
    # "graph": BatchNorm normalises with each graph's own statistics in eval
    # mode too; "running": classic running averages
    norm_stats: str = "graph"

    def __post_init__(self):
        if self.norm_stats not in ("graph", "running"):
            raise ConfigError(f"unknown norm_stats {self.norm_stats!r}", "model.norm_stats")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}", "model.variant")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}", "model.mode")
        for name, cls in (("encoder", EncoderConfig), ("nodeformer", NodeformerConfig), ("head", HeadConfig)):
            val = getattr(self, name)
            if isinstance(val, dict):
                setattr(self, name, _from_dict(cls, val, f"model.{name}"))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return _from_dict(cls, d, "model")


def _from_dict(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"expected an object, got {type(d).__name__}", path)
    known = cls.__dataclass_fields__
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown}", path)
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(str(exc), path) from None


# ---------------------------------------------------------------- graph helpers


class GraphIndex:
    """Directed edge lists and inverse degrees for neighbour means."""

    def __init__(self, edges, n_nodes: int):
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e.min() < 0 or e.max() >= n_nodes):
            raise ShapeMismatch(f"edge endpoint out of range for {n_nodes} nodes")
        self.n_nodes = int(n_nodes)
        self.src = np.concatenate([e[:, 0], e[:, 1]])
        self.dst = np.concatenate([e[:, 1], e[:, 0]])
        deg = np.bincount(self.dst, minlength=n_nodes).astype(np.float64)
        self.inv_degree = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)

    def neighbour_mean(self, x: Tensor) -> Tensor:
        """Mean of neighbour rows of ``(N, ...)`` input; isolated nodes get zeros."""
        if len(self.src) == 0:
            return x * 0.0
        summed = scatter_add_rows(gather_rows(x, self.src), self.dst, self.n_nodes)
        shape = (self.n_nodes,) + (1,) * (x.ndim - 1)
        return summed * Tensor(self.inv_degree.reshape(shape), dtype=x.dtype)


def gumbel_noise(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-12, 1.0 - 1e-12)))


# ---------------------------------------------------------------- attention


def positive_random_features(x: Tensor, directions: np.ndarray, stabilise: str) -> Tensor:
    """``exp(w^T x - |x|^2 / 2) / sqrt(m)`` for ``(H, N, dh)`` input and ``(dh, m)`` directions.

    A constant is subtracted inside the exponent for range safety, per row
    (``"row"``) for queries or per head (``"head"``) for keys. Both cancel in
    the attention ratio.
    """
    m = directions.shape[1]
    z = x @ Tensor(directions, dtype=x.dtype) - (x * x).sum(axis=-1, keepdims=True) * 0.5
    axis = -1 if stabilise == "row" else (1, 2)
    shift = z.data.max(axis=axis, keepdims=True)
    return exp(z - Tensor(shift, dtype=x.dtype)) * (1.0 / math.sqrt(m))


def kernelized_attention(q: Tensor, k: Tensor, v: Tensor, directions: np.ndarray) -> Tensor:
    """Linear-time softmax-kernel attention over all nodes.

    ``q``, ``k``, ``v`` are ``(H, N, dh)``. Returns
    ``sum_j phi(q_i).phi(k_j) v_j / sum_j phi(q_i).phi(k_j)`` via the two
    global sums ``phi(K)^T V`` and ``sum_j phi(k_j)``.
    """
    fq = positive_random_features(q, directions, "row")
    fk = positive_random_features(k, directions, "head")
    kv = fk.transpose(0, 2, 1) @ v  # (H, m, dh)
    ksum = fk.sum(axis=1, keepdims=True)  # (H, 1, m)
    num = fq @ kv
    den = (fq * ksum).sum(axis=-1, keepdims=True)
    return num / den


def dense_softmax_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Exact ``softmax(q k^T) v`` per head; reference for the kernelized path."""
    s = q @ np.swapaxes(k, -1, -2)
    s = s - s.max(axis=-1, keepdims=True)
    w = np.exp(s)
    w /= w.sum(axis=-1, keepdims=True)
    return w @ v


class NodeformerLayer(Module):
    """All-pair kernelized attention with Gumbel-perturbed keys and a neighbour term.

    Output: ``LeakyReLU(BatchNorm(concat_heads(attn) + x))``.
    """

    def __init__(self, cfg: NodeformerConfig, index: int, rng: np.random.Generator):
        super().__init__()
        d = cfg.model_dim
        self.cfg = cfg
        self.index = index
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.edge_weight = Tensor(np.full(cfg.heads, 0.5), requires_grad=True) if cfg.use_edge_bias else None
        self.norm = BatchNorm1d(d)
        self.temperature = cfg.gumbel_temperature

    def directions(self, seed: int) -> np.ndarray:
        dh = self.cfg.model_dim // self.cfg.heads
        return np.random.default_rng([int(seed), self.index, 0]).standard_normal((dh, self.cfg.random_features))

    def project(self, x: Tensor):
        n = x.shape[0]
        h = self.cfg.heads
        dh = self.cfg.model_dim // h
        scale = dh ** -0.25

        def split(t):
            return t.reshape(n, h, dh).transpose(1, 0, 2)

        return split(self.query(x)) * scale, split(self.key(x)) * scale, split(self.value(x))

    def attend(self, x: Tensor, graph: GraphIndex, seed: int = 0, gumbel=None) -> Tensor:
        """Attention output before residual/normalisation, ``(N, d)``.

        ``gumbel`` overrides the training-mode key noise with fixed arrays
        (one ``(H, N, dh)`` array per sample), for gradient checks.
        """
        if self.temperature <= 0:
            raise ConfigError("gumbel temperature must be > 0", "nodeformer.gumbel_temperature")
        n = x.shape[0]
        q, k, v = self.project(x)
        w = self.directions(seed)
        if self.training:
            if gumbel is None:
                rng = np.random.default_rng([int(seed), self.index, 1])
                gumbel = [gumbel_noise(rng, k.shape) for _ in range(self.cfg.gumbel_samples)]
            outs = [kernelized_attention(q, k + Tensor(self.temperature * g, dtype=k.dtype), v, w) for g in gumbel]
            att = outs[0]
            for o in outs[1:]:
                att = att + o
            if len(outs) > 1:
                att = att * (1.0 / len(outs))
        else:
            att = kernelized_attention(q, k, v, w)
        if self.edge_weight is not None:
            nb = graph.neighbour_mean(v.transpose(1, 0, 2))  # (N, H, dh)
            att = att + nb.transpose(1, 0, 2) * self.edge_weight.reshape(-1, 1, 1)
        return att.transpose(1, 0, 2).reshape(n, self.cfg.model_dim)

    def __call__(self, x: Tensor, graph: GraphIndex, seed: int = 0, gumbel=None) -> Tensor:
        h = self.attend(x, graph, seed, gumbel) + x
        return leaky_relu(self.norm(h), self.cfg.leaky_slope)


# ---------------------------------------------------------------- blocks


class Encoder(Module):
    """Two valid 3x3x3 convolutions with ReLU: ``(N, 1, 5, 5, 5) -> (N, c2)``."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.conv1 = Conv3d(1, cfg.c1, cfg.kernel, rng)
        self.conv2 = Conv3d(cfg.c1, cfg.c2, cfg.kernel, rng)

    def __call__(self, x: Tensor) -> Tensor:
        out = SUBVOLUME - 2 * (self.cfg.kernel - 1)
        if x.ndim != 5 or x.shape[1:] != (1, SUBVOLUME, SUBVOLUME, SUBVOLUME):
            raise ShapeMismatch(f"encoder expects (N, 1, 5, 5, 5) input, got {x.shape}")
        h = relu(self.conv1(x))
        h = relu(self.conv2(h))
        if out != 1:
            raise ShapeMismatch(f"kernel {self.cfg.kernel} does not reduce a 5^3 block to 1^3")
        return flatten(h)


class Decoder(Module):
    """Mirror of :class:`Encoder`: ``(N, c2) -> (N, 1, 5, 5, 5)``."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.up1 = ConvTranspose3d(cfg.c2, cfg.c1, cfg.kernel, rng)
        self.up2 = ConvTranspose3d(cfg.c1, 1, cfg.kernel, rng)

    def __call__(self, z: Tensor) -> Tensor:
        h = z.reshape(z.shape[0], self.cfg.c2, 1, 1, 1)
        return self.up2(relu(self.up1(h)))


class Head(Module):
    """``d -> d/2 -> d/4 -> out`` with ReLU, BatchNorm and Dropout after the first two layers."""

    def __init__(self, d: int, out: int, cfg: HeadConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.fc1 = Linear(d, d // 2, rng)
        self.bn1 = BatchNorm1d(d // 2)
        self.fc2 = Linear(d // 2, d // 4, rng)
        self.bn2 = BatchNorm1d(d // 4)
        self.fc3 = Linear(d // 4, out, rng)

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None, masks=None) -> Tensor:
        masks = masks or (None, None)
        h = self.bn1(relu(self.fc1(x)))
        h = _dropout(h, self.cfg.dropout, self.training, rng, masks[0])
        h = self.bn2(relu(self.fc2(h)))
        h = _dropout(h, self.cfg.dropout, self.training, rng, masks[1])
        return self.fc3(h)


def as_subvolume_tensor(subvolumes) -> Tensor:
    if isinstance(subvolumes, Tensor):
        x = subvolumes
    else:
        x = Tensor(np.asarray(subvolumes))
    if x.ndim == 4:
        x = x.reshape(x.shape[0], 1, *x.shape[1:])
    if x.ndim != 5 or x.shape[1:] != (1, SUBVOLUME, SUBVOLUME, SUBVOLUME):
        raise ShapeMismatch(f"subvolumes must be (N, 5, 5, 5) or (N, 1, 5, 5, 5), got {x.shape}")
    return x


# ---------------------------------------------------------------- models


class SegErrorModel(Module):
    """Per-node error estimator; ``variant`` selects the full model or an ablation.

    * ``full``: encoder -> lift -> attention layers -> head
    * ``cnn_mlp``: encoder -> lift -> head (no graph layers)
    * ``gnn_mlp``: linear layer on the flattened 125-voxel block -> attention layers -> head
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        if cfg.variant not in MAIN_VARIANTS:
            raise ConfigError(f"SegErrorModel variant must be one of {MAIN_VARIANTS}", "model.variant")
        self.config = cfg
        self.provenance: list[str] = []
        rng = np.random.default_rng(cfg.seed)
        d = cfg.nodeformer.model_dim
        if cfg.variant in ("full", "cnn_mlp"):
            self.encoder = Encoder(cfg.encoder, rng)
            self.lift = Linear(cfg.encoder.c2, d, rng)
        else:
            self.encoder = None
            self.lift = Linear(SUBVOLUME ** 3, d, rng)
        n_layers = 0 if cfg.variant == "cnn_mlp" else cfg.nodeformer.layers
        self.layers = [NodeformerLayer(cfg.nodeformer, i, rng) for i in range(n_layers)]
        self.head = Head(d, 1 if cfg.mode == "regression" else N_CLASSES, cfg.head, rng)
        for m in self.modules():
            if isinstance(m, BatchNorm1d):
                m.graph_stats = cfg.norm_stats == "graph"

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def mode(self) -> str:
        return self.config.mode

    def set_temperature(self, tau: float):
        if tau <= 0:
            raise ConfigError("gumbel temperature must be > 0", "nodeformer.gumbel_temperature")
        for layer in self.layers:
            layer.temperature = tau

    def features(self, subvolumes) -> Tensor:
        x = as_subvolume_tensor(subvolumes)
        if self.encoder is not None:
            return self.lift(self.encoder(x))
        return self.lift(x.reshape(x.shape[0], SUBVOLUME ** 3))

    def __call__(self, subvolumes, graph: GraphIndex | np.ndarray | None = None, seed: int = 0,
                 gumbel=None, dropout_masks=None) -> Tensor:
        """Raw head output: regression ``(N,)`` in mm, classification ``(N, 5)`` logits."""
        h = self.features(subvolumes)
        n = h.shape[0]
        if not isinstance(graph, GraphIndex):
            graph = GraphIndex(np.zeros((0, 2)) if graph is None else graph, n)
        if graph.n_nodes != n:
            raise ShapeMismatch(f"graph has {graph.n_nodes} nodes, subvolumes {n}")
        for i, layer in enumerate(self.layers):
            h = layer(h, graph, seed, None if gumbel is None else gumbel[i])
        rng = np.random.default_rng([int(seed), 9999]) if self.training else None
        out = self.head(h, rng, dropout_masks)
        if self.mode == "regression":
            return tanh(out.reshape(n)) * self.config.head.sd_scale
        return out


def forward(model: SegErrorModel, sample, seed: int = 0, train: bool = False, graph: GraphIndex | None = None) -> Tensor:
    """Per-node predictions for a :class:`~segqa.dataset.Sample`."""
    model.train(train)
    if graph is None:
        graph = GraphIndex(sample.edges, sample.node_count)
    return model(sample.subvolumes, graph, seed)


def predict_classes(logits: Tensor) -> np.ndarray:
    return np.argmax(logits.data, axis=1)


# ---------------------------------------------------------------- pretext


class PretextModel(Module):
    """Encoder plus a vertex-normal head (``vertnorm``) or a decoder (``recon``/``maskrecon``)."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        if config.variant not in PRETEXT_VARIANTS:
            raise ConfigError(f"pretext variant must be one of {PRETEXT_VARIANTS}", "model.variant")
        self.config = config
        self.provenance: list[str] = []
        rng = np.random.default_rng(config.seed)
        self.encoder = Encoder(config.encoder, rng)
        if config.variant == "vertnorm":
            self.normal_head = Linear(config.encoder.c2, 3, rng)
            self.decoder = None
        else:
            self.normal_head = None
            self.decoder = Decoder(config.encoder, rng)

    @property
    def variant(self) -> str:
        return self.config.variant

    def __call__(self, subvolumes) -> Tensor:
        z = self.encoder(as_subvolume_tensor(subvolumes))
        if self.normal_head is not None:
            return unit_rows(self.normal_head(z))
        return self.decoder(z)


def unit_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    return x / ((x * x).sum(axis=1, keepdims=True) + eps).sqrt()


def vertnorm_forward(model: PretextModel, subvolumes) -> Tensor:
    """Unit-length predicted normals, ``(N, 3)``."""
    return model(subvolumes)


def recon_forward(model: PretextModel, subvolumes) -> Tensor:
    """Reconstructed blocks, ``(N, 1, 5, 5, 5)``."""
    return model(subvolumes)


def maskrecon_forward(model: PretextModel, masked_subvolumes) -> Tensor:
    return model(masked_subvolumes)


# ---------------------------------------------------------------- checkpoints


def build_model(config: ModelConfig | dict) -> Module:
    if isinstance(config, dict):
        config = ModelConfig.from_dict(config)
    if config.variant in PRETEXT_VARIANTS:
        return PretextModel(config)
    return SegErrorModel(config)


def build_cnn_mlp(config: ModelConfig | None = None) -> SegErrorModel:
    cfg = ModelConfig.from_dict(dict((config or ModelConfig()).to_dict(), variant="cnn_mlp"))
    return SegErrorModel(cfg)


def build_gnn_mlp(config: ModelConfig | None = None) -> SegErrorModel:
    cfg = ModelConfig.from_dict(dict((config or ModelConfig()).to_dict(), variant="gnn_mlp"))
    return SegErrorModel(cfg)


def save_model(model: Module, path, optimizer=None, extra: dict | None = None) -> None:
    """Write parameters, buffers and (optionally) optimizer state to one checkpoint file."""
    tensors = {f"param/{k}": v for k, v in model.state_dict().items()}
    header = {
        "format": "segqa-checkpoint-1",
        "variant": model.config.variant,
        "config": model.config.to_dict(),
        "provenance": list(getattr(model, "provenance", [])),
        "extra": extra or {},
    }
    if optimizer is not None:
        sd = optimizer.state_dict()
        header["optimizer"] = {k: sd[k] for k in ("type", "step", "lr", "hyper")}
        header["optimizer"]["state_keys"] = sorted(sd["buffers"])
        tensors.update({f"optim/{k}": v for k, v in sd["buffers"].items()})
    save_checkpoint(path, tensors, header)


def load_model(path, return_header: bool = False):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    header, tensors = load_checkpoint(path)
    model = build_model(header["config"])
    state = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    model.load_state_dict(state)
    model.provenance = list(header.get("provenance", []))
    if return_header:
        header["optimizer_buffers"] = {k[len("optim/"):]: v for k, v in tensors.items() if k.startswith("optim/")}
        return model, header
    return model


def transfer_encoder_weights(pretext, model: Module) -> Module:
    """Copy every ``encoder.*`` parameter from a pretext model (or checkpoint path) into ``model``.

    Nothing else in ``model`` changes. Raises :class:`ShapeMismatch` naming
    every parameter whose name or shape does not line up.
    """
    source = pretext
    label = getattr(pretext, "variant", "model")
    if isinstance(pretext, (str, Path)):
        source = load_model(pretext)
        label = f"{source.variant} checkpoint {Path(pretext).name}"
    src = {k: v for k, v in source.named_parameters().items() if k.startswith("encoder.")}
    dst = {k: v for k, v in model.named_parameters().items() if k.startswith("encoder.")}
    if not dst:
        raise ShapeMismatch(f"target model ({model.config.variant}) has no encoder", names=[])
    bad = sorted(set(src) ^ set(dst))
    bad += sorted(k for k in set(src) & set(dst) if src[k].shape != dst[k].shape)
    if bad:
        raise ShapeMismatch(f"encoder parameters do not match: {bad}", names=bad)
    for k, p in dst.items():
        p.data[...] = src[k].data
    model.provenance.append(f"encoder initialised from {label}")
    return model
