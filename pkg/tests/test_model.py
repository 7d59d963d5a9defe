import numpy as np
import pytest

from oracles import naive_softmax_attention
from segqa import autodiff as ad
from segqa.autodiff import Tensor, no_grad, precision
from segqa.errors import ConfigError, ShapeMismatch
from segqa.model import (
    EncoderConfig,
    Encoder,
    GraphIndex,
    ModelConfig,
    NodeformerConfig,
    NodeformerLayer,
    PretextModel,
    SegErrorModel,
    build_cnn_mlp,
    build_gnn_mlp,
    build_model,
    dense_softmax_attention,
    kernelized_attention,
    load_model,
    maskrecon_forward,
    recon_forward,
    save_model,
    transfer_encoder_weights,
    vertnorm_forward,
)


def blocks(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 5, 5, 5)).astype(np.float32)


def ring(n):
    return np.array([[i, (i + 1) % n] for i in range(n)])


def run(model, x, edges=None, seed=0):
    with no_grad():
        return model(x, edges, seed).data


# ---------------------------------------------------------------- encoder


def test_encoder_shapes_and_rows():
    enc = Encoder(EncoderConfig(), np.random.default_rng(0))
    x = Tensor(blocks(7)[:, None])
    out = enc(x).data
    assert out.shape == (7, 32)
    z = enc(Tensor(np.zeros((1, 1, 5, 5, 5)))).data
    assert np.all(z >= 0)
    perm = np.random.default_rng(1).permutation(7)
    np.testing.assert_allclose(enc(Tensor(x.data[perm])).data, out[perm], rtol=1e-6)
    with pytest.raises(ShapeMismatch):
        enc(Tensor(np.zeros((2, 1, 4, 4, 4))))


# ---------------------------------------------------------------- attention


def test_single_node_attention_is_value():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(rng.standard_normal((2, 1, 4))) for _ in range(3))
    out = kernelized_attention(q, k, v, rng.standard_normal((4, 16))).data
    np.testing.assert_allclose(out, v.data, rtol=1e-5)


def test_dense_reference_matches_loop_oracle():
    rng = np.random.default_rng(2)
    q, k, v = (rng.standard_normal((3, 6, 4)) for _ in range(3))
    np.testing.assert_allclose(dense_softmax_attention(q, k, v), naive_softmax_attention(q, k, v), atol=1e-12)


@pytest.fixture(scope="module")
def projected_qkv():
    """q, k, v from a freshly initialised layer applied to unit-normal node features."""
    with precision(np.float64):
        layer = NodeformerLayer(NodeformerConfig(), 0, np.random.default_rng(0)).eval()
        x = Tensor(np.random.default_rng(1).standard_normal((32, 64)))
        q, k, v = layer.project(x)
    return q.data, k.data, v.data


def _mean_dev(q, k, v, m, draws=100):
    ref = naive_softmax_attention(q, k, v)
    with precision(np.float64):
        devs = [
            np.abs(kernelized_attention(Tensor(q), Tensor(k), Tensor(v),
                                        np.random.default_rng([7, d]).standard_normal((q.shape[-1], m))).data - ref).mean()
            for d in range(draws)
        ]
    return float(np.mean(devs))


def test_kernel_attention_converges_to_softmax(projected_qkv):
    q, k, v = projected_qkv
    devs = [_mean_dev(q, k, v, m) for m in (16, 64, 256, 4096)]
    assert devs[-1] < 0.05
    assert all(a > b for a, b in zip(devs, devs[1:])), devs


def test_attention_is_convex_combination(projected_qkv):
    q, k, v = projected_qkv
    with precision(np.float64):
        out = kernelized_attention(Tensor(q), Tensor(k), Tensor(v), np.random.default_rng(3).standard_normal((8, 64))).data
    lo, hi = v.min(axis=1, keepdims=True), v.max(axis=1, keepdims=True)
    assert np.all(out >= lo - 1e-9) and np.all(out <= hi + 1e-9)


def test_identical_rows_identical_outputs():
    model = SegErrorModel(ModelConfig()).eval()
    x = np.repeat(blocks(1), 6, axis=0)
    out = run(model, x, ring(6))
    np.testing.assert_allclose(out, out[0], rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("mode", ["regression", "classification"])
def test_permutation_equivariance(mode):
    model = SegErrorModel(ModelConfig(mode=mode)).eval()
    n = 12
    x, e = blocks(n, 3), ring(n)
    perm = np.random.default_rng(4).permutation(n)
    inv = np.argsort(perm)
    out = run(model, x, e)
    out_p = run(model, x[perm], inv[e])
    np.testing.assert_allclose(out_p, out[perm], rtol=1e-4, atol=1e-5)


# ---------------------------------------------------------------- output heads


def test_regression_bounded_and_classification_probabilities():
    x, e = blocks(20, 5) * 50, ring(20)
    reg = SegErrorModel(ModelConfig(mode="regression")).eval()
    r = run(reg, x, e)
    assert r.shape == (20,) and np.all(np.abs(r) <= 0.5)
    cls = SegErrorModel(ModelConfig(mode="classification")).eval()
    logits = run(cls, x, e)
    assert logits.shape == (20, 5)
    p = ad.softmax(Tensor(logits, dtype=np.float64), axis=1).data
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)


def test_eval_is_deterministic_and_training_is_stochastic():
    model = SegErrorModel(ModelConfig()).eval()
    x, e = blocks(10, 6), ring(10)
    np.testing.assert_array_equal(run(model, x, e), run(model, x, e))
    model.train()
    a, b = run(model, x, e, seed=1), run(model, x, e, seed=2)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, run(model, x, e, seed=1))


def test_graph_size_mismatch():
    model = SegErrorModel(ModelConfig()).eval()
    with pytest.raises(ShapeMismatch):
        model(blocks(4), GraphIndex(ring(5), 5))


# ---------------------------------------------------------------- variants


def test_cnn_mlp_ignores_edges():
    model = build_cnn_mlp().eval()
    x = blocks(9, 7)
    assert not model.layers
    np.testing.assert_array_equal(run(model, x, ring(9)), run(model, x, None))


def test_gnn_mlp_reads_raw_blocks():
    model = build_gnn_mlp()
    assert model.encoder is None and model.lift.weight.shape[0] == 125
    assert run(model.eval(), blocks(5), ring(5)).shape == (5,)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="transformer")
    with pytest.raises(ConfigError):
        NodeformerConfig(model_dim=60, heads=8)
    with pytest.raises(ConfigError, match="nodeformer"):
        ModelConfig.from_dict({"nodeformer": {"hedas": 4}})
    cfg = ModelConfig(mode="classification", seed=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- pretext and transfer


def test_pretext_outputs():
    x = blocks(6)
    vn = PretextModel(ModelConfig(variant="vertnorm"))
    n = vertnorm_forward(vn, x).data
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-5)
    rc = PretextModel(ModelConfig(variant="recon"))
    assert recon_forward(rc, x).shape == (6, 1, 5, 5, 5)
    mr = PretextModel(ModelConfig(variant="maskrecon"))
    mr.load_state_dict(rc.state_dict())
    np.testing.assert_array_equal(maskrecon_forward(mr, x).data, recon_forward(rc, x).data)


def _checksum(module, prefix):
    return {k: v.data.copy() for k, v in module.named_parameters().items() if not k.startswith(prefix)}


def test_encoder_transfer_is_exact(tmp_path):
    pre = PretextModel(ModelConfig(variant="vertnorm", seed=11))
    target = SegErrorModel(ModelConfig(seed=3))
    others = _checksum(target, "encoder.")
    save_model(pre, tmp_path / "pre.ckpt")
    transfer_encoder_weights(tmp_path / "pre.ckpt", target)
    for k, p in pre.named_parameters().items():
        if k.startswith("encoder."):
            np.testing.assert_array_equal(target.named_parameters()[k].data, p.data)
    for k, v in others.items():
        np.testing.assert_array_equal(target.named_parameters()[k].data, v)
    assert target.provenance and "vertnorm" in target.provenance[-1]


def test_encoder_transfer_shape_mismatch():
    pre = PretextModel(ModelConfig(variant="recon", encoder=EncoderConfig(c2=16)))
    target = SegErrorModel(ModelConfig())
    with pytest.raises(ShapeMismatch) as ei:
        transfer_encoder_weights(pre, target)
    assert ei.value.names
    with pytest.raises(ShapeMismatch):
        transfer_encoder_weights(pre, build_gnn_mlp())


@pytest.mark.parametrize("variant", ["full", "cnn_mlp", "gnn_mlp", "vertnorm"])
def test_checkpoint_round_trip(tmp_path, variant):
    model = build_model(ModelConfig(variant=variant, mode="classification", seed=2))
    save_model(model, tmp_path / "m.ckpt")
    back, header = load_model(tmp_path / "m.ckpt", return_header=True)
    assert header["variant"] == variant and back.config == model.config
    x = blocks(5)
    model.eval(), back.eval()
    if variant == "vertnorm":
        np.testing.assert_array_equal(model(x).data, back(x).data)
    else:
        np.testing.assert_array_equal(run(model, x, ring(5)), run(back, x, ring(5)))
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path / "missing.ckpt")
