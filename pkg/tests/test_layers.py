import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.nn.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from src.nn.layers import (
    AttentionConfig,
    Conv2d,
    GraphAdjacency,
    Linear,
    attention,
    gcn_layer,
    l1_loss,
    sinusoidal_positions,
)
from src.nn.optim import AdamState, adam_step, clip_grad_norm
from src.nn.tensor import Tensor, conv2d, layer_norm, parameter, softmax
from src.sim.tactile import build_layout
from src.utils.errors import ConfigMismatch, InvalidConfig, ShapeError


@given(st.integers(0, 1000))
def test_softmax_rows(seed):
    logits = np.random.default_rng(seed).normal(scale=5.0, size=(4, 7))
    out = softmax(Tensor(logits)).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)
    assert np.all((out > 0) & (out < 1))


def test_equal_logits_give_uniform_weights():
    cfg = AttentionConfig(d_model=4, heads=1)
    q = Tensor(np.zeros((1, 1, 3, 4)))
    k = Tensor(np.ones((1, 1, 5, 4)))
    v = Tensor(np.arange(20.0).reshape(1, 1, 5, 4))
    out, weights = attention(q, k, v, cfg)
    np.testing.assert_allclose(weights, 0.2)
    np.testing.assert_allclose(out.data[0, 0, 0], v.data[0, 0].mean(axis=0))


def test_single_token_attention():
    cfg = AttentionConfig(d_model=2, heads=1)
    v = Tensor(np.array([[[[0.3, -0.7]]]]))
    out, weights = attention(Tensor(np.ones((1, 1, 1, 2))), Tensor(np.ones((1, 1, 1, 2))), v, cfg)
    assert weights.tolist() == [[[[1.0]]]]
    np.testing.assert_array_equal(out.data, v.data)


def test_attention_shape_errors():
    with pytest.raises(ShapeError):
        AttentionConfig(d_model=6, heads=4)
    cfg = AttentionConfig(d_model=4, heads=2)
    with pytest.raises(ShapeError):
        attention(Tensor(np.ones((1, 2, 3, 2))), Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 2, 3, 3))), cfg)


def test_layer_norm_statistics():
    x = np.random.default_rng(0).normal(loc=3.0, scale=4.0, size=(6, 16))
    out = layer_norm(Tensor(x), np.ones(16), np.zeros(16), eps=0.0).data
    assert np.abs(out.mean(axis=-1)).max() < 1e-9
    np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)


def test_linear_of_zero_input_is_bias():
    layer = Linear(5, 3, np.random.default_rng(0))
    np.testing.assert_array_equal(layer(np.zeros((1, 5))).data[0], layer.bias.data)
    with pytest.raises(ShapeError):
        layer(np.zeros((1, 4)))


def test_single_node_gcn_is_identity():
    adj = GraphAdjacency(np.zeros((1, 1)))
    H = np.array([[0.4, -1.5]])
    np.testing.assert_allclose(gcn_layer(H, adj, np.eye(2), activation=None).data, H)


def test_two_node_gcn_averages():
    adj = GraphAdjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(adj.normalized(), [[0.5, 0.5], [0.5, 0.5]])
    out = gcn_layer(np.eye(2), adj, np.eye(2), activation=None).data
    np.testing.assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])


@given(st.permutations(list(range(6))))
def test_gcn_is_permutation_equivariant(order):
    rng = np.random.default_rng(3)
    A = build_layout().adjacency()[:6, :6]
    H = rng.normal(size=(6, 2))
    W = rng.normal(size=(2, 4))
    P = np.eye(6)[list(order)]
    out = gcn_layer(H, GraphAdjacency(A), W).data
    permuted = gcn_layer(P @ H, GraphAdjacency(P @ A @ P.T), W).data
    np.testing.assert_allclose(permuted, P @ out, atol=1e-12)


def test_layout_adjacency_normalization():
    adj = GraphAdjacency(build_layout().adjacency())
    A_hat = adj.normalized()
    np.testing.assert_array_equal(A_hat, A_hat.T)
    assert np.max(np.abs(np.linalg.eigvalsh(A_hat))) <= 1 + 1e-9
    isolated = GraphAdjacency(np.zeros((3, 3))).normalized()
    np.testing.assert_array_equal(isolated, np.eye(3))


def test_adjacency_validation():
    with pytest.raises(ShapeError):
        GraphAdjacency(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ShapeError):
        GraphAdjacency(np.eye(2))
    with pytest.raises(ShapeError):
        gcn_layer(np.ones((3, 2)), GraphAdjacency(np.zeros((2, 2))), np.eye(2))


def test_conv_output_grid():
    conv = Conv2d(3, 4, 3, np.random.default_rng(0))
    assert conv(np.zeros((1, 3, 48, 64))).shape == (1, 4, 24, 32)
    with pytest.raises(ShapeError):
        conv(np.zeros((1, 2, 8, 8)))


def test_unit_kernel_is_identity():
    x = np.random.default_rng(0).normal(size=(1, 1, 4, 5))
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    np.testing.assert_allclose(conv2d(x, kernel, np.zeros(1), stride=1, padding=1).data, x)


def test_sinusoidal_positions():
    table = sinusoidal_positions(20, 8)
    assert table.shape == (20, 8)
    np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1, 0, 1])
    assert np.all(np.abs(table) <= 1.0)


def test_l1_loss_mask():
    prediction = np.array([[1.0, 2.0], [3.0, 4.0]])
    target = np.zeros((2, 2))
    assert float(l1_loss(prediction, target).data) == pytest.approx(2.5)
    assert float(l1_loss(prediction, target, np.array([[1.0, 1.0], [0.0, 0.0]])).data) == pytest.approx(1.5)
    with pytest.raises(ShapeError):
        l1_loss(prediction, np.zeros(2))


def test_adam_zero_gradient_keeps_parameters():
    w = parameter([0.3, -0.2])
    adam_step([w], [np.zeros(2)], AdamState(lr=0.1))
    np.testing.assert_array_equal(w.data, [0.3, -0.2])


def test_adam_first_step():
    w = parameter([1.0])
    state = adam_step([w], [np.array([1.0])], AdamState(lr=0.1))
    assert w.data[0] == pytest.approx(0.9, abs=1e-8)
    assert state.step == 1


def test_adam_is_deterministic():
    def run():
        w = parameter([1.0, 2.0])
        state = AdamState(lr=0.05)
        for k in range(10):
            state = adam_step([w], [np.array([np.sin(k), np.cos(k)])], state)
        return w.data

    assert np.array_equal(run(), run())


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step([parameter([1.0, 2.0])], [np.ones(3)], AdamState())


def test_clip_grad_norm():
    clipped = clip_grad_norm([np.array([3.0]), np.array([4.0]), None], 1.0)
    np.testing.assert_allclose(clipped[0], [0.6])
    np.testing.assert_allclose(clipped[1], [0.8])
    assert clipped[2] is None
    assert clip_grad_norm([np.array([0.1])], 1.0)[0][0] == 0.1


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"encoder.weight": rng.normal(size=(3, 4)), "encoder.bias": rng.normal(size=4),
              "scale": np.array(np.pi)}
    blob = encode_checkpoint(arrays, "abc123", {"chunk_size": 20})
    header, decoded = decode_checkpoint(blob)
    assert header.config == {"chunk_size": 20}
    for name, array in arrays.items():
        assert decoded[name].shape == array.shape
        assert decoded[name].tobytes() == np.asarray(array, dtype=np.float64).tobytes()
    assert encode_checkpoint(decoded, header.config_hash, header.config) == blob

    path = tmp_path / "policy.ckpt"
    save_checkpoint(str(path), arrays, "abc123", {})
    with pytest.raises(ConfigMismatch):
        load_checkpoint(str(path), expected_hash="other")


def test_truncated_checkpoint():
    blob = encode_checkpoint({"w": np.ones(8)}, "h", {})
    with pytest.raises(InvalidConfig):
        decode_checkpoint(blob[:-8])
    with pytest.raises(InvalidConfig):
        decode_checkpoint(b"no header")
