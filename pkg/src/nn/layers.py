"""Layers built on the autodiff tensor: linear, norm, attention, conv, graph conv."""
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from src.nn.tensor import (
    Tensor,
    as_tensor,
    concat,
    conv2d,
    gelu,
    layer_norm,
    matmul,
    parameter,
    relu,
    softmax,
    tabs,
)
from src.utils.errors import ShapeError


class Module:
    """Container of parameters and submodules, discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(in_features)
        self.weight = parameter(rng.uniform(-bound, bound, (in_features, out_features)))
        self.bias = parameter(rng.uniform(-bound, bound, out_features))

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear layer expects {self.weight.shape[0]} features, got {x.shape[-1]}")
        return matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(features))
        self.beta = parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d_model, hidden, rng)
        self.fc2 = Linear(hidden, d_model, rng)

    def forward(self, x) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int
    heads: int

    def __post_init__(self):
        if self.heads < 1 or self.d_model % self.heads:
            raise ShapeError(f"d_model {self.d_model} is not divisible by {self.heads} heads")

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads


def attention(q: Tensor, k: Tensor, v: Tensor, cfg: AttentionConfig) -> Tuple[Tensor, np.ndarray]:
    """Scaled dot-product attention over (B, heads, L, d_k) tensors.

    Returns the attended values and the softmax weights (B, heads, Lq, Lk).
    """
    if q.shape[-1] != cfg.d_k or k.shape != v.shape or q.shape[:-2] != k.shape[:-2] or k.shape[-1] != cfg.d_k:
        raise ShapeError(f"attention shapes q={q.shape} k={k.shape} v={v.shape} do not match d_k={cfg.d_k}")
    scores = matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(cfg.d_k))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights.data


class MultiHeadAttention(Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.q_proj = Linear(cfg.d_model, cfg.d_model, rng)
        self.k_proj = Linear(cfg.d_model, cfg.d_model, rng)
        self.v_proj = Linear(cfg.d_model, cfg.d_model, rng)
        self.out_proj = Linear(cfg.d_model, cfg.d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return x.reshape(b, length, self.cfg.heads, self.cfg.d_k).transpose(0, 2, 1, 3)

    def forward(self, query, memory) -> Tuple[Tensor, np.ndarray]:
        query, memory = as_tensor(query), as_tensor(memory)
        if query.ndim != 3 or memory.ndim != 3 or query.shape[0] != memory.shape[0]:
            raise ShapeError(f"attention expects (batch, length, d_model), got {query.shape} and {memory.shape}")
        out, weights = attention(self._split(self.q_proj(query)), self._split(self.k_proj(memory)),
                                 self._split(self.v_proj(memory)), self.cfg)
        b, lq = query.shape[0], query.shape[1]
        merged = out.transpose(0, 2, 1, 3).reshape(b, lq, self.cfg.d_model)
        return self.out_proj(merged), weights


class EncoderLayer(Module):
    """Post-norm transformer encoder layer."""

    def __init__(self, cfg: AttentionConfig, hidden: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, hidden, rng)
        self.norm2 = LayerNorm(cfg.d_model)

    def forward(self, x) -> Tuple[Tensor, np.ndarray]:
        attended, weights = self.attn(x, x)
        x = self.norm1(x + attended)
        return self.norm2(x + self.ffn(x)), weights


class DecoderLayer(Module):
    """Post-norm transformer decoder layer: self-attention, cross-attention, MLP."""

    def __init__(self, cfg: AttentionConfig, hidden: int, rng: np.random.Generator):
        self.self_attn = MultiHeadAttention(cfg, rng)
        self.norm1 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, hidden, rng)
        self.norm3 = LayerNorm(cfg.d_model)

    def forward(self, x, memory) -> Tuple[Tensor, np.ndarray]:
        attended, _ = self.self_attn(x, x)
        x = self.norm1(x + attended)
        crossed, weights = self.cross_attn(x, memory)
        x = self.norm2(x + crossed)
        return self.norm3(x + self.ffn(x)), weights


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 2, padding: int = 1):
        bound = 1.0 / math.sqrt(in_channels * kernel * kernel)
        self.weight = parameter(rng.uniform(-bound, bound, (out_channels, in_channels, kernel, kernel)))
        self.bias = parameter(rng.uniform(-bound, bound, out_channels))
        self.stride = stride
        self.padding = padding

    def forward(self, x) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


@dataclass(frozen=True)
class GraphAdjacency:
    """Symmetric 0/1 adjacency without self loops."""

    A: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"adjacency must be square, got {A.shape}")
        if not np.array_equal(A, A.T) or np.any(np.diag(A) != 0):
            raise ShapeError("adjacency must be symmetric with a zero diagonal")
        object.__setattr__(self, "A", A)

    @property
    def n_nodes(self) -> int:
        return self.A.shape[0]

    def normalized(self) -> np.ndarray:
        """D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I."""
        A_hat = self.A + np.eye(self.n_nodes)
        d = 1.0 / np.sqrt(A_hat.sum(axis=1))
        return A_hat * d[:, None] * d[None, :]


def gcn_layer(H, adj: GraphAdjacency, W, activation: Optional[str] = "relu") -> Tensor:
    """activation(Â · H · W) for node features H of shape (..., N, F)."""
    H, W = as_tensor(H), as_tensor(W)
    if H.shape[-2] != adj.n_nodes or H.shape[-1] != W.shape[0]:
        raise ShapeError(f"graph features {H.shape} do not match {adj.n_nodes} nodes and weights {W.shape}")
    out = matmul(Tensor(adj.normalized()), matmul(H, W))
    if activation == "relu":
        return relu(out)
    if activation == "gelu":
        return gelu(out)
    return out


class GraphConv(Module):
    def __init__(self, in_features: int, out_features: int, adj: GraphAdjacency, rng: np.random.Generator,
                 activation: Optional[str] = "relu"):
        bound = 1.0 / math.sqrt(in_features)
        self.weight = parameter(rng.uniform(-bound, bound, (in_features, out_features)))
        self.adj = adj
        self.activation = activation

    def forward(self, H) -> Tensor:
        return gcn_layer(H, self.adj, self.weight, self.activation)


def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    """Fixed sine/cosine position table, shape (length, d_model)."""
    positions = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(d_model) // 2)) / d_model)
    angles = positions * rates[None, :]
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


def l1_loss(prediction, target, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean absolute error over the entries where ``mask`` is 1."""
    prediction, target = as_tensor(prediction), as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} and target {target.shape} differ")
    error = tabs(prediction - target)
    if mask is None:
        return error.mean()
    mask = np.broadcast_to(np.asarray(mask, dtype=float), prediction.shape)
    return (error * mask).sum() * (1.0 / max(float(mask.sum()), 1.0))


def stack_tokens(tokens: Sequence[Tensor]) -> Tensor:
    """Concatenate (B, n_i, d) token groups along the sequence axis."""
    return concat(tokens, axis=1)


def module_state(module: Module) -> Dict[str, np.ndarray]:
    return {name: p.data for name, p in module.named_parameters()}
