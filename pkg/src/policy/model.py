"""TACT: a CVAE action-chunking transformer over proprio, tactile and vision tokens."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.nn.checkpoint import load_checkpoint, save_checkpoint
from src.nn.layers import (
    AttentionConfig,
    Conv2d,
    DecoderLayer,
    EncoderLayer,
    GraphAdjacency,
    GraphConv,
    Linear,
    Module,
    l1_loss,
    sinusoidal_positions,
)
from src.nn.tensor import Tensor, concat, exp, parameter, relu
from src.policy.config import PolicyConfig
from src.utils.errors import ConfigMismatch, EmptyBatch, MissingModality, ShapeError

logger = logging.getLogger(__name__)

STATS_PREFIX = "stats/"


@dataclass
class Observation:
    """A batch of policy inputs.

    ``q`` is (B, q_dim) already normalized, ``tactile`` is (B, 2N) in the
    flatten order touch then proximity, ``image`` is (B, 3, H, W) in [0, 1].
    """

    q: Optional[np.ndarray] = None
    tactile: Optional[np.ndarray] = None
    image: Optional[np.ndarray] = None

    @property
    def batch_size(self) -> int:
        for value in (self.q, self.tactile, self.image):
            if value is not None:
                return value.shape[0]
        return 0


@dataclass
class LatentCode:
    mu: Tensor
    logvar: Tensor


@dataclass
class NormalizationStats:
    """Per-dimension mean/std of joint positions and actions from the training set."""

    q_mean: np.ndarray
    q_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray

    @classmethod
    def identity(cls, q_dim: int, action_dim: int) -> "NormalizationStats":
        return cls(np.zeros(q_dim), np.ones(q_dim), np.zeros(action_dim), np.ones(action_dim))

    @classmethod
    def fit(cls, q: np.ndarray, actions: np.ndarray, floor: float = 1e-3) -> "NormalizationStats":
        return cls(q.mean(axis=0), np.maximum(q.std(axis=0), floor),
                   actions.mean(axis=0), np.maximum(actions.std(axis=0), floor))

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {f"{STATS_PREFIX}{name}": getattr(self, name)
                for name in ("q_mean", "q_std", "action_mean", "action_std")}


def image_to_input(pixels: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 pixels to a (3, H, W) float array in [0, 1]."""
    return np.asarray(pixels, dtype=np.float64).transpose(2, 0, 1) / 255.0


def kl_divergence(code: LatentCode) -> Tensor:
    """KL to the standard normal, summed over latent dims and averaged over the batch."""
    terms = (code.mu * code.mu + exp(code.logvar) - 1.0 - code.logvar) * 0.5
    return terms.sum(axis=-1).mean()


class VisionEncoder(Module):
    """Three stride-2 convolutions and a 2x2 average pool onto a token grid."""

    def __init__(self, channels: Tuple[int, int, int], d_model: int, rng: np.random.Generator):
        c1, c2, c3 = channels
        self.conv1 = Conv2d(3, c1, 4, rng)
        self.conv2 = Conv2d(c1, c2, 4, rng)
        self.conv3 = Conv2d(c2, c3, 4, rng)
        self.proj = Linear(c3, d_model, rng)

    def forward(self, image) -> Tensor:
        x = relu(self.conv1(image))
        x = relu(self.conv2(x))
        x = relu(self.conv3(x))
        b, c, h, w = x.shape
        pooled = x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        tokens = pooled.reshape(b, c, (h // 2) * (w // 2)).transpose(0, 2, 1)
        return self.proj(tokens)


class TactPolicy(Module):
    def __init__(self, cfg: PolicyConfig, adjacency: Optional[GraphAdjacency] = None, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        d = cfg.d_model
        attn = AttentionConfig(d, cfg.heads)

        if cfg.use_proprio:
            self.proprio_proj = Linear(cfg.q_dim, d, rng)
        if cfg.use_tactile:
            if cfg.gcn_hidden:
                if adjacency is None or adjacency.n_nodes != cfg.n_cells:
                    raise ShapeError("graph layers need an adjacency over every tactile cell")
                widths = (2,) + tuple(cfg.gcn_hidden)
                self.gcn = [GraphConv(widths[i], widths[i + 1], adjacency, rng) for i in range(cfg.gcn_depth)]
                self.tactile_proj = Linear(cfg.n_cells * widths[-1], d, rng)
            else:
                self.tactile_proj = Linear(cfg.tactile_dim, d, rng)
        if cfg.use_vision:
            self.vision = VisionEncoder(cfg.vision_channels, d, rng)

        self.cls_token = parameter(rng.normal(0.0, 0.02, (1, 1, d)))
        self.action_proj = Linear(cfg.action_dim, d, rng)
        self.encoder = [EncoderLayer(attn, cfg.ffn_hidden, rng) for _ in range(cfg.encoder_layers)]
        self.latent_head = Linear(d, 2 * cfg.latent_dim, rng)

        self.latent_proj = Linear(cfg.latent_dim, d, rng)
        self.condition = [EncoderLayer(attn, cfg.ffn_hidden, rng) for _ in range(cfg.encoder_layers)]
        self.queries = parameter(rng.normal(0.0, 0.02, (1, cfg.chunk_size, d)))
        self.decoder = [DecoderLayer(attn, cfg.ffn_hidden, rng) for _ in range(cfg.decoder_layers)]
        self.action_head = Linear(d, cfg.action_dim, rng)

        self.stats = NormalizationStats.identity(cfg.q_dim, cfg.action_dim)

    # Observation side

    def _tactile_token(self, tactile: np.ndarray) -> Tensor:
        b = tactile.shape[0]
        if not self.cfg.gcn_hidden:
            return self.tactile_proj(Tensor(tactile)).reshape(b, 1, self.cfg.d_model)
        n = self.cfg.n_cells
        # (B, 2N) in touch-then-proximity order to per-cell (B, N, 2) features.
        h = Tensor(tactile.reshape(b, 2, n).transpose(0, 2, 1))
        for layer in self.gcn:
            h = layer(h)
        return self.tactile_proj(h.reshape(b, n * h.shape[-1])).reshape(b, 1, self.cfg.d_model)

    def tokenize_condition(self, obs: Observation) -> Tensor:
        """Condition tokens in the order proprio, tactile, then the image grid.

        Raises:
            MissingModality: If an enabled modality has no input
        """
        cfg = self.cfg
        tokens: List[Tensor] = []
        if cfg.use_proprio:
            if obs.q is None:
                raise MissingModality("joint positions are required by this policy")
            q = np.asarray(obs.q, dtype=float)
            tokens.append(self.proprio_proj(Tensor(q)).reshape(q.shape[0], 1, cfg.d_model))
        if cfg.use_tactile:
            if obs.tactile is None:
                raise MissingModality("tactile frames are required by this policy")
            tactile = np.asarray(obs.tactile, dtype=float)
            if tactile.shape[-1] != cfg.tactile_dim:
                raise ShapeError(f"tactile vector has {tactile.shape[-1]} entries, expected {cfg.tactile_dim}")
            tokens.append(self._tactile_token(tactile))
        if cfg.use_vision:
            if obs.image is None:
                raise MissingModality("camera images are required by this policy")
            tokens.append(self.vision(Tensor(np.asarray(obs.image, dtype=float))))
        return concat(tokens, axis=1)

    # CVAE

    def encode(self, actions: np.ndarray, obs: Observation) -> LatentCode:
        """Latent posterior from [CLS, action tokens, proprio, tactile]."""
        cfg = self.cfg
        actions = np.asarray(actions, dtype=float)
        if actions.ndim != 3 or actions.shape[1:] != (cfg.chunk_size, cfg.action_dim):
            raise ShapeError(f"action chunk must be (B, {cfg.chunk_size}, {cfg.action_dim}), got {actions.shape}")
        b = actions.shape[0]
        parts = [concat([self.cls_token] * b, axis=0), self.action_proj(Tensor(actions))]
        if cfg.use_proprio and obs.q is not None:
            parts.append(self.proprio_proj(Tensor(np.asarray(obs.q, dtype=float))).reshape(b, 1, cfg.d_model))
        if cfg.use_tactile and obs.tactile is not None:
            parts.append(self._tactile_token(np.asarray(obs.tactile, dtype=float)))
        x = concat(parts, axis=1)
        x = x + Tensor(sinusoidal_positions(x.shape[1], cfg.d_model)[None])
        for layer in self.encoder:
            x, _ = layer(x)
        stats = self.latent_head(x[:, 0, :])
        return LatentCode(mu=stats[:, :cfg.latent_dim], logvar=stats[:, cfg.latent_dim:])

    def condition_memory(self, z: Tensor, cond: Tensor) -> Tuple[Tensor, List[np.ndarray]]:
        """Self-attended [latent, condition tokens] with the per-layer attention weights."""
        b = cond.shape[0]
        x = concat([self.latent_proj(z).reshape(b, 1, self.cfg.d_model), cond], axis=1)
        x = x + Tensor(sinusoidal_positions(x.shape[1], self.cfg.d_model)[None])
        weights = []
        for layer in self.condition:
            x, w = layer(x)
            weights.append(w)
        return x, weights

    def decode(self, z, cond: Tensor) -> Tensor:
        """Action chunk (B, K, A) from a latent and condition tokens."""
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=float))
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim or z.shape[0] != cond.shape[0]:
            raise ShapeError(f"latent must be (B, {self.cfg.latent_dim}), got {z.shape}")
        memory, _ = self.condition_memory(z, cond)
        b = cond.shape[0]
        x = concat([self.queries] * b, axis=0)
        x = x + Tensor(sinusoidal_positions(self.cfg.chunk_size, self.cfg.d_model)[None])
        for layer in self.decoder:
            x, _ = layer(x, memory)
        return self.action_head(x)

    # Persistence

    def state_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.named_parameters()}
        arrays.update(self.stats.as_dict())
        return arrays

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays or arrays[name].shape != p.shape:
                raise ConfigMismatch(f"checkpoint has no matching entry for parameter {name}")
            p.data = np.array(arrays[name], dtype=np.float64)
        self.stats = NormalizationStats(*(np.array(arrays[f"{STATS_PREFIX}{k}"])
                                          for k in ("q_mean", "q_std", "action_mean", "action_std")))

    def save(self, path: str) -> None:
        save_checkpoint(path, self.state_arrays(), self.cfg.config_hash(), self.cfg.model_dump(mode="json"))

    @classmethod
    def load(cls, path: str, cfg: PolicyConfig, adjacency: Optional[GraphAdjacency] = None) -> "TactPolicy":
        """Policy from a checkpoint trained under exactly ``cfg``.

        Raises:
            ConfigMismatch: If the checkpoint was trained under another config
        """
        _, arrays = load_checkpoint(path, expected_hash=cfg.config_hash())
        policy = cls(cfg, adjacency)
        policy.load_arrays(arrays)
        return policy


@dataclass
class TrainingBatch:
    """Normalized observations with their ground-truth chunks and padding mask (B, K)."""

    obs: Observation
    actions: np.ndarray
    mask: np.ndarray


def training_loss_from_outputs(chunk: Tensor, code: LatentCode, actions: np.ndarray, mask: np.ndarray,
                               kl_weight: float) -> Tuple[Tensor, Dict[str, float]]:
    reconstruction = l1_loss(chunk, Tensor(actions), np.asarray(mask, dtype=float)[:, :, None])
    kl = kl_divergence(code)
    loss = reconstruction + kl * kl_weight
    return loss, {"loss": float(loss.data), "l1": float(reconstruction.data), "kl": float(kl.data)}


def training_loss(policy: TactPolicy, batch: TrainingBatch, rng: np.random.Generator) -> Tuple[Tensor, Dict[str, float]]:
    """Masked L1 reconstruction plus the weighted KL term.

    The latent is drawn with the reparameterization trick from ``rng``.

    Raises:
        EmptyBatch: If the batch holds no samples
    """
    if batch.actions.shape[0] == 0:
        raise EmptyBatch("training batch is empty")
    code = policy.encode(batch.actions, batch.obs)
    cond = policy.tokenize_condition(batch.obs)
    eps = rng.standard_normal(code.mu.shape)
    z = code.mu + exp(code.logvar * 0.5) * eps
    chunk = policy.decode(z, cond)
    return training_loss_from_outputs(chunk, code, batch.actions, batch.mask, policy.cfg.kl_weight)


def normalize_observation(policy: TactPolicy, q: Optional[np.ndarray], tactile: Optional[np.ndarray],
                          image: Optional[np.ndarray]) -> Observation:
    """Single-frame inputs as a batch of one, with joint positions normalized."""
    stats = policy.stats
    return Observation(
        q=None if q is None else ((np.asarray(q, dtype=float) - stats.q_mean) / stats.q_std)[None],
        tactile=None if tactile is None else np.asarray(tactile, dtype=float)[None],
        image=None if image is None else image_to_input(image)[None],
    )


def infer(policy: TactPolicy, q: Optional[np.ndarray], tactile: Optional[np.ndarray],
          image: Optional[np.ndarray]) -> np.ndarray:
    """Action chunk (K, A) in action units, decoded from a zero latent.

    Inputs of disabled modalities are ignored.
    """
    cfg = policy.cfg
    obs = normalize_observation(policy,
                                q if cfg.use_proprio else None,
                                tactile if cfg.use_tactile else None,
                                image if cfg.use_vision else None)
    cond = policy.tokenize_condition(obs)
    chunk = policy.decode(np.zeros((1, cfg.latent_dim)), cond).data[0]
    return chunk * policy.stats.action_std + policy.stats.action_mean
