"""Supervised CVAE training on recorded demonstrations."""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.expert.episode import Episode
from src.nn.layers import GraphAdjacency
from src.nn.optim import AdamState, adam_step, clip_grad_norm
from src.nn.tensor import backward
from src.policy.config import PolicyConfig
from src.policy.model import NormalizationStats, Observation, TactPolicy, TrainingBatch, image_to_input, training_loss
from src.sim.tactile import build_layout
from src.utils.errors import EmptyBatch

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "loss", "l1", "kl")


@dataclass
class SampleSet:
    """Every (frame, next-K-actions) pair of a dataset, unnormalized."""

    q: np.ndarray
    tactile: np.ndarray
    images: np.ndarray
    chunks: np.ndarray
    masks: np.ndarray

    def __len__(self) -> int:
        return self.q.shape[0]


def action_chunks(actions: np.ndarray, chunk_size: int):
    """Chunks starting at every frame, padded by repeating the final action.

    Returns:
        (T, K, A) chunks and the (T, K) mask that is 0 on padding
    """
    actions = np.asarray(actions, dtype=float)
    t = actions.shape[0]
    index = np.arange(t)[:, None] + np.arange(chunk_size)[None, :]
    mask = (index < t).astype(float)
    return actions[np.minimum(index, t - 1)], mask


def build_samples(episodes: Sequence[Episode], cfg: PolicyConfig) -> SampleSet:
    if not episodes:
        raise EmptyBatch("no episodes to train on")
    q, tactile, images, chunks, masks = [], [], [], [], []
    for episode in episodes:
        h = episode.header
        c, m = action_chunks(episode.actions(), cfg.chunk_size)
        chunks.append(c)
        masks.append(m)
        q.append(episode.joint_positions())
        tactile.append(np.array([frame.tactile_vector() for frame in episode.frames]))
        images.append(np.stack([frame.pixels(h.image_width, h.image_height) for frame in episode.frames]))
    return SampleSet(np.concatenate(q), np.concatenate(tactile), np.concatenate(images),
                     np.concatenate(chunks), np.concatenate(masks))


def subset_episodes(episodes: Sequence[Episode], fraction: float, seed: int) -> List[Episode]:
    """Deterministic subset holding ``round(fraction * n)`` episodes (at least one)."""
    if fraction >= 1.0:
        return list(episodes)
    count = max(1, int(round(fraction * len(episodes))))
    chosen = np.sort(np.random.default_rng(seed).permutation(len(episodes))[:count])
    return [episodes[i] for i in chosen]


def make_batch(samples: SampleSet, index: np.ndarray, stats: NormalizationStats) -> TrainingBatch:
    obs = Observation(
        q=(samples.q[index] - stats.q_mean) / stats.q_std,
        tactile=samples.tactile[index],
        image=np.stack([image_to_input(img) for img in samples.images[index]]),
    )
    actions = (samples.chunks[index] - stats.action_mean) / stats.action_std
    return TrainingBatch(obs=obs, actions=actions, mask=samples.masks[index])


def policy_adjacency(cfg: PolicyConfig) -> Optional[GraphAdjacency]:
    if not cfg.gcn_hidden:
        return None
    return GraphAdjacency(build_layout().adjacency())


def train_policy(cfg: PolicyConfig, episodes: Sequence[Episode], steps: int, batch_size: int, seed: int,
                 log_every: int = 100, clip_norm: float = 0.0) -> tuple:
    """Train a fresh policy with Adam.

    Returns:
        The trained policy and one loss record per step
    """
    samples = build_samples(episodes, cfg)
    stats = NormalizationStats.fit(samples.q, samples.chunks.reshape(-1, cfg.action_dim))
    policy = TactPolicy(cfg, policy_adjacency(cfg), seed=seed)
    policy.stats = stats
    params = policy.parameters()
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng(seed)

    history: List[Dict[str, float]] = []
    for step in range(steps):
        index = rng.integers(0, len(samples), size=batch_size)
        loss, parts = training_loss(policy, make_batch(samples, index, stats), rng)
        policy.zero_grad()
        backward(loss)
        grads = [p.grad for p in params]
        if clip_norm > 0:
            grads = clip_grad_norm(grads, clip_norm)
        adam_step(params, grads, state)
        history.append({"step": step, **parts})
        if log_every and (step % log_every == 0 or step == steps - 1):
            logger.info(f"Step {step}/{steps}: loss {parts['loss']:.5f} (l1 {parts['l1']:.5f}, kl {parts['kl']:.5f})")
    return policy, history


def write_loss_csv(path: str, history: Sequence[Dict[str, float]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for record in history:
            writer.writerow([record["step"]] + [repr(float(record[c])) for c in LOSS_COLUMNS[1:]])


def read_loss_csv(path: str) -> Dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return {c: np.array([float(r[c]) for r in rows]) for c in LOSS_COLUMNS}
