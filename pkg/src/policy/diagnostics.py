"""Attention probe and tactile activation counting."""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.nn.tensor import Tensor
from src.policy.model import Observation, TactPolicy
from src.sim.tactile import TactileFrame, TactileLayout
from src.utils.errors import ProbeUnavailable

ACTIVATION_THRESHOLD = 0.1

# Key positions in the condition block: latent, proprio, tactile, image grid.
PROPRIO_KEY = 1
TACTILE_KEY = 2
IMAGE_KEYS = slice(3, None)


@dataclass(frozen=True)
class ProbeResult:
    row: np.ndarray
    proprio: float
    tactile: float
    vision_mean: float


def attention_probe(policy: TactPolicy, obs: Observation) -> ProbeResult:
    """Head-averaged attention of the joint-position token in the first condition layer.

    Raises:
        ProbeUnavailable: If the policy lacks any modality
    """
    cfg = policy.cfg
    if not (cfg.use_proprio and cfg.use_tactile and cfg.use_vision):
        raise ProbeUnavailable(f"attention probe needs all modalities, {cfg.variant} has fewer")
    cond = policy.tokenize_condition(obs)
    z = np.zeros((cond.shape[0], cfg.latent_dim))
    _, weights = policy.condition_memory(Tensor(z), cond)
    row = weights[0][0, :, PROPRIO_KEY, :].mean(axis=0)
    return ProbeResult(row=row, proprio=float(row[PROPRIO_KEY]), tactile=float(row[TACTILE_KEY]),
                       vision_mean=float(row[IMAGE_KEYS].mean()))


def active_cell_count(frame: TactileFrame, layout: TactileLayout,
                      threshold: float = ACTIVATION_THRESHOLD) -> Tuple[int, int]:
    """Cells above ``threshold`` on the left and right arms."""
    active = np.maximum(frame.touch, frame.proximity) > threshold
    return int(np.sum(active & layout.side_mask(0))), int(np.sum(active & layout.side_mask(1)))
