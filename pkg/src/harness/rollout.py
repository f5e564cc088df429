"""Closed-loop policy and open-loop Replay rollouts."""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel

from src.policy.diagnostics import active_cell_count, attention_probe
from src.policy.ensemble import EnsembleBuffer, ensemble_action
from src.policy.model import TactPolicy, infer, normalize_observation
from src.sim.pipeline import ControlSystem, PipelineState, action_to_sample
from src.sim.scene import TaskKind
from src.sim.world import spawn
from src.utils.errors import TactError

logger = logging.getLogger(__name__)

FRAME_PERIOD = 50
DIVERGED = "DivergedFail"


@dataclass(frozen=True)
class TrialSpec:
    condition: str
    task: TaskKind
    size: str
    position: float
    seed: int
    size_scale: float = 1.0
    texture: str = "plain"


class TrialResult(BaseModel):
    condition: str
    position: float
    size: str
    seed: int
    outcome: str
    reason: str = ""
    duration: float
    zmp_violations: int
    probe_trace: List[List[float]] = []
    active_cells: List[List[int]] = []

    def ledger_row(self) -> dict:
        return {
            "condition": self.condition,
            "position": self.position,
            "size": self.size,
            "seed": self.seed,
            "outcome": self.outcome,
            "reason": self.reason,
            "duration": self.duration,
            "zmp_violations": self.zmp_violations,
        }


class ReplayController:
    """Plays a recorded action stream open loop, holding its last action."""

    def __init__(self, actions: np.ndarray):
        self.actions = np.asarray(actions, dtype=float)

    def action(self, k: int) -> np.ndarray:
        return self.actions[min(k, len(self.actions) - 1)]


def _finish(spec: TrialSpec, state: PipelineState, probe: List[List[float]], active: List[List[int]],
            outcome: Optional[str] = None, reason: str = "") -> TrialResult:
    world = state.world
    return TrialResult(condition=spec.condition, position=spec.position, size=spec.size, seed=spec.seed,
                       outcome=outcome or world.status.value, reason=reason, duration=world.time,
                       zmp_violations=world.zmp_violations, probe_trace=probe, active_cells=active)


def run_trial(system: ControlSystem, spec: TrialSpec, policy: Optional[TactPolicy] = None,
              replay: Optional[ReplayController] = None, record_traces: bool = True) -> TrialResult:
    """Roll out one trial to a terminal status.

    The policy acts at the frame rate with temporal ensembling; each action
    is held for ``FRAME_PERIOD`` control ticks. A diverging simulation ends
    the trial as a failure with the reason recorded.
    """
    if (policy is None) == (replay is None):
        raise ValueError("exactly one of policy or replay is required")
    state = system.start(spawn(system.ctx, spec.task, spec.size, spec.position, spec.seed))
    waist = system.retarget.operator_waist
    layout = system.ctx.layout
    cfg = policy.cfg if policy is not None else None
    probe_enabled = record_traces and cfg is not None and cfg.use_proprio and cfg.use_tactile and cfg.use_vision
    buffer = EnsembleBuffer(cfg.chunk_size) if cfg is not None else None

    probe, active = [], []
    k = 0
    try:
        while not state.world.status.terminal:
            q, tactile, image = system.observe(state)
            if record_traces:
                active.append(list(active_cell_count(tactile, layout)))
            if policy is not None:
                pixels = image.as_array()
                buffer.push(k, infer(policy, q, tactile.flatten(), pixels))
                action = ensemble_action(buffer, k, cfg.ensemble_decay)
                if probe_enabled:
                    result = attention_probe(policy, normalize_observation(policy, q, tactile.flatten(), pixels))
                    probe.append([result.proprio, result.tactile, result.vision_mean])
            else:
                action = replay.action(k)
            state = system.hold(state, action_to_sample(action, waist), FRAME_PERIOD)
            k += 1
    except TactError as e:
        logger.error(f"Trial {spec.condition} p={spec.position:+.3f} seed {spec.seed} failed: {e.message}")
        return _finish(spec, state, probe, active, outcome=DIVERGED, reason=f"{e.code}: {e.message}")
    logger.info(f"Trial {spec.condition} p={spec.position:+.3f}: {state.world.status.value} "
                f"after {state.world.time:.2f}s")
    if state.world.zmp_violations:
        logger.warning(f"Trial {spec.condition} p={spec.position:+.3f} had {state.world.zmp_violations} ZMP violations")
    return _finish(spec, state, probe, active)
