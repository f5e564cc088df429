"""Evaluation grids and the aggregated report."""
import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from src.expert.scripted import holdup_positions
from src.harness.config import ExperimentConfig
from src.harness.rollout import ReplayController, TrialResult, TrialSpec, run_trial
from src.harness.training import policy_adjacency
from src.policy.config import REPLAY
from src.policy.model import TactPolicy
from src.sim.pipeline import build_control_system
from src.sim.scene import TaskKind, TaskStatus

logger = logging.getLogger(__name__)


class EvalReport(BaseModel):
    variant: str
    task: str
    seed: int
    config_hash: str
    trials: List[TrialResult]

    def outcome_counts(self) -> Dict[str, int]:
        return dict(sorted(Counter(t.outcome for t in self.trials).items()))

    def successes(self) -> int:
        return sum(t.outcome == TaskStatus.SUCCESS.value for t in self.trials)

    def success_rate(self) -> float:
        return self.successes() / len(self.trials) if self.trials else 0.0

    def per_condition(self) -> Dict[str, Tuple[int, int]]:
        """(successes, trials) per condition label, in first-seen order."""
        table: Dict[str, List[int]] = {}
        for t in self.trials:
            row = table.setdefault(t.condition, [0, 0])
            row[0] += t.outcome == TaskStatus.SUCCESS.value
            row[1] += 1
        return {k: (v[0], v[1]) for k, v in table.items()}

    def zmp_violations(self) -> int:
        return sum(t.zmp_violations for t in self.trials)

    def mean_probe_trace(self) -> np.ndarray:
        return _mean_trace([t.probe_trace for t in self.trials], 3)

    def mean_active_trace(self) -> np.ndarray:
        return _mean_trace([t.active_cells for t in self.trials], 2)

    def to_bytes(self) -> bytes:
        return (json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=1) + "\n").encode("utf-8")


def _mean_trace(traces: Sequence[Sequence[Sequence[float]]], width: int) -> np.ndarray:
    """Per-tick mean across trials; a trial contributes while it lasts."""
    traces = [np.asarray(t, dtype=float).reshape(-1, width) for t in traces if len(t)]
    if not traces:
        return np.zeros((0, width))
    length = max(len(t) for t in traces)
    total = np.zeros((length, width))
    count = np.zeros(length)
    for t in traces:
        total[:len(t)] += t
        count[:len(t)] += 1
    return total / count[:, None]


def write_report(path: str, report: EvalReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(report.to_bytes())


def read_report(path: str) -> EvalReport:
    return EvalReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def eval_plan(config: ExperimentConfig, seed: int) -> List[TrialSpec]:
    """Trials in report order: the position grid for reorientation, sizes for hold-up.

    Hold-up trials draw their small spawn offsets from the trial seed.
    """
    ev = config.evaluation
    specs = []
    for scale in ev.size_scales:
        for texture in ev.textures:
            suffix = "" if (scale == 1.0 and texture == "plain") else f"@x{scale:g}-{texture}"
            if config.task is TaskKind.REORIENT:
                for i, p in enumerate(ev.positions):
                    specs.append(TrialSpec(f"p={p:+.2f}{suffix}", config.task, "reorient", float(p),
                                           seed * 1000 + i, scale, texture))
            else:
                for j, size in enumerate(ev.sizes):
                    trial_seed = seed * 1000 + 100 * j
                    offsets = holdup_positions(trial_seed, ev.trials_per_condition, config.expert)
                    for k in range(ev.trials_per_condition):
                        specs.append(TrialSpec(f"{size}{suffix}", config.task, size, float(offsets[k]),
                                               trial_seed + k, scale, texture))
    return specs


def _run_one(args) -> TrialResult:
    config, spec, checkpoint, replay_actions = args
    scene = config.scene.model_copy(update={"size_scale": spec.size_scale, "box_texture": spec.texture})
    system = build_control_system(scene, config.lipm, config.retarget, config.ik)
    record = config.evaluation.record_traces
    if replay_actions is not None:
        return run_trial(system, spec, replay=ReplayController(np.asarray(replay_actions)), record_traces=record)
    cfg = config.policy_config()
    policy = TactPolicy.load(checkpoint, cfg, policy_adjacency(cfg))
    return run_trial(system, spec, policy=policy, record_traces=record)


def evaluate(config: ExperimentConfig, seed: int, checkpoint: Optional[str] = None,
             replay_episodes: Optional[Sequence] = None, workers: int = 1) -> EvalReport:
    """Run the evaluation grid; results keep grid order whatever the worker timing.

    Replay picks one training episode per trial at random (seeded) and plays it.
    """
    variant = config.experiment.variant
    specs = eval_plan(config, seed)
    jobs = []
    rng = np.random.default_rng(seed)
    for spec in specs:
        if variant == REPLAY:
            episode = replay_episodes[int(rng.integers(len(replay_episodes)))]
            jobs.append((config, spec, None, episode.actions().tolist()))
        else:
            jobs.append((config, spec, checkpoint, None))

    # Load once up front so a hash mismatch fails before any rollout.
    if variant != REPLAY:
        cfg = config.policy_config()
        TactPolicy.load(checkpoint, cfg, policy_adjacency(cfg))
        config_hash = cfg.config_hash()
    else:
        config_hash = config.dataset_hash()

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_one, jobs))
    else:
        trials = [_run_one(job) for job in jobs]

    report = EvalReport(variant=variant, task=config.task.value, seed=seed, config_hash=config_hash, trials=trials)
    logger.info(f"{variant} on {config.task.value}: {report.successes()}/{len(trials)} successes, "
                f"{report.zmp_violations()} ZMP violations")
    return report
