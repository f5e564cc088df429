"""Demonstration collection: expert rollouts recorded at the policy rate."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.expert.episode import (
    DatasetManifest,
    Episode,
    EpisodeHeader,
    Frame,
    ManifestEntry,
    encode_image,
    write_episode,
    write_manifest,
)
from src.expert.scripted import ExpertConfig, ScriptedExpert, holdup_positions
from src.sim.pipeline import BalanceConfig, IkConfig, RetargetConfig, action_to_sample, build_control_system
from src.sim.scene import SceneConfig, TaskKind, TaskStatus
from src.sim.world import spawn
from src.utils.errors import CollectionFailed, TactError

logger = logging.getLogger(__name__)

FRAME_PERIOD = 50
REORIENT_POSITIONS = (-0.1, 0.0, 0.1)
HOLDUP_SIZES = ("small", "medium", "large")


class CollectionSetup(BaseModel):
    """Everything a worker needs to rebuild the robot and the expert."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    scene: SceneConfig = SceneConfig()
    balance: BalanceConfig = BalanceConfig()
    retarget: RetargetConfig = RetargetConfig()
    ik: IkConfig = IkConfig()
    expert: ExpertConfig = ExpertConfig()
    config_hash: str = ""


@dataclass(frozen=True)
class EpisodeSpec:
    task: TaskKind
    size: str
    position: float
    seed: int

    def file_name(self, index: int) -> str:
        return f"episode_{index:03d}.jsonl"


def attempt_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return seed
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def run_expert(setup: CollectionSetup, spec: EpisodeSpec, seed: int,
               max_ticks: Optional[int] = None) -> Tuple[TaskStatus, List[Frame]]:
    """One expert rollout; frames are recorded before each 10 Hz action is applied."""
    system = build_control_system(setup.scene, setup.balance, setup.retarget, setup.ik)
    expert = ScriptedExpert(setup.expert, system)
    world = spawn(system.ctx, spec.task, spec.size, spec.position, seed)
    state = system.start(world)
    expert_state = expert.start(world, seed)
    waist = setup.retarget.operator_waist

    frames = []
    while not state.world.status.terminal:
        if max_ticks is not None and state.world.tick >= max_ticks:
            break
        q, tactile, image = system.observe(state)
        action, expert_state = expert.expert_action(state.world, state.tactile, expert_state)
        frames.append(Frame(tick=state.world.tick, q=q.tolist(), touch=tactile.touch.tolist(),
                            proximity=tactile.proximity.tolist(), image=encode_image(image.as_array()),
                            action=action.tolist()))
        state = system.hold(state, action_to_sample(action, waist), FRAME_PERIOD)
    return state.world.status, frames


def collect_episode(setup: CollectionSetup, spec: EpisodeSpec, out_path: Union[str, Path]) -> Tuple[Episode, str, int]:
    """Record one successful demonstration, reseeding failed expert runs.

    Returns:
        The episode, its file checksum and the number of discarded attempts

    Raises:
        CollectionFailed: If the expert fails more than ``max_retries`` times
    """
    discarded = 0
    for attempt in range(setup.expert.max_retries + 1):
        seed = attempt_seed(spec.seed, attempt)
        try:
            status, frames = run_expert(setup, spec, seed)
        except TactError as e:
            logger.error(f"Expert run for {spec.task.value} p={spec.position:+.3f} seed {seed} failed: {e.message}")
            status, frames = TaskStatus.IN_PROGRESS, []
        if status is TaskStatus.SUCCESS:
            header = EpisodeHeader(
                task=spec.task.value, size=spec.size, position=spec.position, seed=seed,
                config_hash=setup.config_hash, n_cells=len(frames[0].touch),
                image_width=setup.scene.image_width, image_height=setup.scene.image_height,
                frame_period=FRAME_PERIOD, control_dt=setup.balance.dt, outcome=status.value,
            )
            episode = Episode(header=header, frames=frames)
            digest = write_episode(str(out_path), episode)
            logger.info(f"Wrote {out_path} ({len(frames)} frames, {discarded} discarded)")
            return episode, digest, discarded
        discarded += 1
        logger.warning(f"Discarding {spec.task.value} demonstration p={spec.position:+.3f} seed {seed}: {status.value}")
    raise CollectionFailed(f"expert failed {discarded} times on {spec.task.value} p={spec.position:+.3f}")


def dataset_plan(task: TaskKind, seed: int, episodes_per_condition: Optional[int] = None,
                 cfg: Optional[ExpertConfig] = None) -> List[EpisodeSpec]:
    """Default demonstration set: 10 per reorientation position, 9 per hold-up size."""
    task = TaskKind(task)
    specs = []
    if task is TaskKind.REORIENT:
        count = episodes_per_condition or 10
        for position in REORIENT_POSITIONS:
            for k in range(count):
                specs.append(EpisodeSpec(task, "reorient", position, seed * 1000 + len(specs)))
    else:
        count = episodes_per_condition or 9
        for size in HOLDUP_SIZES:
            offsets = holdup_positions(seed * 1000 + len(specs), count, cfg)
            for k in range(count):
                specs.append(EpisodeSpec(task, size, float(offsets[k]), seed * 1000 + len(specs)))
    return specs


def _collect_one(args):
    setup, spec, path = args
    try:
        episode, digest, discarded = collect_episode(setup, spec, path)
        return spec, path, episode, digest, discarded, None
    except CollectionFailed as e:
        return spec, path, None, "", setup.expert.max_retries + 1, e.message


def collect_dataset(setup: CollectionSetup, specs: List[EpisodeSpec], out_dir: Union[str, Path],
                    workers: int = 1) -> DatasetManifest:
    """Collect every planned episode and write the manifest.

    Results are merged in plan order whatever order the workers finish in.
    Failed conditions are listed in the manifest and then raised.

    Raises:
        CollectionFailed: If any planned episode could not be collected
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(setup, spec, out_dir / spec.file_name(i)) for i, spec in enumerate(specs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_collect_one, jobs))
    else:
        results = [_collect_one(job) for job in jobs]

    entries, failures, discarded = [], [], 0
    for spec, path, episode, digest, dropped, error in results:
        discarded += dropped
        if error is not None:
            failures.append(error)
            continue
        entries.append(ManifestEntry(file=path.name, sha256=digest, size=spec.size, position=spec.position,
                                     seed=episode.header.seed, frames=len(episode.frames), discarded=dropped))

    task = specs[0].task.value if specs else ""
    manifest = DatasetManifest(task=task, config_hash=setup.config_hash, episodes=entries,
                               discarded=discarded, failures=failures)
    write_manifest(str(out_dir), manifest)
    logger.info(f"Collected {len(entries)} episodes into {out_dir} ({discarded} discarded)")
    if failures:
        raise CollectionFailed(f"{len(failures)} demonstrations could not be collected")
    return manifest
