"""World construction and the 500 Hz simulation step."""
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.control.ik import ArmModel
from src.control.lipm import (
    BalanceController,
    DampingConfig,
    DcmFeedbackConfig,
    LipmParams,
    PreviewGains,
    compute_preview_gains,
)
from src.sim.contact import arm_contacts, lateral_reaction, per_arm_force, resolve, table_contacts
from src.sim.scene import ARM_NAMES, BoxState, SceneConfig, TaskKind, TaskStatus, WorldState, arm_chains
from src.sim.status import task_status
from src.sim.tactile import TactileLayout, build_layout
from src.utils.errors import SimulationDiverged, UnreachableSpawn

logger = logging.getLogger(__name__)

LIFT_ONSET = 0.02


@dataclass(frozen=True)
class SimContext:
    """Everything that stays fixed over an episode."""

    scene: SceneConfig
    lipm: LipmParams
    controller: BalanceController
    layout: TactileLayout

    @property
    def dt(self) -> float:
        return self.lipm.dt


@lru_cache(maxsize=16)
def _cached_gains(params: LipmParams, n_preview: int, k_c: float) -> PreviewGains:
    return compute_preview_gains(params, n_preview, k_c)


def make_context(scene: Optional[SceneConfig] = None, lipm: Optional[LipmParams] = None,
                 n_preview: int = 300, k_c: float = 1e-6,
                 dcm_cfg: Optional[DcmFeedbackConfig] = None,
                 damping_cfg: Optional[DampingConfig] = None,
                 support_half_width: float = 0.05) -> SimContext:
    scene = scene or SceneConfig()
    lipm = lipm or LipmParams()
    controller = BalanceController(
        lipm,
        _cached_gains(lipm, n_preview, k_c),
        dcm_cfg or DcmFeedbackConfig(),
        damping_cfg or DampingConfig(),
        support_half_width=support_half_width,
    )
    return SimContext(scene=scene, lipm=lipm, controller=controller, layout=build_layout())


def neutral_arms(scene: SceneConfig) -> Tuple[ArmModel, ArmModel]:
    return tuple(
        ArmModel(q=np.array(scene.neutral_q), shoulder=scene.shoulder(arm),
                 lateral_sign=1.0 if arm == "left" else -1.0, link_lengths=scene.link_lengths)
        for arm in ARM_NAMES
    )


def spawn(ctx: SimContext, task: TaskKind, size: Union[str, Tuple[float, float]], p: float,
          seed: int) -> WorldState:
    """Box resting upright on the table at lateral position ``p``, arms at neutral.

    The box starts at the static equilibrium of its two bottom corners, so a
    world stepped with zero commands stays put.

    Raises:
        UnreachableSpawn: If ``p`` is outside the reach envelope or the box overhangs the table
    """
    scene = ctx.scene
    task = TaskKind(task)
    width, height = scene.box_for(task, size) if isinstance(size, str) else (float(size[0]), float(size[1]))
    if abs(p) > scene.reach_limit:
        raise UnreachableSpawn(f"box position {p:+.3f} m is outside the reach envelope ±{scene.reach_limit} m")
    if abs(p) + 0.5 * width > scene.table_half_width:
        raise UnreachableSpawn(f"box at {p:+.3f} m overhangs the table")

    penetration = scene.box_mass * scene.gravity / (2.0 * scene.contact_stiffness)
    box = BoxState(x=float(p), z=scene.table_top + 0.5 * height - penetration, theta=0.0,
                   width=width, height=height, mass=scene.box_mass)
    return WorldState(time=0.0, tick=0, balance=ctx.controller.initial_state(), arms=neutral_arms(scene),
                      box=box, task=task, seed=seed)


def accumulate_crush(crush_timer: float, deformation: float, force: float, dt: float,
                     scene: SceneConfig) -> Tuple[float, float]:
    """Crush timer and deformation after one tick under a peak contact force."""
    if force > scene.crush_force:
        return crush_timer + dt, max(deformation, (force - scene.crush_force) / scene.contact_stiffness)
    return 0.0, deformation


def _finite(world: WorldState) -> bool:
    values = [world.lipm.c, world.lipm.c_dot, world.lipm.c_ddot]
    if world.box is not None:
        b = world.box
        values += [b.x, b.z, b.theta, b.vx, b.vz, b.omega]
    return all(math.isfinite(v) for v in values)


def step(ctx: SimContext, world: WorldState, arm_commands: Sequence[np.ndarray]) -> WorldState:
    """Advance the world one control period.

    Arms integrate their joint velocities, the torso follows the balance
    controller under the previous tick's arm reaction, and the box moves
    under gravity and contact forces.

    Raises:
        SimulationDiverged: If any state becomes non-finite
    """
    scene, dt = ctx.scene, ctx.dt
    before = arm_chains(world, scene)
    arms = tuple(arm.integrate(q_dot, dt) for arm, q_dot in zip(world.arms, arm_commands))
    balance = ctx.controller.tick(world.balance, world.lateral_reaction)
    tick = world.tick + 1
    moved = replace(world, arms=arms, balance=balance, tick=tick, time=tick * dt)

    box = world.box
    forces, reaction = (0.0, 0.0), 0.0
    if box is not None:
        after = arm_chains(moved, scene)
        contacts = table_contacts(box, scene) + arm_contacts(box, after, (after - before) / dt, scene)
        box, normal_forces = resolve(box, contacts, scene, dt)
        forces = per_arm_force(contacts, normal_forces)
        reaction = lateral_reaction(contacts, normal_forces)

    crush_timer, deformation = accumulate_crush(world.crush_timer, world.deformation, max(forces), dt, scene)
    hold_timer, lifted = 0.0, world.lifted
    if box is not None:
        bottom = box.bottom()
        lifted = lifted or bottom > scene.table_top + LIFT_ONSET
        if bottom >= scene.table_top + scene.lift_height and max(forces) > 0.0:
            hold_timer = world.hold_timer + dt

    new_world = replace(moved, box=box, arm_forces=forces, lateral_reaction=reaction,
                        crush_timer=crush_timer, deformation=deformation,
                        hold_timer=hold_timer, lifted=lifted)
    if not _finite(new_world):
        logger.error(f"Simulation diverged at tick {tick} (seed {world.seed})")
        raise SimulationDiverged(f"non-finite state at tick {tick}")

    status = task_status(new_world, scene)
    if status is not TaskStatus.IN_PROGRESS and world.status is TaskStatus.IN_PROGRESS:
        logger.debug(f"Task {world.task.value} reached {status.value} at t={new_world.time:.3f}s")
    return replace(new_world, status=status)
