"""Task outcome judging."""
import math

from src.sim.scene import SceneConfig, TaskKind, TaskStatus, WorldState

DROP_MARGIN = 0.05
REST_LINEAR = 1e-3
REST_ANGULAR = 1e-2
ON_TABLE_TOLERANCE = 0.005


def box_at_rest(world: WorldState) -> bool:
    box = world.box
    return math.hypot(box.vx, box.vz) < REST_LINEAR and abs(box.omega) < REST_ANGULAR


def box_on_table(world: WorldState, scene: SceneConfig) -> bool:
    return abs(world.box.bottom() - scene.table_top) <= ON_TABLE_TOLERANCE


def task_status(world: WorldState, scene: SceneConfig) -> TaskStatus:
    """Status of the episode; terminal statuses never change once reached.

    Checks run in the order crushed, dropped, success, timeout.
    """
    if world.status.terminal:
        return world.status
    box = world.box
    if box is None:
        return TaskStatus.TIMEOUT if world.time >= scene.timeout else TaskStatus.IN_PROGRESS

    if world.crush_timer > scene.crush_time:
        return TaskStatus.CRUSHED

    bottom = box.bottom()
    if bottom < scene.table_top - DROP_MARGIN:
        return TaskStatus.DROPPED

    if world.task is TaskKind.HOLD_UP:
        if world.lifted and bottom <= scene.table_top + ON_TABLE_TOLERANCE:
            return TaskStatus.DROPPED
        if world.hold_timer >= scene.hold_time:
            return TaskStatus.SUCCESS
    else:
        tilt = abs(math.degrees(box.theta) - 90.0)
        if tilt < scene.reorient_tolerance_deg and box_at_rest(world) and box_on_table(world, scene):
            return TaskStatus.SUCCESS

    if world.time >= scene.timeout:
        return TaskStatus.TIMEOUT
    return TaskStatus.IN_PROGRESS
