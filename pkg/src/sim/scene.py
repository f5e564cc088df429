"""Scene configuration and world value types."""
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.control.ik import ArmModel, fk_chain
from src.control.lipm import BalanceState, LipmState


class TaskKind(str, Enum):
    HOLD_UP = "HoldUp"
    REORIENT = "Reorient"


class TaskStatus(str, Enum):
    IN_PROGRESS = "InProgress"
    SUCCESS = "Success"
    DROPPED = "DroppedFail"
    CRUSHED = "CrushedFail"
    TIMEOUT = "TimeoutFail"

    @property
    def terminal(self) -> bool:
        return self is not TaskStatus.IN_PROGRESS


class SceneConfig(BaseModel):
    """Geometry, physics and sensing constants of the desk world (SI units)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Table and robot body
    table_top: float = 0.70
    table_half_width: float = 0.50
    waist_height: float = 1.00
    shoulder_offset: Tuple[float, float] = (0.20, 0.20)
    link_lengths: Tuple[float, float, float] = (0.28, 0.25, 0.05)
    capsule_radius: float = 0.03
    neutral_q: Tuple[float, float, float] = (-0.5, -1.4, 0.33)
    chest_half_width: float = 0.12

    # Box
    box_mass: float = 0.3
    holdup_box_height: float = 0.12
    arm_span: float = 0.68
    size_fractions: Tuple[float, float, float, float] = (0.21, 0.27, 0.44, 0.35)
    reorient_box: Tuple[float, float] = (0.10, 0.20)
    size_scale: float = 1.0
    reach_limit: float = 0.25

    # Contact
    gravity: float = 9.81
    contact_stiffness: float = 2000.0
    contact_damping: float = 40.0
    friction: float = 0.8
    box_damping: float = 5.0
    friction_iterations: int = 8

    # Task judging
    crush_force: float = 15.0
    crush_time: float = 0.2
    lift_height: float = 0.10
    hold_time: float = 2.0
    reorient_tolerance_deg: float = 5.0
    timeout: float = 45.0

    # Tactile sensing
    touch_gain: float = 100.0
    proximity_length: float = 0.03
    proximity_range: float = 0.10
    proximity_enabled: bool = True

    # Head camera
    image_width: int = 64
    image_height: int = 48
    box_texture: str = "plain"
    box_color: Tuple[int, int, int] = (200, 60, 50)

    def size_names(self) -> List[str]:
        return ["small", "medium", "large", "unseen"]

    def holdup_box(self, size: str) -> Tuple[float, float]:
        fraction = dict(zip(self.size_names(), self.size_fractions))[size]
        return fraction * self.arm_span * self.size_scale, self.holdup_box_height

    def box_for(self, task: "TaskKind", size: str = "medium") -> Tuple[float, float]:
        if TaskKind(task) is TaskKind.REORIENT:
            w, h = self.reorient_box
            return w * self.size_scale, h * self.size_scale
        return self.holdup_box(size)

    def shoulder(self, arm: str) -> np.ndarray:
        sign = 1.0 if arm == "left" else -1.0
        return np.array([sign * self.shoulder_offset[0], self.shoulder_offset[1]])


@dataclass(frozen=True)
class BoxState:
    """Rigid box pose and velocity; theta is counter-clockwise from upright."""

    x: float
    z: float
    theta: float
    width: float
    height: float
    mass: float
    vx: float = 0.0
    vz: float = 0.0
    omega: float = 0.0

    @property
    def inertia(self) -> float:
        return self.mass * (self.width ** 2 + self.height ** 2) / 12.0

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    def corners(self) -> np.ndarray:
        hw, hh = 0.5 * self.width, 0.5 * self.height
        local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        return local @ self.rotation().T + np.array([self.x, self.z])

    def bottom(self) -> float:
        return float(self.corners()[:, 1].min())

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - np.array([self.x, self.z])) @ self.rotation()

    def kinetic_energy(self) -> float:
        return 0.5 * self.mass * (self.vx ** 2 + self.vz ** 2) + 0.5 * self.inertia * self.omega ** 2


@dataclass(frozen=True)
class WorldState:
    """Complete simulator state at one control tick."""

    time: float
    tick: int
    balance: BalanceState
    arms: Tuple[ArmModel, ArmModel]
    box: Optional[BoxState]
    task: TaskKind
    seed: int
    deformation: float = 0.0
    crush_timer: float = 0.0
    hold_timer: float = 0.0
    lifted: bool = False
    status: TaskStatus = TaskStatus.IN_PROGRESS
    arm_forces: Tuple[float, float] = (0.0, 0.0)
    lateral_reaction: float = 0.0

    @property
    def lipm(self) -> LipmState:
        return self.balance.actual

    @property
    def zmp_violations(self) -> int:
        return self.balance.violations


ARM_NAMES = ("left", "right")


def waist_position(world: WorldState, scene: SceneConfig) -> np.ndarray:
    """World position of the robot waist; it rides the pendulum CoM."""
    return np.array([world.lipm.c, scene.waist_height])


def arm_chains(world: WorldState, scene: SceneConfig) -> np.ndarray:
    """World positions of shoulder, elbow, wrist and hand tip, shape (2, 4, 2)."""
    offset = waist_position(world, scene)
    return np.stack([fk_chain(arm) + offset for arm in world.arms])
