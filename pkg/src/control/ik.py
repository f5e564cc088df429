"""Planar three-link arm kinematics and velocity-level QP inverse kinematics."""
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np

from src.control.qp import QpProblem, solve_qp
from src.control.retarget import ArmTarget
from src.utils.errors import InvalidConfig

LINK_LENGTHS = (0.28, 0.25, 0.05)
JOINT_LOWER = (-2.8, -2.6, -2.0)
JOINT_UPPER = (1.2, 0.2, 2.0)
VELOCITY_LIMIT = 3.0


@dataclass(frozen=True)
class ArmModel:
    """Shoulder, elbow and wrist joints of one arm.

    Angles accumulate along the chain. ``lateral_sign`` is +1 for the left arm
    and -1 for the right, so q = 0 points each arm straight outward and
    positive angles raise it.
    """

    q: np.ndarray
    shoulder: np.ndarray
    lateral_sign: float = 1.0
    link_lengths: Tuple[float, float, float] = LINK_LENGTHS
    lower: Tuple[float, float, float] = JOINT_LOWER
    upper: Tuple[float, float, float] = JOINT_UPPER
    velocity_limit: Tuple[float, float, float] = (VELOCITY_LIMIT,) * 3

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(3))
        object.__setattr__(self, "shoulder", np.asarray(self.shoulder, dtype=float).reshape(2))
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if np.any(lo >= hi) or min(self.link_lengths) <= 0:
            raise InvalidConfig("joint limits must satisfy lo < hi and link lengths be positive")
        if np.any(self.q < lo) or np.any(self.q > hi):
            raise InvalidConfig(f"joint positions {self.q} outside limits")

    def integrate(self, q_dot: np.ndarray, dt: float) -> "ArmModel":
        """Advance joints by ``q_dot * dt``, clipped to the joint limits."""
        q = np.clip(self.q + np.asarray(q_dot, dtype=float) * dt, self.lower, self.upper)
        return replace(self, q=q)

    def hand_angle(self) -> float:
        return float(np.sum(self.q))


@dataclass(frozen=True)
class IkWeights:
    """Task weights and gains of the differential IK.

    Only the elbow and wrist tasks are on by default. A positive ``hand``
    weight adds a posture task holding the absolute hand angle at
    ``hand_angle`` (pointing down by default).
    """

    elbow: float = 0.3
    wrist: float = 1.0
    hand: float = 0.0
    hand_angle: float = -math.pi / 2
    k_p: float = 5.0
    damping: float = 1e-4


def _directions(arm: ArmModel) -> np.ndarray:
    theta = np.cumsum(arm.q)
    return np.column_stack([arm.lateral_sign * np.cos(theta), np.sin(theta)])


def fk_chain(arm: ArmModel) -> np.ndarray:
    """Shoulder, elbow, wrist joint and hand tip positions, shape (4, 2)."""
    offsets = _directions(arm) * np.asarray(arm.link_lengths)[:, None]
    return np.vstack([arm.shoulder, arm.shoulder + np.cumsum(offsets, axis=0)])


def fk(arm: ArmModel) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shoulder, elbow and wrist (end of chain) positions."""
    chain = fk_chain(arm)
    return chain[0], chain[1], chain[3]


def point_jacobian(arm: ArmModel, link_count: int) -> np.ndarray:
    """Jacobian (2 x 3) of the end of link ``link_count`` (1..3)."""
    theta = np.cumsum(arm.q)
    lengths = np.asarray(arm.link_lengths)
    J = np.zeros((2, 3))
    for j in range(link_count):
        for i in range(j, link_count):
            J[0, j] += -arm.lateral_sign * lengths[i] * math.sin(theta[i])
            J[1, j] += lengths[i] * math.cos(theta[i])
    return J


def ik_step(arm: ArmModel, target: ArmTarget, weights: Optional[IkWeights] = None, dt: float = 0.002) -> np.ndarray:
    """Joint velocities tracking the elbow and wrist targets of one arm.

    Targets equal to the current pose give zero velocity unless the optional
    hand posture task is weighted in.

    Minimizes the weighted task-space velocity errors plus a damping term,
    subject to velocity limits and to bounds that keep ``q + q_dot * dt``
    inside the joint limits.
    """
    if dt <= 0:
        raise InvalidConfig("dt must be positive")
    weights = weights or IkWeights()
    _, elbow, wrist = fk(arm)

    tasks = [
        (weights.elbow, point_jacobian(arm, 1), np.asarray(target.elbow) - elbow),
        (weights.wrist, point_jacobian(arm, 3), np.asarray(target.wrist) - wrist),
    ]
    if weights.hand > 0:
        hand_error = math.remainder(weights.hand_angle - arm.hand_angle(), 2 * math.pi)
        tasks.append((weights.hand, np.ones((1, 3)), np.array([hand_error])))

    H = weights.damping * np.eye(3)
    g = np.zeros(3)
    for w, J, err in tasks:
        H += w * J.T @ J
        g -= w * weights.k_p * J.T @ err

    H = 0.5 * (H + H.T)
    v = np.asarray(arm.velocity_limit)
    lb = np.maximum(-v, (np.asarray(arm.lower) - arm.q) / dt)
    ub = np.minimum(v, (np.asarray(arm.upper) - arm.q) / dt)
    # Both QP sides carry the factor 2 of the squared norms; it cancels.
    return solve_qp(QpProblem(H=H, g=g, lb=lb, ub=ub)).x


def task_error(arm: ArmModel, target: ArmTarget) -> float:
    _, elbow, wrist = fk(arm)
    return max(float(np.linalg.norm(elbow - target.elbow)), float(np.linalg.norm(wrist - target.wrist)))
