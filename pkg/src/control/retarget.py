"""Operator-to-robot arm retargeting in the frontal plane.

Coordinates are (lateral, vertical) with +x toward the body's left side.
Human quantities live in the tracker world frame; robot targets are
expressed relative to the robot waist.
"""
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.utils.errors import CalibrationResidualTooLarge, DegenerateCalibration, InvalidConfig

ARMS = ("left", "right")
MIN_LINE_ANGLE = math.radians(10.0)
MAX_RESIDUAL = 0.02


def _vec(value) -> np.ndarray:
    return np.asarray(value, dtype=float).reshape(2)


@dataclass(frozen=True)
class TrackerSample:
    """One tracker reading: waist, elbows, wrists and the gripper triggers."""

    waist: np.ndarray
    left_elbow: np.ndarray
    left_wrist: np.ndarray
    right_elbow: np.ndarray
    right_wrist: np.ndarray
    triggers: np.ndarray

    def __post_init__(self):
        for name in ("waist", "left_elbow", "left_wrist", "right_elbow", "right_wrist"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        object.__setattr__(self, "triggers", np.clip(np.asarray(self.triggers, dtype=float).reshape(2), 0.0, 1.0))
        values = np.concatenate([self.waist, self.left_elbow, self.left_wrist,
                                 self.right_elbow, self.right_wrist, self.triggers])
        if not np.all(np.isfinite(values)):
            raise InvalidConfig("tracker sample contains non-finite values")

    def elbow(self, arm: str) -> np.ndarray:
        return self.left_elbow if arm == "left" else self.right_elbow

    def wrist(self, arm: str) -> np.ndarray:
        return self.left_wrist if arm == "left" else self.right_wrist

    def trigger(self, arm: str) -> float:
        return float(self.triggers[0 if arm == "left" else 1])


@dataclass(frozen=True)
class ArmTarget:
    elbow: np.ndarray
    wrist: np.ndarray
    gripper: float = 0.0


@dataclass(frozen=True)
class ArmTargets:
    """Elbow and wrist targets per robot arm, relative to the robot waist."""

    left: ArmTarget
    right: ArmTarget

    def arm(self, name: str) -> ArmTarget:
        return self.left if name == "left" else self.right

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.left.elbow, self.left.wrist, [self.left.gripper],
                               self.right.elbow, self.right.wrist, [self.right.gripper]])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "ArmTargets":
        v = np.asarray(values, dtype=float)
        return cls(left=ArmTarget(v[0:2].copy(), v[2:4].copy(), float(v[4])),
                   right=ArmTarget(v[5:7].copy(), v[7:9].copy(), float(v[9])))


@dataclass(frozen=True)
class CalibrationResult:
    """Operator geometry (waist frame) and the per-segment scale factors.

    ``robot_shoulders`` gives the robot shoulder origins in the robot waist
    frame; ``scales`` is (upper arm, forearm) robot length over human length.
    """

    shoulders: Dict[str, np.ndarray]
    upper_length: Dict[str, float]
    forearm_length: Dict[str, float]
    scales: Dict[str, Tuple[float, float]]
    robot_shoulders: Dict[str, np.ndarray]
    residual: float = 0.0


@dataclass(frozen=True)
class LagFilterState:
    targets: ArmTargets
    time_constant: float = 0.16

    def __post_init__(self):
        if self.time_constant <= 0:
            raise InvalidConfig("lag time constant must be positive")


def _direction(angle: float, side: float) -> np.ndarray:
    return np.array([side * math.cos(angle), math.sin(angle)])


def synthesize_postures(waist: Sequence[float], shoulders: Dict[str, Sequence[float]],
                        upper: float, forearm: float,
                        angles: Sequence[float] = (-math.pi / 3, 0.0, math.pi / 2)) -> Tuple[TrackerSample, ...]:
    """Straight-arm calibration samples of a synthetic operator.

    ``shoulders`` are world positions; ``angles`` are the arm elevations of the
    forward, sideways and upward postures measured from the outward lateral axis.
    """
    samples = []
    for angle in angles:
        points = {}
        for arm, side in (("left", 1.0), ("right", -1.0)):
            d = _direction(angle, side)
            s = _vec(shoulders[arm])
            points[f"{arm}_elbow"] = s + upper * d
            points[f"{arm}_wrist"] = s + (upper + forearm) * d
        samples.append(TrackerSample(waist=_vec(waist), triggers=np.zeros(2), **points))
    return tuple(samples)


def _line_intersection(points: np.ndarray, directions: np.ndarray) -> Tuple[np.ndarray, float]:
    M = np.zeros((2, 2))
    rhs = np.zeros(2)
    projectors = []
    for p, d in zip(points, directions):
        proj = np.eye(2) - np.outer(d, d)
        projectors.append(proj)
        M += proj
        rhs += proj @ p
    s = np.linalg.solve(M, rhs)
    residual = max(float(np.linalg.norm(proj @ (s - p))) for proj, p in zip(projectors, points))
    return s, residual


def calibrate(forward: TrackerSample, sideways: TrackerSample, upward: TrackerSample,
              robot_shoulders: Optional[Dict[str, Sequence[float]]] = None,
              robot_lengths: Tuple[float, float] = (0.28, 0.30),
              tolerance: float = MAX_RESIDUAL) -> CalibrationResult:
    """Recover the operator's shoulders and segment lengths from three postures.

    Each elbow-wrist line of a straight arm passes through the shoulder, so the
    shoulder is the least-squares intersection of the three lines.

    Raises:
        DegenerateCalibration: If two lines of an arm are within 10 degrees
        CalibrationResidualTooLarge: If the fitted shoulder misses a line by more than ``tolerance``
    """
    if robot_shoulders is None:
        robot_shoulders = {"left": (0.20, 0.20), "right": (-0.20, 0.20)}
    samples = (forward, sideways, upward)
    shoulders, uppers, forearms, scales = {}, {}, {}, {}
    worst = 0.0

    for arm in ARMS:
        points, directions = [], []
        for sample in samples:
            e, w = sample.elbow(arm) - sample.waist, sample.wrist(arm) - sample.waist
            span = np.linalg.norm(w - e)
            if span < 1e-9:
                raise DegenerateCalibration(f"{arm} wrist coincides with elbow")
            points.append(e)
            directions.append((w - e) / span)
        for i in range(3):
            for j in range(i + 1, 3):
                cos = abs(float(directions[i] @ directions[j]))
                if math.acos(min(cos, 1.0)) <= MIN_LINE_ANGLE:
                    raise DegenerateCalibration(f"{arm} calibration lines {i} and {j} are near-parallel")

        s, residual = _line_intersection(np.array(points), np.array(directions))
        if residual > tolerance:
            raise CalibrationResidualTooLarge(f"{arm} shoulder residual {residual:.4f} m")
        worst = max(worst, residual)

        upper = float(np.mean([np.linalg.norm(p - s) for p in points]))
        fore = float(np.mean([np.linalg.norm(sample.wrist(arm) - sample.elbow(arm)) for sample in samples]))
        shoulders[arm] = s
        uppers[arm] = upper
        forearms[arm] = fore
        scales[arm] = (robot_lengths[0] / upper, robot_lengths[1] / fore)

    return CalibrationResult(
        shoulders=shoulders,
        upper_length=uppers,
        forearm_length=forearms,
        scales=scales,
        robot_shoulders={arm: _vec(robot_shoulders[arm]) for arm in ARMS},
        residual=worst,
    )


def mirror_sample(sample: TrackerSample) -> TrackerSample:
    """Reflect a sample about the operator's waist and swap the arms."""
    wx = sample.waist[0]

    def flip(p):
        return np.array([2.0 * wx - p[0], p[1]])

    return TrackerSample(
        waist=sample.waist.copy(),
        left_elbow=flip(sample.right_elbow),
        left_wrist=flip(sample.right_wrist),
        right_elbow=flip(sample.left_elbow),
        right_wrist=flip(sample.left_wrist),
        triggers=sample.triggers[::-1].copy(),
    )


def mirror_calibration(calib: CalibrationResult) -> CalibrationResult:
    """Operator geometry as seen through a mirror; robot geometry is unchanged."""
    def flip(p):
        return np.array([-p[0], p[1]])

    swap = {"left": "right", "right": "left"}
    return replace(
        calib,
        shoulders={arm: flip(calib.shoulders[swap[arm]]) for arm in ARMS},
        upper_length={arm: calib.upper_length[swap[arm]] for arm in ARMS},
        forearm_length={arm: calib.forearm_length[swap[arm]] for arm in ARMS},
        scales={arm: calib.scales[swap[arm]] for arm in ARMS},
    )


def retarget_pose(sample: TrackerSample, calib: CalibrationResult, mirror: bool = False) -> ArmTargets:
    """Map a tracker sample onto robot elbow and wrist targets.

    The upper-arm and forearm vectors are scaled separately and chained from
    the robot shoulder. With ``mirror`` the operator's right arm drives the
    robot's left arm and lateral coordinates are negated.
    """
    if mirror:
        return retarget_pose(mirror_sample(sample), mirror_calibration(calib), mirror=False)

    arms = {}
    for arm in ARMS:
        s1, s2 = calib.scales[arm]
        elbow_h = sample.elbow(arm) - sample.waist
        wrist_h = sample.wrist(arm) - sample.waist
        elbow = calib.robot_shoulders[arm] + s1 * (elbow_h - calib.shoulders[arm])
        wrist = elbow + s2 * (wrist_h - elbow_h)
        arms[arm] = ArmTarget(elbow=elbow, wrist=wrist, gripper=sample.trigger(arm))
    return ArmTargets(**arms)


def targets_to_sample(targets: ArmTargets, calib: CalibrationResult, waist: Sequence[float],
                      mirror: bool = False) -> TrackerSample:
    """Tracker sample that ``retarget_pose`` maps onto ``targets``."""
    waist = _vec(waist)
    if mirror:
        return mirror_sample(targets_to_sample(targets, mirror_calibration(calib), waist, mirror=False))

    points = {}
    for arm in ARMS:
        s1, s2 = calib.scales[arm]
        t = targets.arm(arm)
        elbow_h = calib.shoulders[arm] + (t.elbow - calib.robot_shoulders[arm]) / s1
        wrist_h = elbow_h + (t.wrist - t.elbow) / s2
        points[f"{arm}_elbow"] = waist + elbow_h
        points[f"{arm}_wrist"] = waist + wrist_h
    triggers = np.array([targets.left.gripper, targets.right.gripper])
    return TrackerSample(waist=waist, triggers=triggers, **points)


def lag_step(state: LagFilterState, target: ArmTargets, dt: float) -> LagFilterState:
    """Exact first-order lag update toward ``target`` over ``dt``."""
    if dt <= 0:
        raise InvalidConfig("dt must be positive")
    decay = math.exp(-dt / state.time_constant)
    current = state.targets.as_array()
    goal = target.as_array()
    return replace(state, targets=ArmTargets.from_array(goal + (current - goal) * decay))


def _cap(offset: np.ndarray, max_offset: float) -> np.ndarray:
    norm = float(np.linalg.norm(offset))
    if norm > max_offset > 0:
        return offset * (max_offset / norm)
    return offset


def admittance_offset(target: ArmTargets, touch: np.ndarray, surface_normals: np.ndarray,
                      cell_patches: Sequence[str], gain: float = 0.01,
                      max_offset: float = 0.02) -> ArmTargets:
    """Shift targets along contact normals in proportion to touch intensity.

    Forearm cells move the elbow target and wrist cells move the wrist target
    of their arm; chest cells do not move any target. Each shift is capped at
    ``max_offset`` with its direction kept.
    """
    if gain < 0:
        raise InvalidConfig("admittance gain must be non-negative")
    touch = np.asarray(touch, dtype=float)
    normals = np.asarray(surface_normals, dtype=float).reshape(-1, 2)
    patches = np.asarray(cell_patches)

    arms = {}
    for arm in ARMS:
        t = target.arm(arm)
        shifted = {}
        for point, patch in (("elbow", f"{arm}_forearm"), ("wrist", f"{arm}_wrist")):
            mask = patches == patch
            offset = gain * (touch[mask][:, None] * normals[mask]).sum(axis=0)
            shifted[point] = getattr(t, point) + _cap(offset, max_offset)
        arms[arm] = ArmTarget(elbow=shifted["elbow"], wrist=shifted["wrist"], gripper=t.gripper)
    return ArmTargets(**arms)
