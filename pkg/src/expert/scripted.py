"""Scripted demonstrators for the hold-up and reorientation tasks.

Each expert is a phase machine that runs at the policy rate. It plans hand
tip waypoints in the world frame from the privileged box state, derives
elbow-out elbow targets, and emits them as operator tracker commands so the
robot receives them through the same calibration, mirroring and lag as a
human demonstration.
"""
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.control.retarget import ArmTarget, ArmTargets, targets_to_sample
from src.sim.pipeline import ControlSystem, sample_to_action
from src.sim.scene import TaskKind, WorldState, arm_chains, waist_position
from src.sim.status import box_at_rest
from src.sim.tactile import TactileFrame

SIDES = (1.0, -1.0)


class ExpertConfig(BaseModel):
    """Waypoints, timings and force regulation of the scripted experts (SI units)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    jitter: float = 0.005
    approach_time: float = 1.5
    approach_clearance: float = 0.03
    approach_tolerance: float = 0.01
    phase_timeout: float = 4.0
    max_retries: int = 10
    holdup_position_range: float = 0.03

    # Hold-up
    grip_height: float = 0.03
    enclose_time: float = 1.0
    squeeze_start: float = 0.001
    squeeze_step: float = 0.001
    squeeze_max: float = 0.015
    force_band: Tuple[float, float] = (4.5, 7.5)
    force_window: Tuple[float, float] = (3.0, 9.0)
    stable_ticks: int = 5
    lift_height: float = 0.13
    lift_speed: float = 0.05

    # Reorientation
    push_height: float = 0.10
    push_clearance: float = 0.02
    tilt_speed: float = 0.03
    tilt_angle_deg: float = 40.0
    contact_touch: float = 0.05
    max_push: float = 0.12
    guard_tip: Tuple[float, float] = (-0.30, 1.00)
    settle_time: float = 3.0
    retreat: float = 0.05
    retreat_time: float = 1.5


class ExpertPhase(str, Enum):
    APPROACH = "Approach"
    ENCLOSE = "Enclose"
    SQUEEZE = "Squeeze"
    LIFT = "Lift"
    HOLD = "Hold"
    CONTACT_TOP = "ContactTop"
    TILT = "Tilt"
    SETTLE = "Settle"
    RETREAT = "Retreat"


@dataclass(frozen=True)
class ExpertState:
    """Phase bookkeeping; tip arrays are (2, 2) world positions, left arm first.

    ``rng`` is shared between successive states of one episode.
    """

    phase: ExpertPhase
    entered_at: float
    start: np.ndarray
    tips: np.ndarray
    home: np.ndarray
    center: float
    rng: np.random.Generator
    jitter: np.ndarray
    squeeze: np.ndarray
    stable: int = 0
    push_origin: float = 0.0


def _smoothstep(s: float) -> float:
    s = min(max(s, 0.0), 1.0)
    return s * s * (3.0 - 2.0 * s)


def elbow_out(tip: np.ndarray, shoulder: np.ndarray, lateral_sign: float,
              link_lengths: Tuple[float, float, float]) -> np.ndarray:
    """Elbow position placing the hand tip at ``tip`` with the hand pointing down.

    The elbow takes the outward branch of the two-link solution; targets out
    of reach are clamped onto the reachable annulus.
    """
    l1, l2, l3 = link_lengths
    wrist = np.asarray(tip, dtype=float) + np.array([0.0, l3])
    v = wrist - shoulder
    local = np.array([lateral_sign * v[0], v[1]])
    d = float(np.clip(np.linalg.norm(local), abs(l1 - l2) + 1e-6, l1 + l2 - 1e-6))
    phi = math.atan2(local[1], local[0])
    alpha = math.acos(np.clip((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d), -1.0, 1.0))
    theta = phi + alpha
    return shoulder + np.array([lateral_sign * l1 * math.cos(theta), l1 * math.sin(theta)])


def regulate_squeeze(squeeze: np.ndarray, forces: Tuple[float, float], band: Tuple[float, float],
                     step: float, limit: float) -> np.ndarray:
    """Deepen or relax each arm's inward offset to bring its contact force into ``band``."""
    out = np.array(squeeze, dtype=float)
    for arm, force in enumerate(forces):
        if force < band[0]:
            out[arm] = min(out[arm] + step, limit)
        elif force > band[1]:
            out[arm] = max(out[arm] - step, 0.0)
    return out


class ScriptedExpert:
    """Phase-machine demonstrator bound to one control system."""

    def __init__(self, cfg: ExpertConfig, system: ControlSystem):
        self.cfg = cfg
        self.system = system
        self.scene = system.ctx.scene
        self._left_cells = system.ctx.layout.side_mask(0)

    def start(self, world: WorldState, seed: int) -> ExpertState:
        tips = arm_chains(world, self.scene)[:, 3].copy()
        rng = np.random.default_rng(seed)
        return ExpertState(
            phase=ExpertPhase.APPROACH,
            entered_at=world.time,
            start=tips.copy(),
            tips=tips,
            home=tips.copy(),
            center=world.box.x,
            rng=rng,
            jitter=rng.normal(0.0, self.cfg.jitter, size=(2, 2)) if self.cfg.jitter > 0 else np.zeros((2, 2)),
            squeeze=np.zeros(2),
        )

    def expert_action(self, world: WorldState, tactile: TactileFrame,
                      state: ExpertState) -> Tuple[np.ndarray, ExpertState]:
        """Action vector for the next policy period and the advanced phase state."""
        if world.task is TaskKind.HOLD_UP:
            tips, grip, state = self._hold_up(world, state)
        else:
            tips, grip, state = self._reorient(world, tactile, state)
        state = replace(state, tips=tips)
        return self._to_action(world, tips, grip), state

    def _enter(self, world: WorldState, state: ExpertState, phase: ExpertPhase, **changes) -> ExpertState:
        return replace(state, phase=phase, entered_at=world.time, start=state.tips.copy(), stable=0, **changes)

    def _elapsed(self, world: WorldState, state: ExpertState) -> float:
        return world.time - state.entered_at

    def _interpolate(self, world: WorldState, state: ExpertState, goal: np.ndarray, duration: float) -> np.ndarray:
        s = _smoothstep(self._elapsed(world, state) / duration)
        return state.start + s * (goal - state.start)

    def _tip_error(self, world: WorldState, goal: np.ndarray) -> float:
        actual = arm_chains(world, self.scene)[:, 3]
        return float(np.max(np.linalg.norm(actual - goal, axis=1)))

    def _contact_x(self, world: WorldState, state: ExpertState, arm: int, depth: float = 0.0) -> float:
        half = 0.5 * world.box.width + self.scene.capsule_radius
        return state.center + SIDES[arm] * (half - depth)

    def _hold_up(self, world: WorldState, state: ExpertState):
        cfg = self.cfg
        elapsed = self._elapsed(world, state)
        z0 = self.scene.table_top + cfg.grip_height

        if state.phase is ExpertPhase.APPROACH:
            goal = np.array([[self._contact_x(world, state, arm, -cfg.approach_clearance), z0]
                             for arm in range(2)]) + state.jitter
            tips = self._interpolate(world, state, goal, cfg.approach_time)
            arrived = elapsed >= cfg.approach_time and self._tip_error(world, goal) < cfg.approach_tolerance
            if arrived or elapsed >= cfg.phase_timeout:
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.ENCLOSE)
            return tips, 0.0, state

        if state.phase is ExpertPhase.ENCLOSE:
            goal = state.start.copy()
            goal[:, 0] = [self._contact_x(world, state, arm) for arm in range(2)]
            tips = self._interpolate(world, state, goal, cfg.enclose_time)
            if elapsed >= cfg.enclose_time:
                squeeze = np.full(2, cfg.squeeze_start)
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.SQUEEZE, squeeze=squeeze)
            return tips, 0.0, state

        if state.phase is ExpertPhase.SQUEEZE:
            lo, hi = cfg.force_band
            in_band = all(lo <= f <= hi for f in world.arm_forces)
            squeeze = regulate_squeeze(state.squeeze, world.arm_forces, cfg.force_band,
                                       cfg.squeeze_step, cfg.squeeze_max)
            state = replace(state, squeeze=squeeze, stable=state.stable + 1 if in_band else 0)
            tips = state.start.copy()
            tips[:, 0] = [self._contact_x(world, state, arm, squeeze[arm]) for arm in range(2)]
            if state.stable >= cfg.stable_ticks or elapsed >= cfg.phase_timeout:
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.LIFT)
            return tips, 1.0, state

        squeeze = regulate_squeeze(state.squeeze, world.arm_forces, cfg.force_window,
                                   cfg.squeeze_step, cfg.squeeze_max)
        state = replace(state, squeeze=squeeze)
        tips = state.start.copy()
        tips[:, 0] = [self._contact_x(world, state, arm, squeeze[arm]) for arm in range(2)]

        if state.phase is ExpertPhase.LIFT:
            duration = cfg.lift_height / cfg.lift_speed
            tips[:, 1] += cfg.lift_height * min(elapsed / duration, 1.0)
            if elapsed >= duration:
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.HOLD)
            return tips, 1.0, state

        # Hold: targets move only when a contact force leaves the window.
        return tips, 1.0, state

    def _left_touch(self, tactile: TactileFrame) -> float:
        return float(np.max(tactile.touch[self._left_cells]))

    def _reorient(self, world: WorldState, tactile: TactileFrame, state: ExpertState):
        cfg = self.cfg
        elapsed = self._elapsed(world, state)
        guard = np.array(cfg.guard_tip)

        if state.phase is ExpertPhase.APPROACH:
            left = [self._contact_x(world, state, 0, -cfg.push_clearance), self.scene.table_top + cfg.push_height]
            goal = np.array([left, guard]) + state.jitter
            tips = self._interpolate(world, state, goal, cfg.approach_time)
            arrived = elapsed >= cfg.approach_time and self._tip_error(world, goal) < cfg.approach_tolerance
            if arrived or elapsed >= cfg.phase_timeout:
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.CONTACT_TOP,
                                    push_origin=float(tips[0, 0]))
            return tips, 0.0, state

        if state.phase in (ExpertPhase.CONTACT_TOP, ExpertPhase.TILT):
            tips = state.start.copy()
            tips[0, 0] -= cfg.tilt_speed * elapsed
            travel = state.push_origin - tips[0, 0]
            if state.phase is ExpertPhase.CONTACT_TOP:
                if self._left_touch(tactile) > cfg.contact_touch:
                    state = self._enter(world, replace(state, tips=tips), ExpertPhase.TILT)
                elif travel >= cfg.max_push:
                    state = self._enter(world, replace(state, tips=tips), ExpertPhase.SETTLE)
            elif math.degrees(world.box.theta) >= cfg.tilt_angle_deg or travel >= cfg.max_push:
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.SETTLE)
            return tips, 0.0, state

        if state.phase is ExpertPhase.SETTLE:
            goal = state.start.copy()
            goal[0] += cfg.retreat
            tips = self._interpolate(world, state, goal, 0.5)
            if (elapsed >= 0.5 and box_at_rest(world)) or elapsed >= cfg.settle_time:
                state = self._enter(world, replace(state, tips=tips), ExpertPhase.RETREAT)
            return tips, 0.0, state

        goal = np.array([state.home[0], guard])
        return self._interpolate(world, state, goal, cfg.retreat_time), 0.0, state

    def _to_action(self, world: WorldState, tips: np.ndarray, grip: float) -> np.ndarray:
        waist = waist_position(world, self.scene)
        targets = {}
        for arm, (name, model) in enumerate(zip(("left", "right"), world.arms)):
            shoulder = waist + model.shoulder
            elbow = elbow_out(tips[arm], shoulder, model.lateral_sign, model.link_lengths)
            targets[name] = ArmTarget(elbow=elbow - waist, wrist=tips[arm] - waist, gripper=grip)
        retarget = self.system.retarget
        sample = targets_to_sample(ArmTargets(**targets), self.system.calibration, retarget.operator_waist,
                                   mirror=retarget.mirror)
        return sample_to_action(sample)


def holdup_positions(seed: int, count: int, cfg: Optional[ExpertConfig] = None) -> np.ndarray:
    """Seeded hold-up spawn offsets within the expert's position range."""
    cfg = cfg or ExpertConfig()
    rng = np.random.default_rng(seed)
    return rng.uniform(-cfg.holdup_position_range, cfg.holdup_position_range, size=count)
