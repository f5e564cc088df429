"""Robot-side control loop: tracker command to retarget, lag, admittance, IK and world step."""
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from src.control.ik import IkWeights, fk, ik_step
from src.control.lipm import DampingConfig, DcmFeedbackConfig, LipmParams
from src.control.retarget import (
    ARMS,
    ArmTarget,
    ArmTargets,
    CalibrationResult,
    LagFilterState,
    TrackerSample,
    admittance_offset,
    calibrate,
    lag_step,
    retarget_pose,
    synthesize_postures,
)
from src.sim.render import CameraImage, render
from src.sim.scene import SceneConfig, WorldState
from src.sim.tactile import TactileFrame, cell_geometry, tactile_read
from src.sim.world import SimContext, make_context, step


class RetargetConfig(BaseModel):
    """Operator geometry and the retargeting filters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mirror: bool = True
    lag_time_constant: float = 0.16
    admittance_enabled: bool = True
    admittance_gain: float = 0.01
    admittance_max_offset: float = 0.02
    operator_waist: Tuple[float, float] = (0.0, 1.0)
    operator_shoulder: Tuple[float, float] = (0.20, 1.40)
    operator_upper_arm: float = 0.28
    operator_forearm: float = 0.25
    robot_forearm: float = 0.30


class IkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    elbow_weight: float = 0.3
    wrist_weight: float = 1.0
    # Closed-loop opt-in: keeps the hand pointing down on the wrist joint's
    # otherwise free branch. Zero gives the plain elbow and wrist tracking.
    hand_weight: float = 0.1
    gain: float = 5.0
    damping: float = 1e-4

    def weights(self) -> IkWeights:
        return IkWeights(elbow=self.elbow_weight, wrist=self.wrist_weight, hand=self.hand_weight,
                         k_p=self.gain, damping=self.damping)


class BalanceConfig(BaseModel):
    """Torso pendulum and standing-balance gains."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    com_height: float = 0.9
    gravity: float = 9.81
    dt: float = 0.002
    n_preview: int = 300
    k_c: float = 1e-6
    k_xi: float = 2.0
    k_w: float = 5e-4
    support_half_width: float = 0.05

    def params(self) -> LipmParams:
        return LipmParams(com_height=self.com_height, gravity=self.gravity, dt=self.dt)


@dataclass(frozen=True)
class PipelineState:
    world: WorldState
    lag: LagFilterState
    tactile: TactileFrame


def operator_shoulders(cfg: RetargetConfig) -> Dict[str, np.ndarray]:
    x, z = cfg.operator_shoulder
    wx = cfg.operator_waist[0]
    return {"left": np.array([wx + x, z]), "right": np.array([wx - x, z])}


def operator_calibration(cfg: RetargetConfig, robot_shoulders: Dict[str, np.ndarray],
                         robot_upper_arm: float) -> CalibrationResult:
    """Calibrate against the synthetic operator's three reference postures."""
    postures = synthesize_postures(cfg.operator_waist, operator_shoulders(cfg),
                                   cfg.operator_upper_arm, cfg.operator_forearm)
    return calibrate(*postures, robot_shoulders=robot_shoulders,
                     robot_lengths=(robot_upper_arm, cfg.robot_forearm))


def action_to_sample(action: np.ndarray, waist: Tuple[float, float]) -> TrackerSample:
    """Tracker sample from a waist-relative action vector."""
    a = np.asarray(action, dtype=float)
    w = np.asarray(waist, dtype=float)
    return TrackerSample(waist=w, left_elbow=w + a[0:2], left_wrist=w + a[2:4],
                         right_elbow=w + a[5:7], right_wrist=w + a[7:9], triggers=a[[4, 9]])


def sample_to_action(sample: TrackerSample) -> np.ndarray:
    w = sample.waist
    return np.concatenate([sample.left_elbow - w, sample.left_wrist - w, [sample.triggers[0]],
                           sample.right_elbow - w, sample.right_wrist - w, [sample.triggers[1]]])


class ControlSystem:
    """Drives one world from operator-format commands at the control rate."""

    def __init__(self, ctx: SimContext, retarget: RetargetConfig, ik: IkConfig):
        self.ctx = ctx
        self.retarget = retarget
        self.ik_weights = ik.weights()
        scene = ctx.scene
        robot_shoulders = {arm: scene.shoulder(arm) for arm in ARMS}
        self.calibration = operator_calibration(retarget, robot_shoulders, scene.link_lengths[0])
        self._patches = ctx.layout.patches

    def start(self, world: WorldState) -> PipelineState:
        targets = {}
        for name, arm in zip(ARMS, world.arms):
            _, elbow, wrist = fk(arm)
            targets[name] = ArmTarget(elbow=elbow, wrist=wrist)
        lag = LagFilterState(ArmTargets(**targets), time_constant=self.retarget.lag_time_constant)
        return PipelineState(world=world, lag=lag, tactile=tactile_read(world, self.ctx.layout, self.ctx.scene))

    def command_targets(self, state: PipelineState, sample: TrackerSample) -> Tuple[LagFilterState, ArmTargets]:
        """Lag-filtered targets and the admittance-shifted IK targets for one tick."""
        goal = retarget_pose(sample, self.calibration, mirror=self.retarget.mirror)
        lag = lag_step(state.lag, goal, self.ctx.dt)
        targets = lag.targets
        if self.retarget.admittance_enabled:
            _, normals = cell_geometry(state.world, self.ctx.layout, self.ctx.scene)
            targets = admittance_offset(targets, state.tactile.touch, -normals, self._patches,
                                        gain=self.retarget.admittance_gain,
                                        max_offset=self.retarget.admittance_max_offset)
        return lag, targets

    def tick(self, state: PipelineState, sample: TrackerSample) -> PipelineState:
        lag, targets = self.command_targets(state, sample)
        q_dots = [ik_step(arm, targets.arm(name), self.ik_weights, self.ctx.dt)
                  for name, arm in zip(ARMS, state.world.arms)]
        world = step(self.ctx, state.world, q_dots)
        return PipelineState(world=world, lag=lag, tactile=tactile_read(world, self.ctx.layout, self.ctx.scene))

    def hold(self, state: PipelineState, sample: TrackerSample, ticks: int) -> PipelineState:
        """Apply one command for ``ticks`` control periods, stopping at a terminal status."""
        for _ in range(ticks):
            if state.world.status.terminal:
                break
            state = self.tick(state, sample)
        return state

    def observe(self, state: PipelineState) -> Tuple[np.ndarray, TactileFrame, CameraImage]:
        q = np.concatenate([arm.q for arm in state.world.arms])
        return q, state.tactile, render(state.world, self.ctx.scene)


def build_control_system(scene: SceneConfig, balance: BalanceConfig, retarget: RetargetConfig,
                         ik: IkConfig) -> ControlSystem:
    ctx = make_context(scene, balance.params(), n_preview=balance.n_preview, k_c=balance.k_c,
                       dcm_cfg=DcmFeedbackConfig(k_xi=balance.k_xi), damping_cfg=DampingConfig(k_w=balance.k_w),
                       support_half_width=balance.support_half_width)
    return ControlSystem(ctx, retarget, ik)
