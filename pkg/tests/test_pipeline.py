from dataclasses import replace

import numpy as np
import pytest

from src.control.ik import fk
from src.control.retarget import targets_to_sample
from src.sim.pipeline import (
    ControlSystem,
    IkConfig,
    RetargetConfig,
    action_to_sample,
    operator_shoulders,
    sample_to_action,
)
from src.sim.scene import TaskKind, TaskStatus
from src.sim.world import spawn

WAIST = (0.0, 1.0)


@pytest.fixture
def state(system):
    return system.start(spawn(system.ctx, TaskKind.HOLD_UP, "medium", 0.0, seed=0))


def hold_still_sample(system, state):
    return targets_to_sample(state.lag.targets, system.calibration, WAIST, mirror=system.retarget.mirror)


def test_operator_calibration(system):
    calib = system.calibration
    assert calib.residual <= 0.02
    for arm in ("left", "right"):
        assert calib.scales[arm] == pytest.approx((1.0, 1.2))
    shoulders = operator_shoulders(RetargetConfig())
    np.testing.assert_allclose(shoulders["left"], [0.2, 1.4])
    np.testing.assert_allclose(shoulders["right"], [-0.2, 1.4])


def test_action_sample_conversion():
    action = np.array([0.1, 0.2, 0.3, -0.1, 1.0, -0.1, 0.2, -0.3, -0.1, 0.0])
    sample = action_to_sample(action, WAIST)
    np.testing.assert_allclose(sample.left_wrist, [0.3, 0.9])
    assert sample.triggers.tolist() == [1.0, 0.0]
    np.testing.assert_allclose(sample_to_action(sample), action, atol=1e-15)


def test_start_targets_current_pose(system, state):
    for name, arm in zip(("left", "right"), state.world.arms):
        _, elbow, wrist = fk(arm)
        np.testing.assert_array_equal(state.lag.targets.arm(name).wrist, wrist)
        np.testing.assert_array_equal(state.lag.targets.arm(name).elbow, elbow)
    assert state.tactile.touch.shape == (40,)


def test_current_pose_command_keeps_targets(system, state):
    stiff = ControlSystem(system.ctx, RetargetConfig(admittance_enabled=False), IkConfig())
    lag, targets = stiff.command_targets(state, hold_still_sample(stiff, state))
    np.testing.assert_allclose(targets.as_array(), state.lag.targets.as_array(), atol=1e-12)
    np.testing.assert_allclose(lag.targets.as_array(), state.lag.targets.as_array(), atol=1e-12)


def test_hold_advances_time(system, state):
    after = system.hold(state, hold_still_sample(system, state), 10)
    assert after.world.tick == state.world.tick + 10
    assert after.world.time == pytest.approx(state.world.time + 10 * system.ctx.dt)


def test_hold_stops_at_terminal_status(system, state):
    done = replace(state, world=replace(state.world, status=TaskStatus.DROPPED))
    assert system.hold(done, hold_still_sample(system, state), 25).world.tick == state.world.tick


def test_ticks_are_deterministic(system, state):
    sample = action_to_sample(np.array([0.25, 0.2, 0.45, 0.25, 0.0, -0.25, 0.2, -0.45, 0.25, 0.0]), WAIST)
    a = system.hold(state, sample, 20)
    b = system.hold(state, sample, 20)
    for arm_a, arm_b in zip(a.world.arms, b.world.arms):
        assert np.array_equal(arm_a.q, arm_b.q)
    assert np.array_equal(a.tactile.flatten(), b.tactile.flatten())


def test_observe(system, state):
    q, frame, image = system.observe(state)
    assert q.shape == (6,)
    assert frame.flatten().shape == (80,)
    assert image.as_array().shape == (48, 64, 3)
