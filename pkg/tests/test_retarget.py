import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.control.retarget import (
    ArmTarget,
    ArmTargets,
    LagFilterState,
    TrackerSample,
    admittance_offset,
    calibrate,
    lag_step,
    mirror_sample,
    retarget_pose,
    synthesize_postures,
    targets_to_sample,
)
from src.utils.errors import CalibrationResidualTooLarge, DegenerateCalibration, InvalidConfig

WAIST = (0.0, 1.0)
SHOULDERS = {"left": (0.20, 1.40), "right": (-0.20, 1.40)}
ROBOT_SHOULDERS = {"left": (0.20, 0.40), "right": (-0.20, 0.40)}


def identity_calibration():
    return calibrate(*synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25), robot_shoulders=ROBOT_SHOULDERS,
                     robot_lengths=(0.28, 0.25))


def sample(**points):
    base = dict(waist=WAIST, left_elbow=(0.45, 1.2), left_wrist=(0.5, 0.95), right_elbow=(-0.45, 1.2),
                right_wrist=(-0.5, 0.95), triggers=(0.2, 0.7))
    base.update(points)
    return TrackerSample(**base)


coords = st.floats(-0.6, 0.6, allow_nan=False)
samples = st.builds(
    lambda *v: TrackerSample(waist=(v[0], 1.0), left_elbow=v[1:3], left_wrist=v[3:5], right_elbow=v[5:7],
                             right_wrist=v[7:9], triggers=v[9:11]),
    *([coords] * 9), st.floats(0, 1), st.floats(0, 1),
)


def assert_targets_close(a: ArmTargets, b: ArmTargets, tol=1e-12):
    np.testing.assert_allclose(a.as_array(), b.as_array(), atol=tol)


def test_calibration_recovers_geometry():
    calib = calibrate(*synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25))
    np.testing.assert_allclose(calib.shoulders["left"], [0.20, 0.40], atol=1e-9)
    np.testing.assert_allclose(calib.shoulders["right"], [-0.20, 0.40], atol=1e-9)
    for arm in ("left", "right"):
        assert calib.upper_length[arm] == pytest.approx(0.28, abs=1e-9)
        assert calib.forearm_length[arm] == pytest.approx(0.25, abs=1e-9)
        assert calib.scales[arm] == pytest.approx((1.0, 0.30 / 0.25))
    assert calib.residual < 1e-9


def test_identity_scaling():
    calib = identity_calibration()
    assert calib.scales["left"] == pytest.approx((1.0, 1.0))
    assert calib.scales["right"] == pytest.approx((1.0, 1.0))


@given(sx=st.floats(0.1, 0.3), sy=st.floats(1.2, 1.6), upper=st.floats(0.2, 0.35), fore=st.floats(0.2, 0.3),
       wx=st.floats(-0.2, 0.2))
def test_calibration_is_exact_on_synthetic_operators(sx, sy, upper, fore, wx):
    shoulders = {"left": (wx + sx, sy), "right": (wx - sx, sy)}
    calib = calibrate(*synthesize_postures((wx, 1.0), shoulders, upper, fore))
    assert calib.residual < 1e-9
    np.testing.assert_allclose(calib.shoulders["left"], [sx, sy - 1.0], atol=1e-9)
    assert calib.upper_length["right"] == pytest.approx(upper, abs=1e-9)
    assert calib.forearm_length["left"] == pytest.approx(fore, abs=1e-9)


def test_identical_postures_are_degenerate():
    forward = synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25)[0]
    with pytest.raises(DegenerateCalibration):
        calibrate(forward, forward, forward)


def test_bent_arm_is_rejected():
    forward, sideways, upward = synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25)
    bent = sample(waist=sideways.waist, left_elbow=sideways.left_elbow + np.array([0.0, 0.1]),
                  left_wrist=sideways.left_wrist, right_elbow=sideways.right_elbow,
                  right_wrist=sideways.right_wrist, triggers=(0, 0))
    with pytest.raises(CalibrationResidualTooLarge):
        calibrate(forward, bent, upward)


def test_identity_retarget_gives_waist_relative_positions():
    s = sample()
    targets = retarget_pose(s, identity_calibration())
    np.testing.assert_allclose(targets.left.elbow, s.left_elbow - s.waist, atol=1e-12)
    np.testing.assert_allclose(targets.right.wrist, s.right_wrist - s.waist, atol=1e-12)
    assert targets.left.gripper == pytest.approx(0.2)
    assert targets.right.gripper == pytest.approx(0.7)


def test_mirror_swaps_and_negates():
    s = sample(right_wrist=(0.3, 1.2))
    targets = retarget_pose(s, identity_calibration(), mirror=True)
    np.testing.assert_allclose(targets.left.wrist, [-0.3, 0.2], atol=1e-12)
    assert targets.left.gripper == pytest.approx(0.7)


def test_doubled_scales_double_shoulder_offsets():
    calib = calibrate(*synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25), robot_shoulders=ROBOT_SHOULDERS,
                      robot_lengths=(0.56, 0.50))
    s = sample()
    targets = retarget_pose(s, calib)
    shoulder = np.array(SHOULDERS["left"])
    np.testing.assert_allclose(targets.left.elbow - ROBOT_SHOULDERS["left"], 2 * (s.left_elbow - shoulder),
                               atol=1e-9)
    np.testing.assert_allclose(targets.left.wrist - ROBOT_SHOULDERS["left"], 2 * (s.left_wrist - shoulder),
                               atol=1e-9)


@given(samples)
def test_mirror_twice_is_identity(s):
    calib = calibrate(*synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25))
    twice = mirror_sample(mirror_sample(s))
    np.testing.assert_allclose(twice.left_wrist, s.left_wrist, atol=1e-12)
    np.testing.assert_allclose(twice.triggers, s.triggers)
    assert_targets_close(retarget_pose(mirror_sample(s), calib, mirror=True), retarget_pose(s, calib), 1e-9)


@pytest.mark.parametrize("mirror", [False, True])
def test_targets_to_sample_inverts_retargeting(mirror):
    calib = calibrate(*synthesize_postures(WAIST, SHOULDERS, 0.28, 0.25))
    targets = ArmTargets(left=ArmTarget(np.array([0.3, 0.1]), np.array([0.35, -0.15]), 0.4),
                         right=ArmTarget(np.array([-0.25, 0.05]), np.array([-0.3, -0.2]), 1.0))
    recovered = retarget_pose(targets_to_sample(targets, calib, WAIST, mirror), calib, mirror)
    assert_targets_close(recovered, targets, 1e-9)


def test_tracker_sample_validation():
    with pytest.raises(InvalidConfig):
        sample(left_wrist=(float("nan"), 1.0))
    np.testing.assert_allclose(sample(triggers=(-1.0, 2.0)).triggers, [0.0, 1.0])


def _targets(value: float) -> ArmTargets:
    return ArmTargets.from_array(np.full(10, value))


def test_lag_fixed_point():
    state = LagFilterState(_targets(0.3))
    assert_targets_close(lag_step(state, _targets(0.3), 0.002).targets, _targets(0.3))


def test_lag_one_time_constant():
    state = lag_step(LagFilterState(_targets(0.0), 0.16), _targets(1.0), 0.16)
    np.testing.assert_allclose(state.targets.as_array(), 1 - math.exp(-1), atol=1e-12)
    assert state.targets.left.elbow[0] == pytest.approx(0.632121, abs=1e-6)


def test_lag_step_response_at_500_hz():
    state = LagFilterState(_targets(0.0), 0.16)
    for _ in range(80):
        state = lag_step(state, _targets(1.0), 0.002)
    assert state.targets.right.wrist[1] == pytest.approx(0.632, abs=0.005)


@given(x=st.floats(-1, 1), goal=st.floats(-1, 1), dt=st.floats(1e-4, 0.5))
def test_lag_is_a_contraction(x, goal, dt):
    state = lag_step(LagFilterState(_targets(x), 0.16), _targets(goal), dt)
    expected = math.exp(-dt / 0.16) * abs(x - goal)
    assert abs(state.targets.as_array()[0] - goal) == pytest.approx(expected, abs=1e-12)


def test_lag_rejects_bad_inputs():
    with pytest.raises(InvalidConfig):
        LagFilterState(_targets(0.0), 0.0)
    with pytest.raises(InvalidConfig):
        lag_step(LagFilterState(_targets(0.0)), _targets(1.0), 0.0)


PATCHES = ["chest", "left_forearm", "left_wrist", "right_forearm", "right_wrist"]
NORMALS = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])


def test_admittance_zero_touch():
    target = _targets(0.1)
    assert_targets_close(admittance_offset(target, np.zeros(5), NORMALS, PATCHES), target)


def test_admittance_single_wrist_cell():
    target = _targets(0.1)
    shifted = admittance_offset(target, np.array([0.0, 0.0, 0.5, 0.0, 0.0]), NORMALS, PATCHES, gain=0.01)
    np.testing.assert_allclose(shifted.left.wrist - target.left.wrist, [-0.005, 0.0], atol=1e-15)
    np.testing.assert_allclose(shifted.left.elbow, target.left.elbow)
    np.testing.assert_allclose(shifted.right.wrist, target.right.wrist)


def test_admittance_saturates():
    target = _targets(0.0)
    patches = ["left_forearm"] * 5
    normals = np.tile([0.6, 0.8], (5, 1))
    shifted = admittance_offset(target, np.ones(5), normals, patches, gain=0.01, max_offset=0.02)
    offset = shifted.left.elbow - target.left.elbow
    assert np.linalg.norm(offset) == pytest.approx(0.02)
    np.testing.assert_allclose(offset / np.linalg.norm(offset), [0.6, 0.8])


@given(a=st.lists(st.floats(0, 0.3), min_size=5, max_size=5), b=st.lists(st.floats(0, 0.3), min_size=5, max_size=5))
def test_admittance_is_additive_below_cap(a, b):
    target = _targets(0.0)
    a, b = np.array(a), np.array(b)
    both = admittance_offset(target, a + b, NORMALS, PATCHES, max_offset=1.0).as_array()
    first = admittance_offset(target, a, NORMALS, PATCHES, max_offset=1.0).as_array()
    second = admittance_offset(target, b, NORMALS, PATCHES, max_offset=1.0).as_array()
    np.testing.assert_allclose(both, first + second, atol=1e-15)


def test_admittance_rejects_negative_gain():
    with pytest.raises(InvalidConfig):
        admittance_offset(_targets(0.0), np.zeros(5), NORMALS, PATCHES, gain=-1.0)
