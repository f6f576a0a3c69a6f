import math

import numpy as np
import pytest

from neckbench.kinematics import Pose, quat_from_axis_angle, quat_rotate, quat_to_matrix
from neckbench.retarget import (
    CalibrationError,
    PoseFilter,
    RetargetParams,
    calibrate,
    head_to_neck,
    pinch_to_grip,
    wrist_to_arm,
)
from neckbench.simworld import SimContext

CTX = SimContext()


def identity_calibration(params=None):
    return calibrate(CTX, Pose(), Pose(), CTX.home_neck_q, CTX.home_arm_q, params)


def neck_yaw_of(q):
    fwd = CTX.neck_camera_pose(q).rotate([0.0, 0.0, 1.0])  # optical axis in world
    return math.atan2(fwd[1], fwd[0])


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def test_calibrate_stores_fk_origins():
    state = identity_calibration()
    expected = CTX.arm_tool_pose(CTX.home_arm_q)
    assert np.array_equal(state.ee_origin.position, expected.position)
    expected_cam = CTX.neck_camera_pose(CTX.home_neck_q)
    assert np.array_equal(state.neck_cam_origin.position, expected_cam.position)


def test_calibrate_rejects_out_of_limit():
    bad = CTX.home_neck_q.copy()
    bad[0] = 99.0
    with pytest.raises(CalibrationError):
        calibrate(CTX, Pose(), Pose(), bad, CTX.home_arm_q)


def test_zero_delta_returns_calibration_config():
    state = identity_calibration()
    q, ok = head_to_neck(state, Pose(), 1 / 60, CTX)
    assert ok
    assert np.max(np.abs(q - CTX.home_neck_q)) < 1e-6
    qa, ok = wrist_to_arm(state, Pose(), 1 / 60, CTX)
    assert ok
    assert np.max(np.abs(qa - CTX.home_arm_q)) < 1e-6


# ---------------------------------------------------------------------------
# head -> neck
# ---------------------------------------------------------------------------

def test_pure_translation_delta_maps_to_camera_translation():
    params = RetargetParams(alpha=1.0)
    state = identity_calibration(params)
    moved = Pose(np.array([0.05, 0.0, 0.0]))
    q, ok = head_to_neck(state, moved, 1 / 60, CTX, params)
    assert ok
    cam = CTX.neck_camera_pose(q)
    want = state.neck_cam_origin.position + np.array([0.05, 0.0, 0.0])
    assert np.linalg.norm(cam.position - want) < 2e-3


def test_head_yaw_30_degrees_tracks_within_ik_tolerance():
    params = RetargetParams(alpha=1.0)
    state = identity_calibration(params)
    yaw = math.radians(30.0)
    q, ok = head_to_neck(state, Pose(np.zeros(3), quat_from_axis_angle((0, 0, 1), yaw)),
                         1 / 60, CTX, params)
    base_yaw = neck_yaw_of(CTX.home_neck_q)
    got = neck_yaw_of(q) - base_yaw
    # 5-DOF neck trades a little yaw against position residual; stays within
    # the weighted-IK orientation tolerance band
    assert abs(got - yaw) < 0.015


def test_absurd_translation_clamped_and_limits_respected():
    params = RetargetParams(alpha=1.0)
    state = identity_calibration(params)
    q, _ = head_to_neck(state, Pose(np.array([5.0, 0.0, 0.0])), 1 / 60, CTX, params)
    from neckbench.kinematics import clamp_to_limits
    assert np.array_equal(clamp_to_limits(CTX.neck_chain, q), q)
    # the effective target was clamped to 0.25 m: camera cannot be asked beyond it
    cam = CTX.neck_camera_pose(q)
    assert cam.position[0] - state.neck_cam_origin.position[0] < 0.25 + 1e-6


def test_delta_equivariance_under_rig_transforms():
    rng = np.random.default_rng(11)
    for _ in range(50):
        params = RetargetParams(alpha=1.0)
        head = Pose(rng.uniform(-0.1, 0.1, 3),
                    quat_from_axis_angle(rng.normal(size=3), rng.uniform(-0.4, 0.4)))
        rig = Pose(rng.uniform(-2, 2, 3),
                   quat_from_axis_angle(rng.normal(size=3), rng.uniform(-3, 3)))
        state_a = calibrate(CTX, Pose(), Pose(), CTX.home_neck_q, CTX.home_arm_q, params)
        q_a, _ = head_to_neck(state_a, head, 1 / 60, CTX, params)
        state_b = calibrate(CTX, rig, Pose(), CTX.home_neck_q, CTX.home_arm_q, params)
        q_b, _ = head_to_neck(state_b, rig.compose(head), 1 / 60, CTX, params)
        # rig composition perturbs the target at float-epsilon level only;
        # results agree to well inside IK tolerance
        assert np.allclose(q_a, q_b, atol=1e-9)
        cam_a = CTX.neck_camera_pose(q_a)
        cam_b = CTX.neck_camera_pose(q_b)
        assert np.linalg.norm(cam_a.position - cam_b.position) < 1e-6


def test_wrist_translation_moves_ee():
    params = RetargetParams(alpha=1.0)
    state = identity_calibration(params)
    q, ok = wrist_to_arm(state, Pose(np.array([0.1, 0.0, 0.0])), 1 / 60, CTX, params)
    assert ok
    tool = CTX.arm_tool_pose(q)
    want = state.ee_origin.position + np.array([0.1, 0.0, 0.0])
    assert np.linalg.norm(tool.position - want) < 2e-3


def test_unreachable_wrist_holds_last_valid():
    params = RetargetParams(alpha=1.0)
    state = identity_calibration(params)
    q1, ok1 = wrist_to_arm(state, Pose(np.array([0.05, 0.0, 0.0])), 1 / 60, CTX, params)
    assert ok1
    # way outside the workspace (clamp still allows 0.5 m per axis)
    q2, ok2 = wrist_to_arm(state, Pose(np.array([0.5, -0.5, 0.5])), 1 / 60, CTX, params)
    assert not ok2
    assert np.array_equal(q2, q1)


def test_command_stream_deterministic():
    def run():
        params = RetargetParams()
        state = identity_calibration(params)
        out = []
        for i in range(40):
            head = Pose(np.array([0.002 * i, 0.001 * i, 0.0]),
                        quat_from_axis_angle((0, 0, 1), 0.01 * i))
            q, _ = head_to_neck(state, head, 1 / 60, CTX, params)
            out.append(q.tobytes())
        return out

    assert run() == run()


# ---------------------------------------------------------------------------
# smoothing
# ---------------------------------------------------------------------------

def test_smooth_alpha_one_passthrough():
    f = PoseFilter(1.0)
    raw = Pose(np.array([1.0, 2.0, 3.0]), quat_from_axis_angle((0, 1, 0), 0.7))
    out = f.smooth(raw)
    assert np.array_equal(out.position, raw.position)
    assert np.array_equal(out.orientation, raw.orientation)


def test_smooth_converges_geometric_series():
    # after n steps at alpha, remaining error is (1-alpha)^n of the step size
    alpha = 0.6
    f = PoseFilter(alpha)
    f.smooth(Pose())  # initialize at origin
    target = Pose(np.array([1.0, 0.0, 0.0]))
    out = None
    for _ in range(20):
        out = f.smooth(target)
    expected_residual = (1 - alpha) ** 20
    assert expected_residual < 1e-7
    assert abs(out.position[0] - 1.0) <= expected_residual * 1.000001


def test_smooth_attenuates_alternation():
    f = PoseFilter(0.6)
    eps = 0.01
    f.smooth(Pose())
    amp = 0.0
    for i in range(50):
        sign = 1.0 if i % 2 == 0 else -1.0
        out = f.smooth(Pose(np.array([sign * eps, 0.0, 0.0])))
        if i > 10:
            amp = max(amp, abs(out.position[0]))
    assert amp < eps


def test_smooth_orientation_slerp_step():
    f = PoseFilter(0.5)
    f.smooth(Pose())
    out = f.smooth(Pose(np.zeros(3), quat_from_axis_angle((0, 0, 1), 1.0)))
    # half-way rotation about z
    z = quat_rotate(out.orientation, [1.0, 0.0, 0.0])
    assert math.isclose(math.atan2(z[1], z[0]), 0.5, rel_tol=1e-9)


# ---------------------------------------------------------------------------
# pinch
# ---------------------------------------------------------------------------

def test_pinch_endpoints_and_midpoint():
    thumb = np.zeros(3)
    assert pinch_to_grip(thumb, np.array([0.01, 0.0, 0.0])) == 0.0
    assert pinch_to_grip(thumb, np.array([0.09, 0.0, 0.0])) == 1.0
    assert math.isclose(pinch_to_grip(thumb, np.array([0.05, 0.0, 0.0])), 0.5, rel_tol=1e-12)
    assert pinch_to_grip(thumb, np.array([0.005, 0.0, 0.0])) == 0.0
    assert pinch_to_grip(thumb, np.array([0.5, 0.0, 0.0])) == 1.0
