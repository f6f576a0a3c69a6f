"""Operator pose streams -> robot joint commands.

Head and wrist poses are mapped as calibration-relative deltas: the delta is
taken in the operator origin's local frame and re-applied in the matching
robot frame (neck camera / end effector), so shifting the whole operator rig
never changes the commands.  Incoming poses are smoothed, translation deltas
are clamped to a safety envelope, and IK failures hold the last valid
configuration rather than emitting garbage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (
    IkParams,
    Pose,
    clamp_to_limits,
    quat_mul,
    quat_slerp,
    solve_ik,
)
from .simworld import SimContext

__all__ = [
    "RetargetParams",
    "PoseFilter",
    "RetargetState",
    "CalibrationError",
    "calibrate",
    "head_to_neck",
    "wrist_to_arm",
    "pinch_to_grip",
]


class CalibrationError(ValueError):
    """Raised when calibrating from an out-of-limit joint configuration."""


@dataclass(frozen=True)
class RetargetParams:
    alpha: float = 0.6              # smoothing factor at the 60 Hz tick
    neck_clamp: float = 0.25        # m, per-axis translation delta limit
    arm_clamp: float = 0.5
    pinch_min: float = 0.01         # m, fully closed thumb-index distance
    pinch_max: float = 0.09         # m, fully open
    neck_ik: IkParams = field(default_factory=lambda: IkParams(max_iters=30))
    arm_ik: IkParams = field(default_factory=lambda: IkParams(max_iters=30))

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.pinch_max <= self.pinch_min:
            raise ValueError("pinch_max must exceed pinch_min")


class PoseFilter:
    """EMA position + incremental slerp orientation smoothing."""

    def __init__(self, alpha: float):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.smoothed: Pose | None = None

    def reset(self) -> None:
        self.smoothed = None

    def smooth(self, raw: Pose, dt: float | None = None) -> Pose:
        if self.smoothed is None or self.alpha >= 1.0:
            self.smoothed = raw
            return raw
        a = self.alpha
        prev = self.smoothed
        pos = a * raw.position + (1.0 - a) * prev.position
        quat = quat_slerp(prev.orientation, raw.orientation, a)
        out = Pose(pos, quat)
        self.smoothed = out
        return out


@dataclass
class RetargetState:
    """Calibration origins plus per-limb filter and hold state (single-writer)."""

    head_origin: Pose
    neck_cam_origin: Pose
    wrist_origin: Pose
    ee_origin: Pose
    last_valid_neck_q: np.ndarray
    last_valid_arm_q: np.ndarray
    head_filter: PoseFilter
    wrist_filter: PoseFilter
    prev_neck_err: float = math.inf
    prev_arm_err: float = math.inf


def calibrate(ctx: SimContext, head_pose: Pose, wrist_pose: Pose,
              neck_q, arm_q, params: RetargetParams | None = None) -> RetargetState:
    """Freeze origins: all subsequent targets are deltas from these poses."""
    params = params or RetargetParams()
    neck_q = np.asarray(neck_q, dtype=float)
    arm_q = np.asarray(arm_q, dtype=float)
    if not np.array_equal(clamp_to_limits(ctx.neck_chain, neck_q), neck_q):
        raise CalibrationError("neck configuration outside joint limits")
    if not np.array_equal(clamp_to_limits(ctx.arm_chain, arm_q), arm_q):
        raise CalibrationError("arm configuration outside joint limits")
    return RetargetState(
        head_origin=head_pose,
        neck_cam_origin=ctx.neck_camera_pose(neck_q),
        wrist_origin=wrist_pose,
        ee_origin=ctx.arm_tool_pose(arm_q),
        last_valid_neck_q=neck_q.copy(),
        last_valid_arm_q=arm_q.copy(),
        head_filter=PoseFilter(params.alpha),
        wrist_filter=PoseFilter(params.alpha),
    )


def _weighted_tol(ik: IkParams) -> float:
    w = ik.weights
    wp = (w[0] + w[1] + w[2]) / 3.0
    wo = (w[3] + w[4] + w[5]) / 3.0
    return math.sqrt(wp * ik.pos_tol ** 2 + wo * ik.ori_tol ** 2)


def _delta_target(origin: Pose, robot_origin: Pose, smoothed: Pose, clamp: float) -> Pose:
    """Delta in the operator-origin frame, re-applied as a world-frame delta.

    Using only origin^-1 * live makes the mapping invariant to moving the
    whole operator rig; applying it in world axes keeps "head moved +x"
    meaning "camera moves +x" regardless of camera mount orientation.
    """
    delta = origin.inverse().compose(smoothed)
    clamped = np.clip(delta.position, -clamp, clamp)
    return Pose(robot_origin.position + clamped,
                quat_mul(delta.orientation, robot_origin.orientation))


def head_to_neck(state: RetargetState, head_pose: Pose, dt: float,
                 ctx: SimContext, params: RetargetParams | None = None):
    """Returns (neck_q_target, tracking_ok)."""
    params = params or RetargetParams()
    smoothed = state.head_filter.smooth(head_pose, dt)
    target = _delta_target(state.head_origin, state.neck_cam_origin, smoothed,
                           params.neck_clamp)
    local = ctx.neck_mount.inverse().compose(target)
    res = solve_ik(ctx.neck_chain, state.last_valid_neck_q, local, params.neck_ik)
    werr = res.weighted_err(params.neck_ik)
    hold = werr > 2.0 * _weighted_tol(params.neck_ik) and werr > state.prev_neck_err
    state.prev_neck_err = werr
    if hold:
        return state.last_valid_neck_q.copy(), False
    state.last_valid_neck_q = res.q.copy()
    return res.q, True


def wrist_to_arm(state: RetargetState, wrist_pose: Pose, dt: float,
                 ctx: SimContext, params: RetargetParams | None = None):
    """Returns (arm_q_target, tracking_ok); same contract as head_to_neck."""
    params = params or RetargetParams()
    smoothed = state.wrist_filter.smooth(wrist_pose, dt)
    target = _delta_target(state.wrist_origin, state.ee_origin, smoothed,
                           params.arm_clamp)
    local = ctx.arm_mount.inverse().compose(target)
    res = solve_ik(ctx.arm_chain, state.last_valid_arm_q, local, params.arm_ik)
    werr = res.weighted_err(params.arm_ik)
    hold = werr > 2.0 * _weighted_tol(params.arm_ik) and werr > state.prev_arm_err
    state.prev_arm_err = werr
    if hold:
        return state.last_valid_arm_q.copy(), False
    state.last_valid_arm_q = res.q.copy()
    return res.q, True


def pinch_to_grip(thumb_tip, index_tip, d_min: float = 0.01, d_max: float = 0.09) -> float:
    """Thumb-index distance -> gripper aperture in [0, 1]."""
    thumb = np.asarray(thumb_tip, dtype=float)
    index = np.asarray(index_tip, dtype=float)
    d = float(np.linalg.norm(thumb - index))
    return min(1.0, max(0.0, (d - d_min) / (d_max - d_min)))
