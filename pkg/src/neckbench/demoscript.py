"""Scripted oracle demonstrator: waypoint phase machine with coordinated gaze.

Replaces the human teleoperator for desk-scale data generation.  Arm motion
runs through noised task waypoints; the neck is driven by look-at IK so the
phase-relevant object stays near the frustum center, including the duck-under
"peek" viewpoints the CfB and L2R scenes require.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import (
    IkParams,
    Pose,
    forward_kinematics,
    look_at_quat,
    solve_ik,
)
from .recorder import Episode, EpisodeBuilder, StepRecord
from .simworld import (
    GOAL_MARKER_ID,
    TARGET_ID,
    TICK_DT,
    Command,
    SimContext,
    WorldState,
    camera_features,
    make_task_scene,
    step,
    success,
)

__all__ = [
    "PHASES",
    "DemoParams",
    "DemoState",
    "ScriptedDemonstrator",
    "look_at_neck_q",
    "approach_orientation",
    "generate_episode",
]

PHASES = (
    "LookAtTarget",
    "Approach",
    "PreGrasp",
    "Grasp",
    "LookAtGoal",
    "Transfer",
    "Release",
    "Retreat",
    "Done",
)

# which phases focus the neck on the target vs the goal marker
_TARGET_PHASES = {"LookAtTarget", "Approach", "PreGrasp", "Grasp"}

# command-dither attenuation per phase: full exploration in transit, steady
# hands around the grip gates
_DITHER_SCALE = {"PreGrasp": 0.3, "Grasp": 0.0, "Release": 0.0}

# eye-position hints for the look-at solver, relative to the focus point;
# tuned per task so the camera has line of sight (duck under the CfB table,
# hover over the L2R bin, pitch down for CRange)
_TARGET_EYE_HINTS = {
    "CfB": lambda t: np.array((t[0] - 0.33, t[1] * 0.30, t[2] + 0.04)),
    # hover near the bin rim (nominal bin center 0.30, 0.22), small cup bias
    "L2R": lambda t: np.array((0.23 + 0.25 * (t[0] - 0.30),
                               0.165 + 0.25 * (t[1] - 0.22), 1.02)),
    "L2Rmod": lambda t: np.array((t[0] - 0.27, t[1] - 0.25, t[2] + 0.25)),
    "CRange": lambda t: np.array((t[0] - 0.10, t[1] - 0.015, t[2] + 0.27)),
}
_GOAL_EYE_HINTS = {
    "CfB": lambda g: np.array((g[0] - 0.26, g[1] + 0.22, g[2] + 0.12)),
    "L2R": lambda g: np.array((g[0] - 0.28, g[1] + 0.21, g[2] + 0.15)),
    "L2Rmod": lambda g: np.array((g[0] - 0.28, g[1] + 0.21, g[2] + 0.15)),
    "CRange": lambda g: np.array((g[0] - 0.32, g[1] + 0.14, g[2] + 0.30)),
}


def _generic_eye_hint(ctx: SimContext, focus: np.ndarray) -> np.ndarray:
    home = ctx.static_camera_pose().position
    back = home - focus
    n = float(np.linalg.norm(back))
    if n < 1e-9:
        return focus + np.array((-0.3, 0.0, 0.1))
    return focus + back / n * 0.40


@dataclass(frozen=True)
class DemoParams:
    noise_sigma: float = 0.01       # m, per-episode waypoint perturbation
    noise_clip: float = 2.0         # clip at this many sigmas
    phase_timeout: int = 600        # ticks before the demo aborts
    pregrasp_height: float = 0.08
    lift_height: float = 0.15
    release_height: float = 0.02
    retreat_height: float = 0.12
    arrive_tol: float = 0.02        # m, waypoint arrival check on live FK
    center_frac: float = 0.3        # look-at phases require |u|,|v| below this
    approach_tilt: float = 0.6      # rad from vertical for the tool approach axis
    neck_replan_ticks: int = 5
    arm_replan_ticks: int = 4
    approach_step: float = 0.05     # m per re-plan toward the pre-grasp hover
    descent_step: float = 0.02      # m per re-plan during the grasp descent
    transfer_step: float = 0.06     # m per re-plan while carrying / retreating
    # a fraction of demonstrations fumble the grasp once (close too early,
    # reopen, descend again): recovery data that cloned policies need because
    # their own first close attempt is never perfectly timed
    fumble_fraction: float = 0.3
    fumble_min: float = 0.045       # m from the grasp point; beyond attach range
    fumble_max: float = 0.065
    # per-replan command dither, corrected by the next re-plan: thickens the
    # visited-state tube around each demonstration with real recovery labels
    command_noise: float = 0.02
    max_ticks: int = 4000


_LOOK_POS_IK = IkParams(max_iters=60, step_clamp=0.3)
_LOOK_ORI_IK = IkParams(max_iters=40, step_clamp=0.3,
                        weights=(0.15, 0.15, 0.15, 1.0, 1.0, 1.0))
_ARM_IK = IkParams(max_iters=120, step_clamp=0.3)
# transit waypoints (lift, retreat) only need to be reached, not oriented
_ARM_TRANSIT_IK = IkParams(max_iters=120, step_clamp=0.3,
                           weights=(1.0, 1.0, 1.0, 0.05, 0.05, 0.05))


def look_at_neck_q(ctx: SimContext, seed_q: np.ndarray, eye_hint: np.ndarray,
                   focus: np.ndarray) -> np.ndarray:
    """Neck configuration whose camera looks at `focus` from near `eye_hint`.

    Two-stage: pull the camera toward the hinted viewpoint first, then re-aim
    the gaze from wherever the camera actually ended up (gaze priority).
    """
    mount_inv = ctx.neck_mount.inverse()
    stage1 = mount_inv.compose(Pose(eye_hint, look_at_quat(eye_hint, focus)))
    res = solve_ik(ctx.neck_chain, seed_q, stage1, _LOOK_POS_IK)
    cam = ctx.neck_camera_pose(res.q)
    stage2 = mount_inv.compose(Pose(cam.position, look_at_quat(cam.position, focus)))
    res = solve_ik(ctx.neck_chain, res.q, stage2, _LOOK_ORI_IK)
    return res.q


def approach_axis(arm_mount: Pose, waypoint: np.ndarray, tilt: float) -> np.ndarray:
    """Unit tool +z direction: tilted `tilt` rad from vertical, leaning outward.

    Keeps the wrist inboard of the grasp point, which the 6-DOF arm can
    realize over the whole desk workspace (straight-down approaches cannot).
    """
    radial = np.array((waypoint[0] - arm_mount.position[0],
                       waypoint[1] - arm_mount.position[1], 0.0))
    n = float(np.linalg.norm(radial))
    radial = radial / n if n > 1e-9 else np.array((1.0, 0.0, 0.0))
    return math.sin(tilt) * radial + np.array((0.0, 0.0, -math.cos(tilt)))


def approach_orientation(arm_mount: Pose, waypoint: np.ndarray, tilt: float) -> np.ndarray:
    return look_at_quat(np.zeros(3), approach_axis(arm_mount, waypoint, tilt))


@dataclass(frozen=True)
class DemoState:
    task: str
    phase: str
    waypoints: dict
    arm_cmd: np.ndarray
    neck_cmd: np.ndarray
    grip_cmd: float
    ticks_in_phase: int = 0
    aborted: bool = False
    fumble_at: float | None = None
    fumbled: bool = False
    arm_dither: np.ndarray | None = None
    neck_dither: np.ndarray | None = None
    last_focus: np.ndarray | None = None

    @property
    def done(self) -> bool:
        return self.phase == "Done"


class ScriptedDemonstrator:
    """Drives one episode of a task; owns the chains and tuning, not the state."""

    def __init__(self, ctx: SimContext, params: DemoParams | None = None):
        self.ctx = ctx
        self.params = params or DemoParams()

    # -- construction ------------------------------------------------------

    def start(self, world: WorldState, rng: np.random.Generator) -> DemoState:
        p = self.params
        target = world.object_by_id(TARGET_ID).center
        goal = world.goal.goal_point

        def noised(base, scale=1.0):
            sigma = p.noise_sigma * scale
            if sigma == 0.0:
                return np.asarray(base, dtype=float)
            n = rng.normal(0.0, sigma, 3)
            clip = p.noise_clip * sigma
            return np.asarray(base, dtype=float) + np.clip(n, -clip, clip)

        grasp = noised(target, scale=0.5)           # precision waypoints get less
        release = noised(goal + np.array((0.0, 0.0, p.release_height)), scale=0.5)
        # hover retracted along the approach axis: the grasp point then sits on
        # the wrist camera's optical axis and the descent is visual servoing
        back = approach_axis(self.ctx.arm_mount, grasp, p.approach_tilt)
        waypoints = {
            "pregrasp": noised(grasp - p.pregrasp_height * back),
            "grasp": grasp,
            "retreat_dir": -back / float(np.linalg.norm(back)),
            "lift": noised(grasp + np.array((0.0, 0.0, p.lift_height))),
            "release": release,
            "retreat": release + np.array((-0.05, 0.0, p.retreat_height)),
        }
        fumble_at = None
        if rng.random() < p.fumble_fraction:
            fumble_at = float(rng.uniform(p.fumble_min, p.fumble_max))
        return DemoState(
            task=world.task_hint or "custom",
            phase="LookAtTarget",
            waypoints=waypoints,
            arm_cmd=self.ctx.home_arm_q.copy(),
            neck_cmd=world.neck_q.copy(),
            grip_cmd=1.0,
            fumble_at=fumble_at,
        )

    # -- helpers -----------------------------------------------------------

    def _arm_ik(self, seed_q: np.ndarray, waypoint: np.ndarray,
                transit: bool = False) -> np.ndarray:
        quat = approach_orientation(self.ctx.arm_mount, waypoint, self.params.approach_tilt)
        local = self.ctx.arm_mount.inverse().compose(Pose(waypoint, quat))
        params = _ARM_TRANSIT_IK if transit else _ARM_IK
        return solve_ik(self.ctx.arm_chain, seed_q, local, params).q

    def _arm_ik_facing(self, seed_q: np.ndarray, waypoint: np.ndarray,
                       focus: np.ndarray) -> np.ndarray:
        """IK with the tool +z aimed at `focus`: keeps the target inside the
        wrist camera's cone for the whole approach, ending exactly on the
        approach axis when the waypoint sits on it."""
        gaze = focus - waypoint
        if float(np.linalg.norm(gaze)) < 1e-6:
            return self._arm_ik(seed_q, waypoint)
        quat = look_at_quat(waypoint, focus)
        local = self.ctx.arm_mount.inverse().compose(Pose(waypoint, quat))
        return solve_ik(self.ctx.arm_chain, seed_q, local, _ARM_IK).q

    def _focus_point(self, demo: DemoState, world: WorldState) -> np.ndarray:
        if demo.phase in _TARGET_PHASES:
            return world.object_by_id(TARGET_ID).center
        return world.object_by_id(GOAL_MARKER_ID).center

    def _eye_hint(self, demo: DemoState, focus: np.ndarray) -> np.ndarray:
        hints = _TARGET_EYE_HINTS if demo.phase in _TARGET_PHASES else _GOAL_EYE_HINTS
        fn = hints.get(demo.task)
        return fn(focus) if fn else _generic_eye_hint(self.ctx, focus)

    def _arm_err(self, world: WorldState, waypoint: np.ndarray) -> float:
        tool = self.ctx.arm_tool_pose(world.arm_q)
        return float(np.linalg.norm(tool.position - waypoint))

    def _focus_centered(self, demo: DemoState, world: WorldState,
                        neck_feats) -> bool:
        oid = TARGET_ID if demo.phase in _TARGET_PHASES else GOAL_MARKER_ID
        if neck_feats is None:
            neck_feats = camera_features(
                world, self.ctx.neck_camera_pose(world.neck_q), self.ctx.neck_cam)
        idx = [o.id for o in world.objects].index(oid)
        return bool(
            neck_feats.visible[idx] == 1.0
            and abs(neck_feats.u[idx]) <= self.params.center_frac
            and abs(neck_feats.v[idx]) <= self.params.center_frac
        )

    def _field_target(self, world: WorldState, point: np.ndarray,
                      step: float) -> np.ndarray:
        """One bounded step from the current tool position toward `point`.

        Commands stay close to the live state, so every (state -> command)
        pair is a single-valued function a context-window-1 policy can clone;
        far waypoint jumps would make command timing depend on unobservable
        phase clocks.
        """
        tool = self.ctx.arm_tool_pose(world.arm_q).position
        delta = point - tool
        dist = float(np.linalg.norm(delta))
        if dist <= step:
            return point
        return tool + delta * (step / dist)

    def _transfer_point(self, world: WorldState, wp: dict) -> np.ndarray:
        """State-indexed transfer route: climb, cruise at altitude, descend.

        Keeps low-altitude states unambiguous: they only ever happen right
        above the pickup or right above the goal, so the release gating cue
        (settled over the goal) cannot be confused with transit states.
        """
        tool = self.ctx.arm_tool_pose(world.arm_q).position
        release = wp["release"]
        lift_z = wp["lift"][2]
        cruise_z = max(lift_z, release[2] + 0.12)
        near_pickup = float(np.linalg.norm(tool[:2] - wp["grasp"][:2])) < 0.07
        lateral = float(np.linalg.norm(tool[:2] - release[:2]))
        if near_pickup and tool[2] < lift_z - 0.015:
            return np.array((tool[0], tool[1], lift_z))       # climb out
        if lateral > 0.035:
            return np.array((release[0], release[1], cruise_z))  # cruise high
        return release                                           # vertical drop

    # -- the phase machine ---------------------------------------------------

    def next_command(self, demo: DemoState, world: WorldState,
                     neck_feats=None,
                     rng: np.random.Generator | None = None) -> tuple[Command, DemoState, bool]:
        """One control decision.  Returns (command, advanced state, done flag).

        Deliberately timer-free: commands and phase advances depend only on
        the observable state (poses, grip, camera features), never on tick
        counters, so the demonstrations are clonable at context window 1.
        """
        p = self.params
        wp = demo.waypoints
        phase = demo.phase
        arm_cmd = demo.arm_cmd
        grip_cmd = demo.grip_cmd
        fumbled = demo.fumbled
        advance = False
        replan = demo.ticks_in_phase % p.arm_replan_ticks == 0

        if phase == "LookAtTarget":
            advance = self._focus_centered(demo, world, neck_feats)
        elif phase == "Approach":
            if self._arm_err(world, wp["pregrasp"]) < p.arrive_tol:
                advance = True
            elif replan:
                point = self._field_target(world, wp["pregrasp"], p.approach_step)
                arm_cmd = self._arm_ik(demo.arm_cmd, point)
        elif phase == "PreGrasp":
            d = self._arm_err(world, wp["grasp"])
            if world.attached_object == TARGET_ID:
                phase = "Grasp"  # fumble closed near enough to grab after all
                advance = True
            elif demo.fumble_at is not None and not demo.fumbled and d <= demo.fumble_at:
                # premature close: hold position, squeeze on nothing
                grip_cmd = 0.0
                if world.grip <= 0.05:
                    fumbled = True
            elif demo.fumbled and world.grip < 0.98:
                grip_cmd = 1.0  # reopen fully before descending again
            elif d < p.arrive_tol:
                grip_cmd = 1.0
                advance = True
            elif replan:
                grip_cmd = 1.0
                point = wp["grasp"] + wp["retreat_dir"] * max(0.0, d - p.descent_step)
                arm_cmd = self._arm_ik(demo.arm_cmd, point)
        elif phase == "Grasp":
            # close only while settled on the grasp point: observable cue
            d = self._arm_err(world, wp["grasp"])
            grip_cmd = 0.0 if d < 0.015 else 1.0
            if d >= 0.010 and replan:
                arm_cmd = self._arm_ik(demo.arm_cmd, wp["grasp"])
            advance = world.attached_object == TARGET_ID
        elif phase == "LookAtGoal":
            grip_cmd = 0.0
            advance = self._focus_centered(demo, world, neck_feats)
        elif phase == "Transfer":
            grip_cmd = 0.0
            if self._arm_err(world, wp["release"]) < p.arrive_tol:
                advance = True
            elif replan:
                point = self._field_target(world, self._transfer_point(world, wp),
                                           p.transfer_step)
                arm_cmd = self._arm_ik(demo.arm_cmd, point, transit=True)
        elif phase == "Release":
            # let go only when the object is positioned over the goal, and
            # hold position until the gripper is observably fully open, so
            # retreat commands never coincide with a mid-release grip
            d = self._arm_err(world, wp["release"])
            grip_cmd = 1.0 if d < 0.015 else 0.0
            if d >= 0.010 and replan:
                arm_cmd = self._arm_ik(demo.arm_cmd, wp["release"])
            advance = world.attached_object is None and world.grip >= 0.98
        elif phase == "Retreat":
            grip_cmd = 1.0
            if self._arm_err(world, wp["retreat"]) < 0.03:
                advance = True
            elif replan:
                point = self._field_target(world, wp["retreat"], p.transfer_step)
                arm_cmd = self._arm_ik(demo.arm_cmd, point, transit=True)
        elif phase == "Done":
            cmd = Command(demo.neck_cmd, demo.arm_cmd, demo.grip_cmd)
            return cmd, demo, True

        aborted = demo.aborted
        ticks = demo.ticks_in_phase + 1
        if advance:
            phase = PHASES[PHASES.index(phase) + 1]
            ticks = 0
        elif ticks > p.phase_timeout:
            phase = "Done"
            aborted = True

        # look-at re-plan only when the gaze focus actually moved (the focus
        # objects are static except while the target rides the gripper)
        neck_cmd = demo.neck_cmd
        last_focus = demo.last_focus
        if phase != "Done" and ticks % p.neck_replan_ticks in (0, 1):
            focus = self._focus_point(replace(demo, phase=phase), world)
            if last_focus is None or float(np.linalg.norm(focus - last_focus)) > 2e-3:
                eye = self._eye_hint(replace(demo, phase=phase), focus)
                neck_cmd = look_at_neck_q(self.ctx, world.neck_q, eye, focus)
                last_focus = focus.copy()

        demo2 = replace(
            demo,
            phase=phase,
            arm_cmd=arm_cmd,
            neck_cmd=neck_cmd,
            grip_cmd=grip_cmd,
            ticks_in_phase=ticks,
            aborted=aborted,
            fumbled=fumbled,
            last_focus=last_focus,
        )
        # dither only the emitted copy (never the stored base, which would
        # random-walk); offsets are redrawn per re-plan and held in between;
        # grip-critical phases stay steady
        arm_dither = demo.arm_dither
        neck_dither = demo.neck_dither
        if rng is not None and p.command_noise > 0.0 and phase != "Done" and replan:
            scale = _DITHER_SCALE.get(phase, 1.0) * p.command_noise
            arm_dither = rng.normal(0.0, scale, arm_cmd.shape) if scale > 0 else None
            neck_dither = rng.normal(0.0, scale, neck_cmd.shape) if scale > 0 else None
        demo2 = replace(demo2, arm_dither=arm_dither, neck_dither=neck_dither)
        arm_out = arm_cmd if arm_dither is None else arm_cmd + arm_dither
        neck_out = neck_cmd if neck_dither is None else neck_cmd + neck_dither
        cmd = Command(neck_out, arm_out, grip_cmd)
        return cmd, demo2, demo2.done


def generate_episode(task: str, seed: int, ctx: SimContext | None = None,
                     params: DemoParams | None = None,
                     record: bool = True) -> tuple[Episode | None, WorldState]:
    """Run one scripted demonstration; returns (episode or None, final world)."""
    ctx = ctx or SimContext()
    demonstrator = ScriptedDemonstrator(ctx, params)
    world = make_task_scene(task, seed, ctx)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    demo = demonstrator.start(world, rng)
    builder = EpisodeBuilder(ctx, seed, task, initial_world=world) if record else None

    for _ in range(demonstrator.params.max_ticks):
        neck_feats, wrist_feats, static_feats = (ctx.observe(world) if record
                                                 else (None, None, None))
        if not record:
            neck_feats = camera_features(
                world, ctx.neck_camera_pose(world.neck_q), ctx.neck_cam)
        cmd, demo, done = demonstrator.next_command(demo, world, neck_feats, rng)
        if done:
            break
        if record:
            builder.record_step(StepRecord(
                tick=world.tick,
                neck_q=[float(v) for v in world.neck_q],
                arm_q=[float(v) for v in world.arm_q],
                grip=float(world.grip),
                cmd_neck_q=[float(v) for v in cmd.neck_q_target],
                cmd_arm_q=[float(v) for v in cmd.arm_q_target],
                cmd_grip=float(cmd.grip_target),
                neck_cam=neck_feats,
                wrist_cam=wrist_feats,
                static_cam=static_feats,
            ))
        world = step(world, cmd, TICK_DT, ctx)

    ok = success(world) and not demo.aborted
    episode = builder.finalize(ok) if record and len(builder) else None
    return episode, world
