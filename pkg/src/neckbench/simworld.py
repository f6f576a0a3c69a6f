"""Kinematic desk-scale world: robot chains, box scenes, geometric cameras.

No dynamics: objects move only while attached to the gripper, occluders never
move.  Perception is geometric: each camera reports, per scene object, a
visibility flag plus normalized image coordinates and depth, with occlusion
decided by exact ray/box slab tests.  This stands in for RGB streams so the
actuated-vs-static camera comparison is purely about viewpoint geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kinematics import (
    KinematicChain,
    Pose,
    clamp_to_limits,
    default_arm_chain,
    default_neck_chain,
    forward_kinematics,
    quat_conj,
    quat_rotate,
)

__all__ = [
    "Aabb",
    "SceneObject",
    "GoalSpec",
    "CameraModel",
    "CameraFeatures",
    "WorldState",
    "Command",
    "SimContext",
    "SceneError",
    "fov_from_diagonal",
    "segment_hits_aabb",
    "camera_features",
    "step",
    "success",
    "make_task_scene",
    "scene_from_spec",
    "TASK_IDS",
    "TARGET_ID",
    "GOAL_MARKER_ID",
]

TICK_DT = 1.0 / 60.0

# fixed object slots so camera features have a constant layout
TARGET_ID = 0
GOAL_MARKER_ID = 1
DISTRACTOR_A_ID = 2
DISTRACTOR_B_ID = 3
NUM_OBJECTS = 4

TASK_IDS = ("L2R", "L2Rmod", "CRange", "CfB")


class SceneError(ValueError):
    """Unknown task id or a scene that violates its geometric precondition."""


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by center and (strictly positive) half extents."""

    center: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        h = np.asarray(self.half_extents, dtype=float)
        if c.shape != (3,) or h.shape != (3,):
            raise ValueError("Aabb needs 3-vector center and half_extents")
        if not np.all(h > 0):
            raise ValueError("Aabb half_extents must be > 0")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", h)

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_extents

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_extents

    def corners(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """(lo, hi) as plain float tuples, cached (hot path of the ray tests)."""
        cached = self.__dict__.get("_corners_cache")
        if cached is None:
            cached = (tuple(float(v) for v in self.lo), tuple(float(v) for v in self.hi))
            object.__setattr__(self, "_corners_cache", cached)
        return cached

    def contains(self, p) -> bool:
        lo, hi = self.corners()
        return bool(
            lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1] and lo[2] <= p[2] <= hi[2]
        )

    def to_dict(self) -> dict:
        return {
            "center": [float(v) for v in self.center],
            "half_extents": [float(v) for v in self.half_extents],
        }

    @staticmethod
    def from_dict(d: dict) -> "Aabb":
        return Aabb(np.array(d["center"], float), np.array(d["half_extents"], float))


@dataclass(frozen=True)
class SceneObject:
    id: int
    center: np.ndarray
    half_extents: np.ndarray
    graspable: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        h = np.asarray(self.half_extents, dtype=float)
        if not np.all(h > 0):
            raise ValueError("object half_extents must be > 0")
        object.__setattr__(self, "half_extents", h)

    @property
    def aabb(self) -> Aabb:
        cached = self.__dict__.get("_aabb_cache")
        if cached is None:
            cached = Aabb(self.center, self.half_extents)
            object.__setattr__(self, "_aabb_cache", cached)
        return cached

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "center": [float(v) for v in self.center],
            "half_extents": [float(v) for v in self.half_extents],
            "graspable": self.graspable,
        }

    @staticmethod
    def from_dict(d: dict) -> "SceneObject":
        return SceneObject(
            int(d["id"]),
            np.array(d["center"], float),
            np.array(d["half_extents"], float),
            bool(d["graspable"]),
        )


@dataclass(frozen=True)
class GoalSpec:
    target_object_id: int
    goal_point: np.ndarray
    goal_radius: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "goal_point", np.asarray(self.goal_point, dtype=float))
        if self.goal_radius <= 0:
            raise ValueError("goal_radius must be > 0")

    def to_dict(self) -> dict:
        return {
            "target_object_id": self.target_object_id,
            "goal_point": [float(v) for v in self.goal_point],
            "goal_radius": self.goal_radius,
        }

    @staticmethod
    def from_dict(d: dict) -> "GoalSpec":
        return GoalSpec(int(d["target_object_id"]), np.array(d["goal_point"], float),
                        float(d["goal_radius"]))


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def fov_from_diagonal(diag_fov: float, aspect: float = 16.0 / 9.0) -> tuple[float, float]:
    """Split a diagonal field of view into (horizontal, vertical) at an aspect ratio."""
    if not 0.0 < diag_fov < math.pi:
        raise ValueError("diagonal fov must be in (0, pi)")
    td = math.tan(diag_fov / 2.0)
    tv = td / math.sqrt(1.0 + aspect * aspect)
    th = aspect * tv
    return 2.0 * math.atan(th), 2.0 * math.atan(tv)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole frustum: optical +z forward, +x image-right, +y image-down."""

    h_fov: float
    v_fov: float
    max_range: float = 3.0

    def __post_init__(self):
        for f in (self.h_fov, self.v_fov):
            if not 0.0 < f < math.pi:
                raise ValueError("fov must be in (0, pi)")

    @staticmethod
    def from_diagonal(diag_fov: float, aspect: float = 16.0 / 9.0,
                      max_range: float = 3.0) -> "CameraModel":
        h, v = fov_from_diagonal(diag_fov, aspect)
        return CameraModel(h, v, max_range)

    def to_dict(self) -> dict:
        return {"h_fov": self.h_fov, "v_fov": self.v_fov, "max_range": self.max_range}


@dataclass(frozen=True)
class CameraFeatures:
    """Per-object (visible, u, v, depth) in fixed object-id order.

    Invisible objects carry the all-zero sentinel.  u, v are normalized
    image-plane coordinates in [-1, 1]; depth is optical-axis distance.
    """

    visible: np.ndarray
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray

    def to_flat(self) -> list[float]:
        out = []
        for i in range(len(self.visible)):
            out.extend((float(self.visible[i]), float(self.u[i]),
                        float(self.v[i]), float(self.depth[i])))
        return out

    @staticmethod
    def from_flat(flat) -> "CameraFeatures":
        a = np.asarray(flat, dtype=float).reshape(-1, 4)
        return CameraFeatures(a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy(), a[:, 3].copy())


def segment_hits_aabb(p0, p1, lo, hi) -> bool:
    """Exact slab test: does the closed segment p0->p1 intersect the box [lo, hi]?"""
    tmin = 0.0
    tmax = 1.0
    for k in range(3):
        o = p0[k]
        d = p1[k] - o
        lk = lo[k]
        hk = hi[k]
        if -1e-15 < d < 1e-15:
            if o < lk or o > hk:
                return False
        else:
            t1 = (lk - o) / d
            t2 = (hk - o) / d
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > tmin:
                tmin = t1
            if t2 < tmax:
                tmax = t2
            if tmin > tmax:
                return False
    return True


def camera_features(world: "WorldState", cam_pose: Pose, model: CameraModel) -> CameraFeatures:
    """Project every scene object; occlusion by occluders and other objects.

    An object is visible iff its center lies inside the frustum within range
    and the camera-to-center segment is not blocked by any occluder box or by
    another object's box (the object itself and any held object never block).
    """
    n = len(world.objects)
    visible = np.zeros(n)
    us = np.zeros(n)
    vs = np.zeros(n)
    ds = np.zeros(n)
    cam_p = tuple(float(v) for v in cam_pose.position)
    qi = quat_conj(cam_pose.orientation)
    th = math.tan(model.h_fov / 2.0)
    tv = math.tan(model.v_fov / 2.0)
    occ_corners = [occ.corners() for occ in world.occluders]
    obj_corners = [(o.id, o.aabb.corners()) for o in world.objects]
    for i, obj in enumerate(world.objects):
        center = obj.center
        rel = quat_rotate(qi, (center[0] - cam_p[0], center[1] - cam_p[1],
                               center[2] - cam_p[2]))
        z = rel[2]
        if z <= 0.0 or z > model.max_range:
            continue
        u = rel[0] / (z * th)
        v = rel[1] / (z * tv)
        if abs(u) > 1.0 or abs(v) > 1.0:
            continue
        blocked = False
        for lo, hi in occ_corners:
            if segment_hits_aabb(cam_p, center, lo, hi):
                blocked = True
                break
        if not blocked:
            for oid, (lo, hi) in obj_corners:
                if oid == obj.id or oid == world.attached_object:
                    continue
                if segment_hits_aabb(cam_p, center, lo, hi):
                    blocked = True
                    break
        if not blocked:
            visible[i] = 1.0
            us[i] = u
            vs[i] = v
            ds[i] = z
    return CameraFeatures(visible, us, vs, ds)


# ---------------------------------------------------------------------------
# world + stepping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Command:
    neck_q_target: np.ndarray
    arm_q_target: np.ndarray
    grip_target: float


@dataclass(frozen=True)
class WorldState:
    neck_q: np.ndarray
    arm_q: np.ndarray
    grip: float
    objects: tuple[SceneObject, ...]
    occluders: tuple[Aabb, ...]
    goal: GoalSpec
    attached_object: int | None = None
    tick: int = 0
    rng_seed: int = 0
    task_hint: str | None = None

    def object_by_id(self, oid: int) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"no object with id {oid}")


@dataclass(frozen=True)
class SimContext:
    """Chains, mounts, camera models and motion limits shared by one session."""

    neck_chain: KinematicChain = field(default_factory=default_neck_chain)
    arm_chain: KinematicChain = field(default_factory=default_arm_chain)
    neck_mount: Pose = field(default_factory=lambda: Pose(np.array([0.0, 0.0, 0.60])))
    arm_mount: Pose = field(default_factory=lambda: Pose(np.array([0.0, -0.18, 0.50])))
    joint_speed: float = 1.5          # rad/s per joint
    grip_speed: float = 2.0           # aperture units/s
    attach_radius: float = 0.04       # m, tool to object center
    attach_threshold: float = 0.3     # grip crossing below -> attach
    detach_threshold: float = 0.7     # grip crossing above -> detach
    neck_cam: CameraModel = field(default_factory=lambda: CameraModel.from_diagonal(math.radians(75.0)))
    static_cam: CameraModel = field(default_factory=lambda: CameraModel.from_diagonal(math.radians(160.0)))
    wrist_cam: CameraModel = field(default_factory=lambda: CameraModel.from_diagonal(math.radians(87.0)))
    wrist_cam_offset: Pose = field(default_factory=lambda: Pose(np.array([0.0, 0.0, -0.12])))
    home_neck_q: np.ndarray = field(default_factory=lambda: np.zeros(5))
    # ready pose: tool near (0.30, -0.10, 0.80) with the standard tilted approach
    home_arm_q: np.ndarray = field(default_factory=lambda: np.array([0.26, -0.46, 2.23, 0.77, -1.57, 0.0]))

    def neck_camera_pose(self, neck_q) -> Pose:
        return self.neck_mount.compose(forward_kinematics(self.neck_chain, neck_q))

    def arm_tool_pose(self, arm_q) -> Pose:
        return self.arm_mount.compose(forward_kinematics(self.arm_chain, arm_q))

    def wrist_camera_pose(self, arm_q) -> Pose:
        """Wrist camera sits behind the gripper looking along the approach,
        so a grasped object stays in view at constant depth instead of
        collapsing into the invisible-depth sentinel."""
        return self.arm_tool_pose(arm_q).compose(self.wrist_cam_offset)

    def static_camera_pose(self) -> Pose:
        """Fixed wide-angle mount: the neck's home camera pose, frozen."""
        cached = self.__dict__.get("_static_pose_cache")
        if cached is None:
            cached = self.neck_camera_pose(self.home_neck_q)
            object.__setattr__(self, "_static_pose_cache", cached)
        return cached

    def observe(self, world: WorldState):
        """(neck, wrist, static) camera features for the current world."""
        neck = camera_features(world, self.neck_camera_pose(world.neck_q), self.neck_cam)
        wrist = camera_features(world, self.wrist_camera_pose(world.arm_q), self.wrist_cam)
        static = camera_features(world, self.static_camera_pose(), self.static_cam)
        return neck, wrist, static


def _rate_limit(current: np.ndarray, target: np.ndarray, max_delta: float) -> np.ndarray:
    return current + np.clip(target - current, -max_delta, max_delta)


def step(world: WorldState, cmd: Command, dt: float, ctx: SimContext) -> WorldState:
    """Advance one tick: rate-limited joint motion, grip, attach/detach."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    neck_q = _rate_limit(world.neck_q, clamp_to_limits(ctx.neck_chain, cmd.neck_q_target),
                         ctx.joint_speed * dt)
    arm_q = _rate_limit(world.arm_q, clamp_to_limits(ctx.arm_chain, cmd.arm_q_target),
                        ctx.joint_speed * dt)
    grip_target = min(1.0, max(0.0, float(cmd.grip_target)))
    dg = grip_target - world.grip
    max_dg = ctx.grip_speed * dt
    grip = world.grip + (dg if abs(dg) <= max_dg else math.copysign(max_dg, dg))

    attached = world.attached_object
    objects = world.objects
    tool_p = None

    if attached is None and world.grip >= ctx.attach_threshold > grip:
        tool_p = ctx.arm_tool_pose(arm_q).position
        best = None
        best_d = ctx.attach_radius
        for obj in objects:
            if not obj.graspable:
                continue
            d = float(np.linalg.norm(obj.center - tool_p))
            if d <= best_d:
                best_d = d
                best = obj.id
        if best is not None:
            attached = best
    elif attached is not None and world.grip <= ctx.detach_threshold < grip:
        attached = None

    if attached is not None:
        if tool_p is None:
            tool_p = ctx.arm_tool_pose(arm_q).position
        objects = tuple(
            replace(o, center=tool_p.copy()) if o.id == attached else o for o in objects
        )

    return replace(
        world,
        neck_q=neck_q,
        arm_q=arm_q,
        grip=grip,
        objects=objects,
        attached_object=attached,
        tick=world.tick + 1,
    )


def success(world: WorldState, goal: GoalSpec | None = None) -> bool:
    """Target object placed within goal_radius of goal_point and released."""
    g = goal if goal is not None else world.goal
    if world.attached_object == g.target_object_id:
        return False
    target = world.object_by_id(g.target_object_id)
    return float(np.linalg.norm(target.center - g.goal_point)) <= g.goal_radius


# ---------------------------------------------------------------------------
# task scenes
# ---------------------------------------------------------------------------

_CUP_HALF = (0.025, 0.025, 0.035)
_BOX_HALF = (0.04, 0.04, 0.045)
_DISTRACTOR_HALF = (0.02, 0.02, 0.055)

# shared back shelf carrying the two distractors; their lateral slots differ
# per task so the tick-0 view identifies which task the scene is
_BACK_SHELF = {"center": (1.12, 0.0, 1.02), "half_extents": (0.10, 0.45, 0.015)}
_DISTRACTOR_Z = 1.09

_TASK_SPECS = {
    # Cup Transfer from Bottom shelf: cup in one of two bays under a low
    # coffee-table top, goal box on a higher side table.
    "CfB": {
        "target": {"center": (0.55, 0.14, 0.795), "half_extents": _CUP_HALF,
                   "bays_y": (-0.14, 0.14)},
        "goal_marker": {"center": (0.42, -0.38, 0.955), "half_extents": _BOX_HALF},
        "distractors_y": (0.25, -0.10),
        "occluders": [
            {"center": (0.55, 0.0, 0.875), "half_extents": (0.30, 0.35, 0.015)},   # table top
            {"center": (0.55, 0.0, 0.7525), "half_extents": (0.30, 0.35, 0.0075)},  # bottom shelf
            {"center": (0.42, -0.38, 0.8975), "half_extents": (0.16, 0.16, 0.0125)},  # high table
            _BACK_SHELF,
        ],
        "require_static_invisible_target": True,
    },
    # Left-to-right pick and place, peeking variant: cup inside a tall bin
    # close to the robot's left; the neck must hover over the rim to see it.
    "L2R": {
        "target": {"center": (0.30, 0.22, 0.76), "half_extents": _CUP_HALF},
        "goal_marker": {"center": (0.45, -0.38, 0.905), "half_extents": _BOX_HALF},
        "distractors_y": (-0.15, 0.30),
        "occluders": [
            {"center": (0.30, 0.22, 0.71), "half_extents": (0.15, 0.15, 0.015)},   # left table
            {"center": (0.20, 0.22, 0.8275), "half_extents": (0.005, 0.12, 0.1025)},  # bin -x
            {"center": (0.40, 0.22, 0.8275), "half_extents": (0.005, 0.12, 0.1025)},  # bin +x
            {"center": (0.30, 0.12, 0.8275), "half_extents": (0.12, 0.005, 0.1025)},  # bin -y
            {"center": (0.30, 0.32, 0.8275), "half_extents": (0.12, 0.005, 0.1025)},  # bin +y
            {"center": (0.45, -0.38, 0.845), "half_extents": (0.15, 0.15, 0.015)},  # right shelf
            _BACK_SHELF,
        ],
    },
    # Modified L2R: same placement, open table, no bin, no peeking required.
    "L2Rmod": {
        "target": {"center": (0.40, 0.34, 0.76), "half_extents": _CUP_HALF},
        "goal_marker": {"center": (0.45, -0.38, 0.905), "half_extents": _BOX_HALF},
        "distractors_y": (-0.30, 0.10),
        "occluders": [
            {"center": (0.40, 0.34, 0.71), "half_extents": (0.15, 0.15, 0.015)},
            {"center": (0.45, -0.38, 0.845), "half_extents": (0.15, 0.15, 0.015)},
            _BACK_SHELF,
        ],
    },
    # Close-range manipulation: cup on a pedestal near the torso.
    "CRange": {
        "target": {"center": (0.26, 0.02, 0.785), "half_extents": _CUP_HALF},
        "goal_marker": {"center": (0.60, -0.20, 0.715), "half_extents": _BOX_HALF},
        "distractors_y": (0.05, -0.35),
        "occluders": [
            {"center": (0.26, 0.02, 0.71), "half_extents": (0.06, 0.10, 0.04)},    # pedestal
            {"center": (0.60, -0.20, 0.655), "half_extents": (0.18, 0.18, 0.015)},  # front table
            _BACK_SHELF,
        ],
    },
}

JITTER = 0.05  # horizontal-plane uniform jitter applied to every object


def scene_from_spec(spec: dict, seed: int, ctx: SimContext | None = None,
                    task_hint: str | None = None) -> WorldState:
    """Build a deterministic jittered world from a scene description dict.

    Jitter is uniform +-`jitter` per horizontal axis, drawn independently per
    object (goal point follows the goal marker).  A scene may opt into the
    static-camera precondition check used by CfB.
    """
    ctx = ctx or SimContext()
    rng = np.random.default_rng(seed)
    jitter = float(spec.get("jitter", JITTER))

    def jit():
        return rng.uniform(-jitter, jitter, 2)

    tspec = spec["target"]
    tcenter = np.array(tspec["center"], float)
    if "bays_y" in tspec:
        bays = tspec["bays_y"]
        tcenter = tcenter.copy()
        tcenter[1] = float(bays[int(rng.integers(len(bays)))])
    tcenter[:2] += jit()
    target = SceneObject(TARGET_ID, tcenter, np.array(tspec["half_extents"], float), True)

    gspec = spec["goal_marker"]
    gcenter = np.array(gspec["center"], float)
    gcenter[:2] += jit()
    marker = SceneObject(GOAL_MARKER_ID, gcenter, np.array(gspec["half_extents"], float), False)

    distractors = []
    for oid, dy in zip((DISTRACTOR_A_ID, DISTRACTOR_B_ID), spec["distractors_y"]):
        c = np.array((_BACK_SHELF["center"][0], dy, _DISTRACTOR_Z))
        c[:2] += jit()
        distractors.append(SceneObject(oid, c, np.array(_DISTRACTOR_HALF), False))

    occluders = tuple(
        Aabb(np.array(o["center"], float), np.array(o["half_extents"], float))
        for o in spec["occluders"]
    )
    goal = GoalSpec(TARGET_ID, gcenter.copy(), float(spec.get("goal_radius", 0.05)))
    world = WorldState(
        neck_q=ctx.home_neck_q.copy(),
        arm_q=ctx.home_arm_q.copy(),
        grip=1.0,
        objects=(target, marker, *distractors),
        occluders=occluders,
        goal=goal,
        attached_object=None,
        tick=0,
        rng_seed=int(seed),
        task_hint=task_hint,
    )

    if spec.get("require_static_invisible_target"):
        feats = camera_features(world, ctx.static_camera_pose(), ctx.static_cam)
        if feats.visible[TARGET_ID] != 0.0:
            raise SceneError(
                f"scene seed {seed}: target must be excluded or occluded for the "
                "static camera at its fixed mount"
            )
    return world


def make_task_scene(task: str, seed: int, ctx: SimContext | None = None) -> WorldState:
    """Deterministic scene for one of the built-in tasks (L2R/L2Rmod/CRange/CfB)."""
    if task not in _TASK_SPECS:
        raise SceneError(f"unknown task id {task!r}; expected one of {TASK_IDS}")
    return scene_from_spec(_TASK_SPECS[task], seed, ctx, task_hint=task)
