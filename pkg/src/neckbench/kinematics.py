"""Serial-chain forward kinematics, geometric Jacobian and damped-least-squares IK.

Covers the two robot chains of the workbench: a 5-DOF camera neck and a
6-DOF arm.  All rotations are unit quaternions (w, x, y, z), positions are
meters in a z-up world frame.  Everything here is a pure function of its
inputs; identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Pose",
    "Joint",
    "KinematicChain",
    "IkParams",
    "IkResult",
    "ChainFormatError",
    "forward_kinematics",
    "fk_frames",
    "geometric_jacobian",
    "solve_ik",
    "clamp_to_limits",
    "quat_from_axis_angle",
    "quat_mul",
    "quat_conj",
    "quat_rotate",
    "quat_to_rotvec",
    "quat_slerp",
    "quat_from_matrix",
    "quat_to_matrix",
    "look_at_quat",
    "load_chain",
    "save_chain",
    "chain_checksum",
    "default_neck_chain",
    "default_arm_chain",
]

_QUAT_NORM_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion primitives (scalar math on purpose: these sit in the 60 Hz loop)
# ---------------------------------------------------------------------------

def quat_mul(a, b):
    """Hamilton product a*b of two (w,x,y,z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        (
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    )


def quat_conj(q):
    w, x, y, z = q
    return np.array((w, -x, -y, -z))


def quat_rotate(q, v):
    """Rotate 3-vector v by quaternion q (q v q*)."""
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * (q_vec x v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    # v' = v + w*t + q_vec x t
    return np.array(
        (
            vx + w * tx + y * tz - z * ty,
            vy + w * ty + z * tx - x * tz,
            vz + w * tz + x * ty - y * tx,
        )
    )


def quat_from_axis_angle(axis, angle: float):
    ax, ay, az = axis
    n = math.sqrt(ax * ax + ay * ay + az * az)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    h = 0.5 * angle
    s = math.sin(h) / n
    return np.array((math.cos(h), ax * s, ay * s, az * s))


def quat_normalize(q):
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n < 1e-12:
        raise ValueError("cannot normalize near-zero quaternion")
    return np.array((w / n, x / n, y / n, z / n))


def quat_to_rotvec(q):
    """Log map: rotation vector (axis*angle, radians) of a unit quaternion."""
    w, x, y, z = q
    if w < 0.0:  # shortest representation
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    if s < 1e-12:
        return np.array((2.0 * x, 2.0 * y, 2.0 * z))
    angle = 2.0 * math.atan2(s, w)
    k = angle / s
    return np.array((x * k, y * k, z * k))


def quat_slerp(a, b, t: float):
    """Spherical interpolation from a toward b by fraction t in [0, 1]."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    dot = aw * bw + ax * bx + ay * by + az * bz
    if dot < 0.0:
        bw, bx, by, bz = -bw, -bx, -by, -bz
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = np.array(
            (
                aw + t * (bw - aw),
                ax + t * (bx - ax),
                ay + t * (by - ay),
                az + t * (bz - az),
            )
        )
        return quat_normalize(out)
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / s
    kb = math.sin(t * theta) / s
    return np.array(
        (
            ka * aw + kb * bw,
            ka * ax + kb * bx,
            ka * ay + kb * by,
            ka * az + kb * bz,
        )
    )


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        (
            (1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)),
            (2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)),
            (2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)),
        )
    )


def quat_from_matrix(m):
    """Unit quaternion of a proper rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
    return quat_normalize(np.array(q))


def look_at_quat(eye, focus, up=(0.0, 0.0, 1.0)):
    """Camera orientation whose optical +z axis points from eye toward focus.

    Camera +x is image-right, +y image-down; `up` breaks the roll ambiguity.
    Falls back to world +x as the up hint when the gaze is near-vertical.
    """
    eye = np.asarray(eye, dtype=float)
    focus = np.asarray(focus, dtype=float)
    fwd = focus - eye
    n = float(np.linalg.norm(fwd))
    if n < 1e-9:
        raise ValueError("look_at focus coincides with eye")
    fwd = fwd / n
    upv = np.asarray(up, dtype=float)
    if abs(float(fwd @ upv)) > 0.999:
        upv = np.array((1.0, 0.0, 0.0))
    # right = fwd x up (image-right), down = fwd x right
    right = np.array(
        (
            fwd[1] * upv[2] - fwd[2] * upv[1],
            fwd[2] * upv[0] - fwd[0] * upv[2],
            fwd[0] * upv[1] - fwd[1] * upv[0],
        )
    )
    right /= np.linalg.norm(right)
    down = np.array(
        (
            fwd[1] * right[2] - fwd[2] * right[1],
            fwd[2] * right[0] - fwd[0] * right[2],
            fwd[0] * right[1] - fwd[1] * right[0],
        )
    )
    m = np.column_stack((right, down, fwd))
    return quat_from_matrix(m)


# ---------------------------------------------------------------------------
# Pose
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform: position (m) plus unit quaternion (w,x,y,z)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array((1.0, 0.0, 0.0, 0.0)))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,):
            raise ValueError(f"position must be a 3-vector, got shape {p.shape}")
        if q.shape != (4,):
            raise ValueError(f"orientation must be a (w,x,y,z) quaternion, got shape {q.shape}")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > _QUAT_NORM_TOL:
            if n < 1e-6:
                raise ValueError("orientation quaternion is degenerate")
            q = q / n
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        """self * other: apply `other` in this pose's local frame."""
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def transform_point(self, p) -> np.ndarray:
        return self.position + quat_rotate(self.orientation, np.asarray(p, dtype=float))

    def rotate(self, v) -> np.ndarray:
        return quat_rotate(self.orientation, np.asarray(v, dtype=float))

    def to_dict(self) -> dict:
        return {
            "position": [float(v) for v in self.position],
            "orientation": [float(v) for v in self.orientation],
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(np.array(d["position"], dtype=float), np.array(d["orientation"], dtype=float))


# ---------------------------------------------------------------------------
# chains
# ---------------------------------------------------------------------------

class ChainFormatError(ValueError):
    """Raised for malformed or wrong-version chain definition files."""


@dataclass(frozen=True)
class Joint:
    """Revolute joint: rotation axis in the parent frame plus [lo, hi] limits."""

    axis: np.ndarray
    limits: tuple[float, float]

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        n = float(np.linalg.norm(a))
        if n < 1e-9:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", a / n)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if not lo < hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got [{lo}, {hi}]")
        if hi - lo > 2.0 * math.pi + 1e-9:
            raise ValueError(f"joint range |hi-lo| must be <= 2*pi, got {hi - lo}")
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True)
class KinematicChain:
    """Serial revolute chain: per-joint fixed offset, joint, ... , tool offset.

    The frame recursion for joint j is T <- T * link_offsets[j] * R(axis_j, q_j);
    the tool (or camera) frame is T * tool_offset.
    """

    name: str
    joints: tuple[Joint, ...]
    link_offsets: tuple[Pose, ...]
    tool_offset: Pose = field(default_factory=Pose)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "link_offsets", tuple(self.link_offsets))
        if len(self.joints) == 0:
            raise ValueError("chain needs at least one joint")
        if len(self.link_offsets) != len(self.joints):
            raise ValueError(
                f"chain '{self.name}': {len(self.link_offsets)} link offsets "
                f"for {len(self.joints)} joints"
            )

    @property
    def n(self) -> int:
        return len(self.joints)

    def lower_limits(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    def upper_limits(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "name": self.name,
            "joints": [
                {"axis": [float(v) for v in j.axis], "kind": "revolute",
                 "limits": [j.limits[0], j.limits[1]]}
                for j in self.joints
            ],
            "link_offsets": [p.to_dict() for p in self.link_offsets],
            "tool_offset": self.tool_offset.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "KinematicChain":
        version = d.get("format_version")
        if version != 1:
            raise ChainFormatError(f"unsupported chain format_version: {version!r}")
        try:
            joints = tuple(
                Joint(np.array(j["axis"], dtype=float), (j["limits"][0], j["limits"][1]))
                for j in d["joints"]
            )
            offsets = tuple(Pose.from_dict(p) for p in d["link_offsets"])
            tool = Pose.from_dict(d["tool_offset"])
            name = str(d["name"])
        except (KeyError, TypeError, IndexError) as exc:
            raise ChainFormatError(f"malformed chain definition: {exc}") from exc
        return KinematicChain(name, joints, offsets, tool)


def load_chain(path) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ChainFormatError(f"chain file {path} is not valid JSON: {exc}") from exc
    return KinematicChain.from_dict(data)


def save_chain(chain: KinematicChain, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(chain.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def chain_checksum(chain: KinematicChain) -> str:
    blob = json.dumps(chain.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# FK / Jacobian / IK
# ---------------------------------------------------------------------------

def _check_dims(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n,):
        raise ValueError(f"chain '{chain.name}' expects {chain.n} joint values, got shape {q.shape}")
    return q


def clamp_to_limits(chain: KinematicChain, q) -> np.ndarray:
    q = _check_dims(chain, q)
    return np.clip(q, chain.lower_limits(), chain.upper_limits())


def _compiled(chain: KinematicChain):
    """Per-chain flat tuples for the scalar FK core (cached on the instance)."""
    cached = chain.__dict__.get("_compiled_cache")
    if cached is None:
        cached = (
            tuple(
                (
                    tuple(float(v) for v in off.position),
                    tuple(float(v) for v in off.orientation),
                    tuple(float(v) for v in joint.axis),
                )
                for off, joint in zip(chain.link_offsets, chain.joints)
            ),
            tuple(float(v) for v in chain.tool_offset.position),
            tuple(float(v) for v in chain.tool_offset.orientation),
        )
        object.__setattr__(chain, "_compiled_cache", cached)
    return cached


def _fk_scalar(chain: KinematicChain, q):
    """Scalar-core FK: ((px,py,pz), (qw,qx,qy,qz), [joint pos], [joint axis])."""
    links, tool_p, tool_q = _compiled(chain)
    px = py = pz = 0.0
    qw, qx, qy, qz = 1.0, 0.0, 0.0, 0.0
    joint_positions = []
    joint_axes = []
    for (op, oq, axis), qj in zip(links, q):
        # translate by offset position rotated into world
        vx, vy, vz = op
        tx = 2.0 * (qy * vz - qz * vy)
        ty = 2.0 * (qz * vx - qx * vz)
        tz = 2.0 * (qx * vy - qy * vx)
        px += vx + qw * tx + qy * tz - qz * ty
        py += vy + qw * ty + qz * tx - qx * tz
        pz += vz + qw * tz + qx * ty - qy * tx
        # compose offset orientation
        bw, bx, by, bz = oq
        qw, qx, qy, qz = (
            qw * bw - qx * bx - qy * by - qz * bz,
            qw * bx + qx * bw + qy * bz - qz * by,
            qw * by - qx * bz + qy * bw + qz * bx,
            qw * bz + qx * by - qy * bx + qz * bw,
        )
        joint_positions.append((px, py, pz))
        # world-frame joint axis
        vx, vy, vz = axis
        tx = 2.0 * (qy * vz - qz * vy)
        ty = 2.0 * (qz * vx - qx * vz)
        tz = 2.0 * (qx * vy - qy * vx)
        joint_axes.append(
            (
                vx + qw * tx + qy * tz - qz * ty,
                vy + qw * ty + qz * tx - qx * tz,
                vz + qw * tz + qx * ty - qy * tx,
            )
        )
        # rotate about the joint axis
        h = 0.5 * qj
        s = math.sin(h)
        bw, bx, by, bz = math.cos(h), axis[0] * s, axis[1] * s, axis[2] * s
        qw, qx, qy, qz = (
            qw * bw - qx * bx - qy * by - qz * bz,
            qw * bx + qx * bw + qy * bz - qz * by,
            qw * by - qx * bz + qy * bw + qz * bx,
            qw * bz + qx * by - qy * bx + qz * bw,
        )
    # tool offset
    vx, vy, vz = tool_p
    tx = 2.0 * (qy * vz - qz * vy)
    ty = 2.0 * (qz * vx - qx * vz)
    tz = 2.0 * (qx * vy - qy * vx)
    px += vx + qw * tx + qy * tz - qz * ty
    py += vy + qw * ty + qz * tx - qx * tz
    pz += vz + qw * tz + qx * ty - qy * tx
    bw, bx, by, bz = tool_q
    qw, qx, qy, qz = (
        qw * bw - qx * bx - qy * by - qz * bz,
        qw * bx + qx * bw + qy * bz - qz * by,
        qw * by - qx * bz + qy * bw + qz * bx,
        qw * bz + qx * by - qy * bx + qz * bw,
    )
    return (px, py, pz), (qw, qx, qy, qz), joint_positions, joint_axes


def fk_frames(chain: KinematicChain, q):
    """FK with intermediate frames.

    Returns (tool_pose, joint_positions, joint_axes_world): position of each
    joint's frame origin and its rotation axis expressed in the world frame.
    """
    q = _check_dims(chain, q)
    p, quat, joint_positions, joint_axes = _fk_scalar(chain, q.tolist())
    return Pose(np.array(p), np.array(quat)), joint_positions, joint_axes


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """Tool-frame pose for joint configuration q."""
    q = _check_dims(chain, q)
    p, quat, _, _ = _fk_scalar(chain, q.tolist())
    return Pose(np.array(p), np.array(quat))


def geometric_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6xN geometric Jacobian at q: rows 0-2 linear (m/rad), rows 3-5 angular."""
    q = _check_dims(chain, q)
    (px, py, pz), _, joint_positions, joint_axes = _fk_scalar(chain, q.tolist())
    n = chain.n
    jac = np.empty((6, n))
    for j in range(n):
        ax, ay, az = joint_axes[j]
        jx, jy, jz = joint_positions[j]
        rx = px - jx
        ry = py - jy
        rz = pz - jz
        jac[0, j] = ay * rz - az * ry
        jac[1, j] = az * rx - ax * rz
        jac[2, j] = ax * ry - ay * rx
        jac[3, j] = ax
        jac[4, j] = ay
        jac[5, j] = az
    return jac


@dataclass(frozen=True)
class IkParams:
    """Damped-least-squares settings: fixed damping, per-iteration step clamp."""

    damping: float = 0.05
    max_iters: int = 100
    step_clamp: float = 0.2
    pos_tol: float = 1e-3
    ori_tol: float = 0.01
    weights: tuple[float, ...] = (1.0, 1.0, 1.0, 0.5, 0.5, 0.5)

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if self.pos_tol <= 0 or self.ori_tol <= 0:
            raise ValueError("tolerances must be > 0")
        w = tuple(float(v) for v in self.weights)
        if len(w) != 6 or any(v < 0 for v in w) or not any(v > 0 for v in w):
            raise ValueError("weights must be 6 nonnegative values with at least one > 0")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    pos_err: float
    ori_err: float
    converged: bool
    iters: int

    def weighted_err(self, params: IkParams) -> float:
        """Scalar weighted error norm used for accept/hold decisions upstream."""
        w = params.weights
        wp = (w[0] + w[1] + w[2]) / 3.0
        wo = (w[3] + w[4] + w[5]) / 3.0
        return math.sqrt(wp * self.pos_err ** 2 + wo * self.ori_err ** 2)


def pose_error(target: Pose, current: Pose) -> np.ndarray:
    """6-vector task error: position difference, world-frame rotation vector."""
    dp = target.position - current.position
    dq = quat_mul(target.orientation, quat_conj(current.orientation))
    dr = quat_to_rotvec(dq)
    return np.concatenate((dp, dr))


def solve_ik(chain: KinematicChain, q_seed, target: Pose, params: IkParams | None = None) -> IkResult:
    """Weighted damped-least-squares IK toward a 6D pose target.

    Iterates dq = (J^T W J + damping^2 I)^-1 J^T W e with per-iteration step
    clamping and joint-limit clamping.  Never raises on infeasible targets:
    returns the least-weighted-error iterate with converged=False instead
    (required for the 6-DOF-target-on-5-DOF-neck case, where the result is a
    weighted least-squares compromise).
    """
    if params is None:
        params = IkParams()
    q = clamp_to_limits(chain, q_seed)
    lo = chain.lower_limits()
    hi = chain.upper_limits()
    n = chain.n
    w = np.array(params.weights)
    eye = np.eye(n) * (params.damping * params.damping)
    tpx, tpy, tpz = (float(v) for v in target.position)
    tw, tx, ty, tz = (float(v) for v in target.orientation)

    def evaluate(qv):
        """One FK pass: 6-error vector, scalar norms, Jacobian."""
        (px, py, pz), (qw, qx, qy, qz), jpos, jax = _fk_scalar(chain, qv.tolist())
        # relative rotation target * conj(current) -> rotation vector
        rw = tw * qw + tx * qx + ty * qy + tz * qz
        rx = -tw * qx + tx * qw - ty * qz + tz * qy
        ry = -tw * qy + tx * qz + ty * qw - tz * qx
        rz = -tw * qz - tx * qy + ty * qx + tz * qw
        if rw < 0.0:
            rw, rx, ry, rz = -rw, -rx, -ry, -rz
        s = math.sqrt(rx * rx + ry * ry + rz * rz)
        if s < 1e-12:
            ox, oy, oz = 2.0 * rx, 2.0 * ry, 2.0 * rz
        else:
            k = 2.0 * math.atan2(s, rw) / s
            ox, oy, oz = rx * k, ry * k, rz * k
        ex, ey, ez = tpx - px, tpy - py, tpz - pz
        err = np.array((ex, ey, ez, ox, oy, oz))
        pos_err = math.sqrt(ex * ex + ey * ey + ez * ez)
        ori_err = math.sqrt(ox * ox + oy * oy + oz * oz)
        werr = math.sqrt(float((w * err * err).sum()))
        jac = np.empty((6, n))
        for j in range(n):
            ax, ay, az = jax[j]
            rx_, ry_, rz_ = px - jpos[j][0], py - jpos[j][1], pz - jpos[j][2]
            jac[0, j] = ay * rz_ - az * ry_
            jac[1, j] = az * rx_ - ax * rz_
            jac[2, j] = ax * ry_ - ay * rx_
            jac[3, j] = ax
            jac[4, j] = ay
            jac[5, j] = az
        return err, pos_err, ori_err, werr, jac

    err, pos_err, ori_err, werr, jac = evaluate(q)
    best = (q, pos_err, ori_err, werr)
    if pos_err < params.pos_tol and ori_err < params.ori_tol:
        return IkResult(q, pos_err, ori_err, True, 0)

    for it in range(1, params.max_iters + 1):
        jw = jac * w[:, None]  # W J, rows scaled
        lhs = jac.T @ jw + eye
        rhs = jw.T @ err
        dq = np.linalg.solve(lhs, rhs)
        np.clip(dq, -params.step_clamp, params.step_clamp, out=dq)
        q = np.clip(q + dq, lo, hi)
        err, pos_err, ori_err, werr, jac = evaluate(q)
        if werr < best[3]:
            best = (q, pos_err, ori_err, werr)
        if pos_err < params.pos_tol and ori_err < params.ori_tol:
            return IkResult(q, pos_err, ori_err, True, it)
        if float(np.max(np.abs(dq))) < 1e-13:
            break

    q, pos_err, ori_err, _ = best
    return IkResult(q, pos_err, ori_err, False, params.max_iters)


# ---------------------------------------------------------------------------
# default chains
# ---------------------------------------------------------------------------

def _p(x=0.0, y=0.0, z=0.0, quat=None) -> Pose:
    return Pose(np.array((x, y, z)), np.array((1.0, 0.0, 0.0, 0.0)) if quat is None else quat)


# Optical camera frame inside the tool: +z forward, +x image-right, +y image-down.
# At zero neck configuration the camera looks along world +x.
CAMERA_TWIST = quat_mul(
    quat_from_axis_angle((0.0, 1.0, 0.0), math.pi / 2.0),
    quat_from_axis_angle((0.0, 0.0, 1.0), -math.pi / 2.0),
)

Z = (0.0, 0.0, 1.0)
Y = (0.0, 1.0, 0.0)
X = (1.0, 0.0, 0.0)


def default_neck_chain() -> KinematicChain:
    """5-DOF camera neck: yaw, three pitches, roll; camera looks +x at q=0.

    Column sections 0.11/0.20/0.20 m up then 0.065 m forward, camera 0.04 m
    ahead of the roll joint.  WidowX-200-class proportions.
    """
    joints = (
        Joint(np.array(Z), (-2.4, 2.4)),      # base yaw
        Joint(np.array(Y), (-1.6, 1.6)),      # lower pitch
        Joint(np.array(Y), (-1.8, 1.8)),      # mid pitch
        Joint(np.array(Y), (-1.8, 1.8)),      # camera pitch
        Joint(np.array(X), (-2.0, 2.0)),      # camera roll
    )
    offsets = (
        _p(z=0.11),
        _p(z=0.20),
        _p(z=0.20),
        _p(x=0.065),
        _p(),
    )
    tool = Pose(np.array((0.04, 0.0, 0.0)), CAMERA_TWIST)
    return KinematicChain("neck", joints, offsets, tool)


def default_arm_chain() -> KinematicChain:
    """Generic 6-DOF arm, about 1.0 m stretch; tool +z is the approach axis."""
    joints = (
        Joint(np.array(Z), (-2.9, 2.9)),      # base yaw
        Joint(np.array(Y), (-2.2, 2.2)),      # shoulder pitch
        Joint(np.array(Y), (-2.6, 2.6)),      # elbow pitch
        Joint(np.array(Y), (-2.6, 2.6)),      # wrist pitch
        Joint(np.array(Z), (-2.9, 2.9)),      # wrist yaw
        Joint(np.array(Y), (-2.9, 2.9)),      # wrist roll
    )
    offsets = (
        _p(z=0.10),
        _p(z=0.08),
        _p(z=0.42),
        _p(z=0.38),
        _p(z=0.06),
        _p(z=0.06),
    )
    # Tool +z along the final link (+z at zero config), gripper 0.10 m out.
    tool = _p(z=0.10)
    return KinematicChain("arm", joints, offsets, tool)
