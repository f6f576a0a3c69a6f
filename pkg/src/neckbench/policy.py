"""Chunked behavior-cloning policy, trainer and evaluation harness.

A context-window-1 policy: one observation in, a chunk of H future command
vectors out, trained with plain MSE behavior cloning on merged unlabeled
demonstrations.  Two observation variants share one dataset: "actuated" sees
neck proprioception plus the neck camera, "static" sees the fixed wide-angle
camera and no neck.  The network is a two-hidden-layer tanh MLP with a
hand-derived backward pass, gradient-checked against finite differences.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .recorder import Dataset, Episode, StepRecord
from .simworld import (
    Command,
    SimContext,
    TARGET_ID,
    TICK_DT,
    WorldState,
    camera_features,
    make_task_scene,
    step,
    success,
)

__all__ = [
    "VARIANTS",
    "TrainConfig",
    "PolicyParams",
    "TrainResult",
    "RolloutResult",
    "observation_dim",
    "action_dim",
    "featurize_obs",
    "chunk_targets",
    "build_training_set",
    "forward",
    "loss_and_grad",
    "train",
    "rollout",
    "compare",
    "save_params",
    "load_params",
]

VARIANTS = ("actuated", "static")
_NUM_OBJECTS = 4
_CAM_FEATS = _NUM_OBJECTS * 4


def observation_dim(variant: str) -> int:
    if variant == "actuated":
        return 5 + 6 + 1 + _CAM_FEATS + _CAM_FEATS  # 44
    if variant == "static":
        return 6 + 1 + _CAM_FEATS + _CAM_FEATS      # 39
    raise ValueError(f"unknown variant {variant!r}")


def action_dim(variant: str) -> int:
    if variant == "actuated":
        return 5 + 6 + 1  # 12
    if variant == "static":
        return 6 + 1      # 7
    raise ValueError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 150
    subsample_hz: float = 15.0
    horizon: int = 10        # commands per chunk
    replan_every: int = 5    # executed chunk entries before re-query
    hidden: int = 256
    std_floor: float = 1e-6
    scale_floor: float = 0.05      # all obs dims are O(1); don't normalize below this
    normalized_clip: float = 10.0  # bound on |normalized obs| (train and rollout)
    obs_noise: float = 0.02        # augmentation noise, normalized units
    lr_schedule: str = "cosine"   # "cosine" or "constant"
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lr", "beta1", "beta2", "eps", "batch_size", "epochs", "subsample_hz",
            "horizon", "replan_every", "hidden", "std_floor", "scale_floor",
            "normalized_clip", "obs_noise", "lr_schedule", "seed")}


# ---------------------------------------------------------------------------
# observations and targets
# ---------------------------------------------------------------------------

def featurize_obs(step_rec: StepRecord, variant: str) -> np.ndarray:
    """Raw (unnormalized) observation vector for one recorded step."""
    if variant == "actuated":
        parts = (step_rec.neck_q, step_rec.arm_q, [step_rec.grip],
                 step_rec.neck_cam.to_flat(), step_rec.wrist_cam.to_flat())
    elif variant == "static":
        parts = (step_rec.arm_q, [step_rec.grip],
                 step_rec.static_cam.to_flat(), step_rec.wrist_cam.to_flat())
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _command_row(step_rec: StepRecord, variant: str) -> np.ndarray:
    if variant == "actuated":
        return np.array(step_rec.cmd_neck_q + step_rec.cmd_arm_q + [step_rec.cmd_grip])
    return np.array(step_rec.cmd_arm_q + [step_rec.cmd_grip])


def chunk_targets(rows: np.ndarray, horizon: int) -> np.ndarray:
    """Stack H consecutive command rows per sample, padding by repeating the last."""
    n, d = rows.shape
    out = np.empty((n, horizon * d))
    for k in range(horizon):
        idx = np.minimum(np.arange(n) + k, n - 1)
        out[:, k * d:(k + 1) * d] = rows[idx]
    return out


def build_training_set(dataset: Dataset, variant: str,
                       config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Subsample every episode to the training rate and emit (obs, chunk) pairs."""
    stride = max(1, int(round((1.0 / TICK_DT) / config.subsample_hz)))
    xs, ys = [], []
    for ep in dataset.episodes:
        steps = ep.steps[::stride]
        if not steps:
            continue
        obs = np.stack([featurize_obs(s, variant) for s in steps])
        rows = np.stack([_command_row(s, variant) for s in steps])
        xs.append(obs)
        ys.append(chunk_targets(rows, config.horizon))
    if not xs:
        raise ValueError("dataset contains no steps")
    return np.concatenate(xs), np.concatenate(ys)


def normalize(obs: np.ndarray, mean: np.ndarray, std: np.ndarray,
              clip: float = 10.0) -> np.ndarray:
    """Standardize and bound.

    The clip matters at rollout: dims that never moved in training (std at the
    floor) would otherwise blow up to thousands of sigma on the first small
    closed-loop deviation and saturate the network.
    """
    z = (obs - mean) / std
    return np.clip(z, -clip, clip)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def _layout(obs_dim: int, hidden: int, out_dim: int):
    return (
        ("w1", (hidden, obs_dim)),
        ("b1", (hidden,)),
        ("w2", (hidden, hidden)),
        ("b2", (hidden,)),
        ("w3", (out_dim, hidden)),
        ("b3", (out_dim,)),
    )


def _layout_checksum(layout) -> str:
    blob = json.dumps([[name, list(shape)] for name, shape in layout])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PolicyParams:
    """Flat parameter vector plus the layout needed to view it as matrices."""

    variant: str
    hidden: int
    horizon: int
    flat: np.ndarray
    obs_mean: np.ndarray
    obs_std: np.ndarray
    init_seed: int
    act_mean: np.ndarray | None = None
    act_std: np.ndarray | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("policy parameters must be finite")

    @property
    def layout(self):
        return _layout(observation_dim(self.variant), self.hidden,
                       action_dim(self.variant) * self.horizon)

    @property
    def layout_checksum(self) -> str:
        return _layout_checksum(self.layout)

    def views(self, flat: np.ndarray | None = None) -> dict:
        flat = self.flat if flat is None else flat
        out = {}
        offset = 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        if offset != flat.size:
            raise ValueError(f"flat vector has {flat.size} values, layout needs {offset}")
        return out

    @staticmethod
    def init(variant: str, config: TrainConfig) -> "PolicyParams":
        obs_dim = observation_dim(variant)
        out_dim = action_dim(variant) * config.horizon
        layout = _layout(obs_dim, config.hidden, out_dim)
        total = sum(int(np.prod(shape)) for _, shape in layout)
        rng = np.random.default_rng(config.seed)
        flat = np.zeros(total)
        out_total = action_dim(variant) * config.horizon
        params = PolicyParams(variant, config.hidden, config.horizon, flat,
                              np.zeros(obs_dim), np.ones(obs_dim), config.seed,
                              np.zeros(out_total), np.ones(out_total))
        views = params.views()
        for name in ("w1", "w2", "w3"):
            w = views[name]
            w[:] = rng.normal(0.0, 1.0 / math.sqrt(w.shape[1]), w.shape)
        return params


def save_params(params: PolicyParams, path) -> None:
    header = {
        "format_version": 1,
        "variant": params.variant,
        "hidden": params.hidden,
        "horizon": params.horizon,
        "layout_checksum": params.layout_checksum,
        "init_seed": params.init_seed,
        "obs_mean": [float(v) for v in params.obs_mean],
        "obs_std": [float(v) for v in params.obs_std],
        "act_mean": [float(v) for v in params.act_mean],
        "act_std": [float(v) for v in params.act_std],
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(json.dumps([float(v) for v in params.flat]) + "\n")


def load_params(path) -> PolicyParams:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        flat = np.array(json.loads(fh.readline()), dtype=float)
    if header.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported params format_version")
    params = PolicyParams(
        header["variant"], int(header["hidden"]), int(header["horizon"]), flat,
        np.array(header["obs_mean"], float), np.array(header["obs_std"], float),
        int(header["init_seed"]),
        np.array(header["act_mean"], float), np.array(header["act_std"], float),
    )
    if params.layout_checksum != header["layout_checksum"]:
        raise ValueError(f"{path}: layout checksum mismatch")
    return params


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

def forward(params: PolicyParams, obs: np.ndarray) -> np.ndarray:
    """Action chunk(s) for normalized observation(s); accepts (d,) or (B, d)."""
    v = params.views()
    single = obs.ndim == 1
    x = obs[None, :] if single else obs
    h1 = np.tanh(x @ v["w1"].T + v["b1"])
    h2 = np.tanh(h1 @ v["w2"].T + v["b2"])
    out = h2 @ v["w3"].T + v["b3"]
    return out[0] if single else out


def loss_and_grad(params: PolicyParams, x: np.ndarray,
                  y: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE over all chunk entries plus the analytic gradient (flat vector)."""
    v = params.views()
    b = x.shape[0]
    a1 = x @ v["w1"].T + v["b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ v["w2"].T + v["b2"]
    h2 = np.tanh(a2)
    out = h2 @ v["w3"].T + v["b3"]
    diff = out - y
    loss = float(np.mean(diff * diff))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite training loss; aborting")

    grad_flat = np.zeros_like(params.flat)
    g = params.views(grad_flat)
    dout = diff * (2.0 / diff.size)
    g["w3"][:] = dout.T @ h2
    g["b3"][:] = dout.sum(axis=0)
    dh2 = (dout @ v["w3"]) * (1.0 - h2 * h2)
    g["w2"][:] = dh2.T @ h1
    g["b2"][:] = dh2.sum(axis=0)
    dh1 = (dh2 @ v["w2"]) * (1.0 - h1 * h1)
    g["w1"][:] = dh1.T @ x
    g["b1"][:] = dh1.sum(axis=0)
    return loss, grad_flat


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: PolicyParams
    loss_curve: list[float]
    manifest: dict


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for ep in dataset.episodes:
        h.update(json.dumps(ep.header, sort_keys=True).encode())
        h.update(str(len(ep.steps)).encode())
        h.update(json.dumps(ep.steps[0].to_dict(), sort_keys=True).encode())
        h.update(json.dumps(ep.steps[-1].to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def train(dataset: Dataset, config: TrainConfig, variant: str) -> TrainResult:
    """Adam-on-minibatches behavior cloning; deterministic under the seed."""
    x_raw, y_raw = build_training_set(dataset, variant, config)
    mean = x_raw.mean(axis=0)
    # std_floor guards division by zero; scale_floor keeps near-frozen dims
    # from amplifying small closed-loop deviations into saturating inputs
    floor = max(config.std_floor, config.scale_floor)
    std = np.maximum(x_raw.std(axis=0), floor)
    x = normalize(x_raw, mean, std, config.normalized_clip)
    y = y_raw  # raw joint-space targets: scale-weighted MSE favors arm precision

    params = PolicyParams.init(variant, config)
    params.obs_mean = mean
    params.obs_std = std

    rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(7,)))
    m = np.zeros_like(params.flat)
    vv = np.zeros_like(params.flat)
    t = 0
    n = x.shape[0]
    loss_curve = []
    for epoch in range(config.epochs):
        if config.lr_schedule == "cosine":
            lr = config.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / config.epochs))
        else:
            lr = config.lr
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = x[idx]
            if config.obs_noise > 0.0:
                # input-noise augmentation: widens the tube the closed loop
                # may wander in, and drives weights on uninformative dims to 0
                xb = xb + rng.normal(0.0, config.obs_noise, xb.shape)
            loss, grad = loss_and_grad(params, xb, y[idx])
            t += 1
            m = config.beta1 * m + (1.0 - config.beta1) * grad
            vv = config.beta2 * vv + (1.0 - config.beta2) * grad * grad
            mhat = m / (1.0 - config.beta1 ** t)
            vhat = vv / (1.0 - config.beta2 ** t)
            params.flat -= lr * mhat / (np.sqrt(vhat) + config.eps)
            epoch_losses.append(loss)
        loss_curve.append(float(np.mean(epoch_losses)))

    manifest = {
        "config": config.to_dict(),
        "variant": variant,
        "episodes": len(dataset.episodes),
        "samples": int(n),
        "dataset_fingerprint": dataset_fingerprint(dataset),
        "layout_checksum": params.layout_checksum,
        "final_loss": loss_curve[-1],
        "initial_loss": loss_curve[0],
    }
    return TrainResult(params, loss_curve, manifest)


# ---------------------------------------------------------------------------
# rollout / comparison
# ---------------------------------------------------------------------------

@dataclass
class RolloutResult:
    success: bool
    ticks: int
    visibility_trace: list[int]   # per policy step: target visible from the global camera
    pregrasp_visibility: float    # share of pre-attach policy steps with target visible
    final_target_position: np.ndarray


def _observe_for_variant(world: WorldState, ctx: SimContext, variant: str) -> np.ndarray:
    neck, wrist, static = ctx.observe(world)
    if variant == "actuated":
        parts = (world.neck_q, world.arm_q, [world.grip],
                 neck.to_flat(), wrist.to_flat())
        vis = neck.visible[TARGET_ID]
    else:
        parts = (world.arm_q, [world.grip], static.to_flat(), wrist.to_flat())
        vis = static.visible[TARGET_ID]
    return np.concatenate([np.asarray(p, float) for p in parts]), float(vis)


def rollout(params: PolicyParams, task: str, seed: int, variant: str | None = None,
            ctx: SimContext | None = None, max_ticks: int = 3600,
            config: TrainConfig | None = None) -> RolloutResult:
    """Closed-loop chunked execution; the static variant freezes the neck."""
    variant = variant or params.variant
    if variant != params.variant:
        raise ValueError("params were trained for a different variant")
    ctx = ctx or SimContext()
    config = config or TrainConfig(horizon=params.horizon)
    stride = max(1, int(round((1.0 / TICK_DT) / config.subsample_hz)))
    act_d = action_dim(variant)

    world = make_task_scene(task, seed, ctx)
    home_neck = ctx.home_neck_q.copy()
    visibility = []
    attach_seen = False
    pre_vis = [0, 0]
    ticks = 0
    done = False

    while ticks < max_ticks and not done:
        obs_raw, vis = _observe_for_variant(world, ctx, variant)
        visibility.append(int(vis))
        if not attach_seen:
            pre_vis[0] += 1
            pre_vis[1] += int(vis)
        obs = normalize(obs_raw, params.obs_mean, params.obs_std,
                        config.normalized_clip)
        out = forward(params, obs)
        if params.act_mean is not None:
            out = out * params.act_std + params.act_mean
        chunk = out.reshape(params.horizon, act_d)
        for k in range(config.replan_every):
            row = chunk[k]
            # the gripper is bang-bang in the demonstrations; snap the
            # regressed command so crossings stay crisp
            grip_cmd = 1.0 if float(row[-1]) >= 0.5 else 0.0
            if variant == "actuated":
                cmd = Command(row[:5].copy(), row[5:11].copy(), grip_cmd)
            else:
                cmd = Command(home_neck, row[:6].copy(), grip_cmd)
            for _ in range(stride):
                world = step(world, cmd, TICK_DT, ctx)
                ticks += 1
                if world.attached_object == TARGET_ID:
                    attach_seen = True
                if success(world):
                    done = True
                    break
                if ticks >= max_ticks:
                    break
            if done or ticks >= max_ticks:
                break

    return RolloutResult(
        success=success(world),
        ticks=ticks,
        visibility_trace=visibility,
        pregrasp_visibility=(pre_vis[1] / pre_vis[0]) if pre_vis[0] else 0.0,
        final_target_position=world.object_by_id(TARGET_ID).center.copy(),
    )


def goal_points_for_seed(seed: int, tasks, ctx: SimContext) -> dict:
    return {t: make_task_scene(t, seed, ctx).goal.goal_point for t in tasks}


@dataclass
class CompareResult:
    tasks: list[str]
    trials: int
    actuated: dict
    static: dict
    disambiguation: dict

    def rows(self) -> list[dict]:
        return [
            {"task": t,
             "actuated": self.actuated[t],
             "static": self.static[t]}
            for t in self.tasks
        ]


def compare(params_act: PolicyParams, params_stat: PolicyParams,
            tasks=("CfB", "L2Rmod", "CRange"), trials: int = 15,
            ctx: SimContext | None = None, seed_base: int = 10_000,
            config: TrainConfig | None = None) -> CompareResult:
    """Paired evaluation: each trial reuses the same scene seed for both variants.

    Also verifies task disambiguation: a successful rollout must satisfy only
    the matching task's success predicate (goal regions of the other tasks,
    instantiated at the same seed, must not contain the placed target).
    """
    ctx = ctx or SimContext()
    tasks = list(tasks)
    act_rates, stat_rates = {}, {}
    disamb = {"successes": 0, "matched_only": 0}
    for task in tasks:
        a_wins = 0
        s_wins = 0
        for i in range(trials):
            seed = seed_base + i
            res_a = rollout(params_act, task, seed, "actuated", ctx, config=config)
            res_s = rollout(params_stat, task, seed, "static", ctx, config=config)
            a_wins += int(res_a.success)
            s_wins += int(res_s.success)
            goals = goal_points_for_seed(seed, tasks, ctx)
            for res in (res_a, res_s):
                if not res.success:
                    continue
                disamb["successes"] += 1
                radius = make_task_scene(task, seed, ctx).goal.goal_radius
                hits = [
                    t for t in tasks
                    if float(np.linalg.norm(res.final_target_position - goals[t])) <= radius
                ]
                if hits == [task]:
                    disamb["matched_only"] += 1
        act_rates[task] = a_wins / trials
        stat_rates[task] = s_wins / trials
    return CompareResult(tasks, trials, act_rates, stat_rates, disamb)
