"""Top-level JSON configuration: defaults, file overrides, flag overrides.

One structured-text format everywhere: the config can reference chain files by
path, inline chain definitions, and embed custom task scenes that behave like
the built-ins.
"""

from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np

from .kinematics import KinematicChain, Pose, load_chain
from .policy import TrainConfig
from .retarget import RetargetParams
from .simworld import CameraModel, SimContext, TASK_IDS, WorldState, make_task_scene, scene_from_spec

__all__ = [
    "ConfigError",
    "default_config",
    "load_config",
    "merge_config",
    "build_sim_context",
    "build_retarget_params",
    "build_train_config",
    "build_demo_params",
    "resolve_scene",
]


class ConfigError(ValueError):
    """Malformed or wrong-version configuration files."""


def default_config() -> dict:
    return {
        "format_version": 1,
        "server": {
            "host": "127.0.0.1",
            "tcp_port": 7741,
            "ws_port": 7742,
            "task": "L2Rmod",
            "seed": 0,
            "record_dir": "episodes",
        },
        "chains": {"neck": None, "arm": None},
        "retarget": {
            "alpha": 0.6,
            "neck_clamp": 0.25,
            "arm_clamp": 0.5,
            "pinch_min": 0.01,
            "pinch_max": 0.09,
        },
        "sim": {
            "joint_speed": 1.5,
            "grip_speed": 2.0,
            "attach_radius": 0.04,
            "neck_fov_deg": 75.0,
            "static_fov_deg": 160.0,
            "wrist_fov_deg": 87.0,
            "camera_range": 3.0,
            "aspect": 16.0 / 9.0,
        },
        "demo": {"noise_sigma": 0.01, "phase_timeout": 600},
        "train": TrainConfig().to_dict(),
        "scenes": {},
    }


def merge_config(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            out[key] = merge_config(base[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    version = data.get("format_version", 1)
    if version != 1:
        raise ConfigError(f"{path}: unsupported config format_version {version!r}")
    return merge_config(cfg, data)


def _chain_from_entry(entry, fallback) -> KinematicChain:
    if entry is None:
        return fallback()
    if isinstance(entry, str):
        return load_chain(entry)
    if isinstance(entry, dict):
        return KinematicChain.from_dict(entry)
    raise ConfigError(f"chain entry must be null, a path or an inline object, got {type(entry)}")


def build_sim_context(cfg: dict) -> SimContext:
    from .kinematics import default_arm_chain, default_neck_chain

    sim = cfg["sim"]
    aspect = float(sim["aspect"])
    rng = float(sim["camera_range"])
    ctx = SimContext(
        neck_chain=_chain_from_entry(cfg["chains"].get("neck"), default_neck_chain),
        arm_chain=_chain_from_entry(cfg["chains"].get("arm"), default_arm_chain),
        joint_speed=float(sim["joint_speed"]),
        grip_speed=float(sim["grip_speed"]),
        attach_radius=float(sim["attach_radius"]),
        neck_cam=CameraModel.from_diagonal(math.radians(float(sim["neck_fov_deg"])), aspect, rng),
        static_cam=CameraModel.from_diagonal(math.radians(float(sim["static_fov_deg"])), aspect, rng),
        wrist_cam=CameraModel.from_diagonal(math.radians(float(sim["wrist_fov_deg"])), aspect, rng),
    )
    return ctx


def build_retarget_params(cfg: dict) -> RetargetParams:
    r = cfg["retarget"]
    return RetargetParams(
        alpha=float(r["alpha"]),
        neck_clamp=float(r["neck_clamp"]),
        arm_clamp=float(r["arm_clamp"]),
        pinch_min=float(r["pinch_min"]),
        pinch_max=float(r["pinch_max"]),
    )


def build_train_config(cfg: dict, **overrides) -> TrainConfig:
    fields = dict(cfg["train"])
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**fields)


def build_demo_params(cfg: dict):
    from .demoscript import DemoParams

    d = cfg["demo"]
    return DemoParams(noise_sigma=float(d["noise_sigma"]),
                      phase_timeout=int(d["phase_timeout"]))


def resolve_scene(cfg: dict, task: str, seed: int, ctx: SimContext) -> WorldState:
    """Built-in task or a scene embedded in the config."""
    if task in TASK_IDS:
        return make_task_scene(task, seed, ctx)
    scenes = cfg.get("scenes", {})
    if task in scenes:
        return scene_from_spec(scenes[task], seed, ctx, task_hint=task)
    raise ConfigError(f"unknown task {task!r}: not built-in and not in config scenes")
