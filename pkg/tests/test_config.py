import json
import math

import numpy as np
import pytest

from neckbench.config import (
    ConfigError,
    build_retarget_params,
    build_sim_context,
    build_train_config,
    default_config,
    load_config,
    merge_config,
    resolve_scene,
)
from neckbench.kinematics import default_neck_chain, save_chain


def test_defaults_load_without_file():
    cfg = load_config(None)
    ctx = build_sim_context(cfg)
    assert ctx.neck_chain.n == 5
    assert ctx.arm_chain.n == 6
    assert math.isclose(ctx.static_cam.h_fov + ctx.static_cam.v_fov,
                        build_sim_context(default_config()).static_cam.h_fov
                        + build_sim_context(default_config()).static_cam.v_fov)


def test_merge_nested_override():
    cfg = merge_config(default_config(), {"retarget": {"alpha": 0.9}})
    assert cfg["retarget"]["alpha"] == 0.9
    assert cfg["retarget"]["neck_clamp"] == 0.25  # untouched sibling


def test_file_overrides_and_flags(tmp_path):
    path = tmp_path / "conf.json"
    path.write_text(json.dumps({"format_version": 1, "train": {"epochs": 7}}))
    cfg = load_config(str(path))
    tc = build_train_config(cfg)
    assert tc.epochs == 7
    tc2 = build_train_config(cfg, epochs=3)
    assert tc2.epochs == 3


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "conf.json"
    path.write_text(json.dumps({"format_version": 9}))
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_chain_by_path_and_inline(tmp_path):
    chain_path = tmp_path / "neck.chain.json"
    save_chain(default_neck_chain(), chain_path)
    cfg = merge_config(default_config(), {"chains": {"neck": str(chain_path)}})
    ctx = build_sim_context(cfg)
    assert ctx.neck_chain.n == 5
    inline = default_neck_chain().to_dict()
    cfg = merge_config(default_config(), {"chains": {"neck": inline}})
    assert build_sim_context(cfg).neck_chain.n == 5


def test_retarget_params_from_config():
    cfg = merge_config(default_config(), {"retarget": {"pinch_max": 0.12}})
    rp = build_retarget_params(cfg)
    assert rp.pinch_max == 0.12
    assert rp.alpha == 0.6


def test_custom_scene_resolution():
    scene = {
        "target": {"center": (0.4, 0.0, 0.75), "half_extents": (0.02, 0.02, 0.03)},
        "goal_marker": {"center": (0.5, -0.2, 0.8), "half_extents": (0.04, 0.04, 0.04)},
        "distractors_y": (0.2, -0.2),
        "occluders": [],
    }
    cfg = merge_config(default_config(), {"scenes": {"mytask": scene}})
    ctx = build_sim_context(cfg)
    world = resolve_scene(cfg, "mytask", 3, ctx)
    assert world.task_hint == "mytask"
    world_b = resolve_scene(cfg, "CfB", 3, ctx)
    assert world_b.task_hint == "CfB"
    with pytest.raises(ConfigError):
        resolve_scene(cfg, "nope", 0, ctx)
