import json
import os

import numpy as np
import pytest

from neckbench.demoscript import generate_episode
from neckbench.recorder import (
    Dataset,
    Episode,
    EpisodeBuilder,
    EpisodeFormatError,
    RecorderError,
    ReplayMismatch,
    StepRecord,
    load_episode,
    merge_datasets,
    read_manifest,
    replay,
    save_episode,
    verify_replay,
    write_manifest,
)
from neckbench.simworld import CameraFeatures, Command, SimContext, make_task_scene

CTX = SimContext()


def make_step(tick, grip=1.0):
    feats = CameraFeatures(np.zeros(4), np.zeros(4), np.zeros(4), np.zeros(4))
    return StepRecord(
        tick=tick,
        neck_q=[0.1 * tick] * 5,
        arm_q=[0.2 * tick] * 6,
        grip=grip,
        cmd_neck_q=[0.0] * 5,
        cmd_arm_q=[0.0] * 6,
        cmd_grip=1.0,
        neck_cam=feats,
        wrist_cam=feats,
        static_cam=feats,
    )


def small_episode(n=3):
    b = EpisodeBuilder(CTX, seed=7, task_hint="CRange")
    for t in range(n):
        b.record_step(make_step(t))
    return b.finalize(True)


def episodes_equal(a: Episode, b: Episode) -> bool:
    if a.header != b.header or a.outcome != b.outcome or len(a.steps) != len(b.steps):
        return False
    return all(x.to_dict() == y.to_dict() for x, y in zip(a.steps, b.steps))


# ---------------------------------------------------------------------------
# builder
# ---------------------------------------------------------------------------

def test_builder_contiguous_ticks_ok():
    ep = small_episode(3)
    assert [s.tick for s in ep.steps] == [0, 1, 2]
    assert ep.outcome is True


def test_builder_tick_gap_rejected():
    b = EpisodeBuilder(CTX, seed=0, task_hint=None)
    b.record_step(make_step(0))
    with pytest.raises(RecorderError):
        b.record_step(make_step(2))


def test_empty_episode_rejected():
    b = EpisodeBuilder(CTX, seed=0, task_hint=None)
    with pytest.raises(RecorderError):
        b.finalize(False)


def test_step_record_length_validation():
    with pytest.raises(RecorderError):
        StepRecord(0, [0.0] * 4, [0.0] * 6, 1.0, [0.0] * 5, [0.0] * 6, 1.0,
                   None, None, None)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    ep = small_episode(5)
    p = tmp_path / "e.ep.jsonl"
    save_episode(ep, p)
    loaded = load_episode(p)
    assert episodes_equal(ep, loaded)


def test_full_precision_floats_survive(tmp_path):
    b = EpisodeBuilder(CTX, seed=1, task_hint="CfB")
    s = make_step(0)
    odd = StepRecord(
        tick=0,
        neck_q=[0.1 + 0.2, 1e-17, np.nextafter(1.0, 2.0), -0.0, 3.141592653589793],
        arm_q=s.arm_q, grip=0.30000000000000004,
        cmd_neck_q=s.cmd_neck_q, cmd_arm_q=s.cmd_arm_q, cmd_grip=1.0,
        neck_cam=s.neck_cam, wrist_cam=s.wrist_cam, static_cam=s.static_cam,
    )
    b.record_step(odd)
    ep = b.finalize(False)
    p = "/tmp/precision.ep.jsonl"
    save_episode(ep, p)
    loaded = load_episode(p)
    assert loaded.steps[0].neck_q == odd.neck_q
    assert loaded.steps[0].grip == odd.grip


def test_corrupted_line_names_line_number(tmp_path):
    ep = small_episode(6)
    p = tmp_path / "bad.ep.jsonl"
    save_episode(ep, p)
    lines = p.read_text().splitlines()
    lines[4] = lines[4][:20] + "#corrupt#"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(EpisodeFormatError, match="line 5"):
        load_episode(p)


def test_version_mismatch_rejected(tmp_path):
    ep = small_episode(3)
    p = tmp_path / "v.ep.jsonl"
    save_episode(ep, p)
    lines = p.read_text().splitlines()
    header = json.loads(lines[0])
    header["format_version"] = 99
    lines[0] = json.dumps(header)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(EpisodeFormatError):
        load_episode(p)


def test_golden_fixture_loads_exactly():
    path = os.path.join(os.path.dirname(__file__), "data", "golden.ep.jsonl")
    ep = load_episode(path)
    assert ep.header["seed"] == 42
    assert ep.header["task_hint"] == "CfB"
    assert ep.outcome is True
    assert len(ep.steps) == 2
    s0 = ep.steps[0]
    assert s0.neck_q == [0.0, 0.1, -0.2, 0.3, 0.07000000000000001]
    assert s0.grip == 1.0
    assert ep.steps[1].grip == 0.9666666666666667
    assert s0.neck_cam.visible[0] == 1.0
    assert s0.neck_cam.u[0] == -0.25
    assert s0.static_cam.u[0] == 0.3333333333333333


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------

def test_merge_strips_hints_preserves_order(tmp_path):
    paths = []
    for i, task in enumerate(("CfB", "CRange", "L2Rmod")):
        b = EpisodeBuilder(CTX, seed=i, task_hint=task)
        b.record_step(make_step(0))
        b.record_step(make_step(1))
        p = tmp_path / f"{i}.ep.jsonl"
        save_episode(b.finalize(True), p)
        paths.append(p)
    ds = merge_datasets(paths)
    assert len(ds) == 3
    assert all(ep.task_hint is None for ep in ds.episodes)
    assert [ep.seed for ep in ds.episodes] == [0, 1, 2]
    # steps keep their order
    assert [s.tick for s in ds.episodes[0].steps] == [0, 1]


def test_merge_empty():
    assert len(merge_datasets([])) == 0


def test_merge_then_split_by_seed_recovers_partition(tmp_path):
    seeds_by_task = {"CfB": [10, 11], "CRange": [20, 21], "L2Rmod": [30]}
    paths = []
    for task, seeds in seeds_by_task.items():
        for s in seeds:
            b = EpisodeBuilder(CTX, seed=s, task_hint=task)
            b.record_step(make_step(0))
            p = tmp_path / f"{task}_{s}.ep.jsonl"
            save_episode(b.finalize(True), p)
            paths.append(p)
    ds = merge_datasets(paths)
    got = sorted(ep.seed for ep in ds.episodes)
    assert got == [10, 11, 20, 21, 30]
    # seeds recover the original partition
    for task, seeds in seeds_by_task.items():
        recovered = [ep for ep in ds.episodes if ep.seed in seeds]
        assert len(recovered) == len(seeds)


def test_manifest_round_trip_and_checksum(tmp_path):
    ep = small_episode(2)
    p = tmp_path / "m.ep.jsonl"
    save_episode(ep, p)
    manifest = tmp_path / "manifest.json"
    write_manifest([p], manifest)
    assert read_manifest(manifest) == [str(p)]
    p.write_text(p.read_text() + " ")
    with pytest.raises(EpisodeFormatError):
        read_manifest(manifest)


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_scripted_episode_replays_bit_exactly():
    ep, world = generate_episode("CRange", 5, CTX)
    assert ep.outcome
    verify_replay(ep, CTX)  # raises on any mismatch
    states = replay(ep, CTX)
    assert len(states) == len(ep.steps)


def test_replay_round_trips_through_file(tmp_path):
    ep, _ = generate_episode("L2Rmod", 2, CTX)
    p = tmp_path / "rt.ep.jsonl"
    save_episode(ep, p)
    verify_replay(load_episode(p), CTX)


def test_replay_wrong_checksum_rejected():
    ep, _ = generate_episode("CRange", 6, CTX)
    header = dict(ep.header)
    header["chain_checksums"] = {"neck": "f" * 64, "arm": "f" * 64}
    bad = Episode(header, ep.steps, ep.outcome)
    with pytest.raises(EpisodeFormatError):
        verify_replay(bad, CTX)


def test_replay_single_step_episode():
    world = make_task_scene("CRange", 8, CTX)
    b = EpisodeBuilder(CTX, seed=8, task_hint="CRange")
    cmd = Command(world.neck_q.copy(), world.arm_q.copy(), world.grip)
    b.record_world(world, cmd)
    ep = b.finalize(False)
    states = replay(ep, CTX)
    assert len(states) == 1
    verify_replay(ep, CTX)


def test_replay_detects_tampered_state():
    ep, _ = generate_episode("CRange", 9, CTX)
    steps = list(ep.steps)
    s = steps[len(steps) // 2]
    steps[len(steps) // 2] = StepRecord(
        tick=s.tick, neck_q=[v + 1e-9 for v in s.neck_q], arm_q=s.arm_q,
        grip=s.grip, cmd_neck_q=s.cmd_neck_q, cmd_arm_q=s.cmd_arm_q,
        cmd_grip=s.cmd_grip, neck_cam=s.neck_cam, wrist_cam=s.wrist_cam,
        static_cam=s.static_cam,
    )
    tampered = Episode(ep.header, tuple(steps), ep.outcome)
    with pytest.raises(ReplayMismatch):
        verify_replay(tampered, CTX)
