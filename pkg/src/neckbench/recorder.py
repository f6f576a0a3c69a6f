"""Episode recording, line-delimited persistence, merged datasets, replay.

An episode file is JSON-lines: header object, one step object per line, one
outcome object last.  Floats are serialized with full round-trip precision so
a loaded episode is equal to the recorded one and replay is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from dataclasses import replace as dc_replace

from .kinematics import chain_checksum
from .simworld import CameraFeatures, Command, SimContext, WorldState, make_task_scene, step

__all__ = [
    "StepRecord",
    "Episode",
    "Dataset",
    "EpisodeBuilder",
    "RecorderError",
    "EpisodeFormatError",
    "ReplayMismatch",
    "save_episode",
    "load_episode",
    "merge_datasets",
    "replay",
    "verify_replay",
    "write_manifest",
    "read_manifest",
    "file_sha256",
]

FORMAT_VERSION = 1


class RecorderError(ValueError):
    """Recording contract violations (tick gaps, empty episodes)."""


class EpisodeFormatError(ValueError):
    """Unreadable or wrong-version episode files."""


class ReplayMismatch(RuntimeError):
    """Replay diverged from the recorded states."""


@dataclass(frozen=True)
class StepRecord:
    tick: int
    neck_q: list[float]
    arm_q: list[float]
    grip: float
    cmd_neck_q: list[float]
    cmd_arm_q: list[float]
    cmd_grip: float
    neck_cam: CameraFeatures
    wrist_cam: CameraFeatures
    static_cam: CameraFeatures

    def __post_init__(self):
        if len(self.neck_q) != 5 or len(self.cmd_neck_q) != 5:
            raise RecorderError("neck_q arrays must have length 5")
        if len(self.arm_q) != 6 or len(self.cmd_arm_q) != 6:
            raise RecorderError("arm_q arrays must have length 6")

    def to_dict(self) -> dict:
        return {
            "tick": self.tick,
            "neck_q": [float(v) for v in self.neck_q],
            "arm_q": [float(v) for v in self.arm_q],
            "grip": float(self.grip),
            "cmd_neck_q": [float(v) for v in self.cmd_neck_q],
            "cmd_arm_q": [float(v) for v in self.cmd_arm_q],
            "cmd_grip": float(self.cmd_grip),
            "neck_cam": self.neck_cam.to_flat(),
            "wrist_cam": self.wrist_cam.to_flat(),
            "static_cam": self.static_cam.to_flat(),
        }

    @staticmethod
    def from_dict(d: dict) -> "StepRecord":
        return StepRecord(
            tick=int(d["tick"]),
            neck_q=[float(v) for v in d["neck_q"]],
            arm_q=[float(v) for v in d["arm_q"]],
            grip=float(d["grip"]),
            cmd_neck_q=[float(v) for v in d["cmd_neck_q"]],
            cmd_arm_q=[float(v) for v in d["cmd_arm_q"]],
            cmd_grip=float(d["cmd_grip"]),
            neck_cam=CameraFeatures.from_flat(d["neck_cam"]),
            wrist_cam=CameraFeatures.from_flat(d["wrist_cam"]),
            static_cam=CameraFeatures.from_flat(d["static_cam"]),
        )

    @staticmethod
    def from_world(world: WorldState, cmd: Command, ctx: SimContext) -> "StepRecord":
        neck, wrist, static = ctx.observe(world)
        return StepRecord(
            tick=world.tick,
            neck_q=[float(v) for v in world.neck_q],
            arm_q=[float(v) for v in world.arm_q],
            grip=float(world.grip),
            cmd_neck_q=[float(v) for v in cmd.neck_q_target],
            cmd_arm_q=[float(v) for v in cmd.arm_q_target],
            cmd_grip=float(cmd.grip_target),
            neck_cam=neck,
            wrist_cam=wrist,
            static_cam=static,
        )


@dataclass(frozen=True)
class Episode:
    header: dict
    steps: tuple[StepRecord, ...]
    outcome: bool

    def __post_init__(self):
        if not self.steps:
            raise RecorderError("episode must contain at least one step")

    @property
    def task_hint(self):
        return self.header.get("task_hint")

    @property
    def seed(self) -> int:
        return int(self.header["seed"])


@dataclass(frozen=True)
class Dataset:
    """Merged episodes; merging strips task hints and never reorders steps."""

    episodes: tuple[Episode, ...] = ()

    def __len__(self) -> int:
        return len(self.episodes)


class EpisodeBuilder:
    """Append-only step collector; enforces contiguous ticks, seals on finalize.

    Recording may begin mid-session: `initial_world` snapshots the state at
    the first step so replay can resume without the pre-recording history.
    """

    def __init__(self, ctx: SimContext, seed: int, task_hint: str | None,
                 control_rate_hz: float = 60.0,
                 initial_world: WorldState | None = None):
        self._ctx = ctx
        self._steps: list[StepRecord] = []
        self._header = {
            "format_version": FORMAT_VERSION,
            "task_hint": task_hint,
            "seed": int(seed),
            "control_rate_hz": control_rate_hz,
            "chain_checksums": {
                "neck": chain_checksum(ctx.neck_chain),
                "arm": chain_checksum(ctx.arm_chain),
            },
        }
        if initial_world is not None:
            self._header["initial_state"] = {
                "tick": initial_world.tick,
                "neck_q": [float(v) for v in initial_world.neck_q],
                "arm_q": [float(v) for v in initial_world.arm_q],
                "grip": float(initial_world.grip),
                "attached_object": initial_world.attached_object,
                "objects": [{"id": o.id, "center": [float(v) for v in o.center]}
                            for o in initial_world.objects],
            }

    def record_step(self, record: StepRecord) -> None:
        if self._steps and record.tick != self._steps[-1].tick + 1:
            raise RecorderError(
                f"tick gap: expected {self._steps[-1].tick + 1}, got {record.tick}"
            )
        self._steps.append(record)

    def record_world(self, world: WorldState, cmd: Command) -> None:
        self.record_step(StepRecord.from_world(world, cmd, self._ctx))

    def __len__(self) -> int:
        return len(self._steps)

    def finalize(self, outcome: bool) -> Episode:
        return Episode(dict(self._header), tuple(self._steps), bool(outcome))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_episode(episode: Episode, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(episode.header, sort_keys=True) + "\n")
        for s in episode.steps:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
        fh.write(json.dumps({"outcome": {"success": episode.outcome}}) + "\n")


def load_episode(path) -> Episode:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 3:
        raise EpisodeFormatError(f"{path}: episode file needs header, steps and outcome")

    def parse(idx: int) -> dict:
        try:
            obj = json.loads(lines[idx])
        except json.JSONDecodeError as exc:
            raise EpisodeFormatError(f"{path}: line {idx + 1}: {exc}") from exc
        if not isinstance(obj, dict):
            raise EpisodeFormatError(f"{path}: line {idx + 1}: expected an object")
        return obj

    header = parse(0)
    if header.get("format_version") != FORMAT_VERSION:
        raise EpisodeFormatError(
            f"{path}: unsupported format_version {header.get('format_version')!r}"
        )
    outcome_obj = parse(len(lines) - 1)
    if "outcome" not in outcome_obj:
        raise EpisodeFormatError(f"{path}: last line must be the outcome object")
    steps = []
    for i in range(1, len(lines) - 1):
        d = parse(i)
        try:
            steps.append(StepRecord.from_dict(d))
        except (KeyError, TypeError, RecorderError) as exc:
            raise EpisodeFormatError(f"{path}: line {i + 1}: bad step record: {exc}") from exc
    return Episode(header, tuple(steps), bool(outcome_obj["outcome"]["success"]))


def merge_datasets(paths) -> Dataset:
    """Load and concatenate episode files, stripping task hints.

    Episode order is input order; steps within an episode keep their order.
    """
    episodes = []
    for p in paths:
        ep = load_episode(p)
        header = dict(ep.header)
        header["task_hint"] = None
        episodes.append(Episode(header, ep.steps, ep.outcome))
    return Dataset(tuple(episodes))


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(episode_paths, manifest_path) -> None:
    base = os.path.dirname(os.path.abspath(manifest_path))
    entries = [
        {"path": os.path.relpath(os.path.abspath(p), base), "sha256": file_sha256(p)}
        for p in episode_paths
    ]
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump({"format_version": FORMAT_VERSION, "episodes": entries}, fh, indent=2)
        fh.write("\n")


def read_manifest(manifest_path, verify_checksums: bool = True) -> list[str]:
    with open(manifest_path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("format_version") != FORMAT_VERSION:
        raise EpisodeFormatError(f"{manifest_path}: unsupported manifest version")
    base = os.path.dirname(os.path.abspath(manifest_path))
    paths = []
    for entry in data["episodes"]:
        p = os.path.join(base, entry["path"])
        if verify_checksums and file_sha256(p) != entry["sha256"]:
            raise EpisodeFormatError(f"{manifest_path}: checksum mismatch for {entry['path']}")
        paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def _initial_world(episode: Episode, ctx: SimContext) -> WorldState:
    world = make_task_scene(episode.task_hint, episode.seed, ctx)
    init = episode.header.get("initial_state")
    if init is None:
        return world
    centers = {int(o["id"]): np.array(o["center"], float) for o in init["objects"]}
    objects = tuple(dc_replace(o, center=centers[o.id]) for o in world.objects)
    return dc_replace(
        world,
        neck_q=np.array(init["neck_q"], float),
        arm_q=np.array(init["arm_q"], float),
        grip=float(init["grip"]),
        attached_object=init["attached_object"],
        objects=objects,
        tick=int(init["tick"]),
    )


def _check_chains(episode: Episode, ctx: SimContext) -> None:
    sums = episode.header.get("chain_checksums", {})
    if sums.get("neck") != chain_checksum(ctx.neck_chain) or \
            sums.get("arm") != chain_checksum(ctx.arm_chain):
        raise EpisodeFormatError("episode chain checksums do not match this context")


def replay(episode: Episode, ctx: SimContext) -> list[WorldState]:
    """Re-simulate the recorded commands from the recorded scene seed.

    Returns the world after each recorded command; on the same build this is
    bit-identical to the recorded joint states.
    """
    _check_chains(episode, ctx)
    if episode.task_hint is None:
        raise EpisodeFormatError("cannot replay an episode without a task hint")
    world = _initial_world(episode, ctx)
    dt = 1.0 / float(episode.header["control_rate_hz"])
    states = []
    for s in episode.steps:
        cmd = Command(np.array(s.cmd_neck_q), np.array(s.cmd_arm_q), s.cmd_grip)
        world = step(world, cmd, dt, ctx)
        states.append(world)
    return states


def verify_replay(episode: Episode, ctx: SimContext) -> None:
    """Raise ReplayMismatch unless replay reproduces recorded states exactly."""
    _check_chains(episode, ctx)
    if episode.task_hint is None:
        raise EpisodeFormatError("cannot verify an episode without a task hint")
    world = _initial_world(episode, ctx)
    dt = 1.0 / float(episode.header["control_rate_hz"])
    for i, s in enumerate(episode.steps):
        rec_neck = np.array(s.neck_q)
        rec_arm = np.array(s.arm_q)
        if world.tick != s.tick or not (
            np.array_equal(world.neck_q, rec_neck)
            and np.array_equal(world.arm_q, rec_arm)
            and world.grip == s.grip
        ):
            raise ReplayMismatch(f"state mismatch at step {i} (tick {s.tick})")
        neck, wrist, static = ctx.observe(world)
        for got, want, name in (
            (neck, s.neck_cam, "neck_cam"),
            (wrist, s.wrist_cam, "wrist_cam"),
            (static, s.static_cam, "static_cam"),
        ):
            if got.to_flat() != want.to_flat():
                raise ReplayMismatch(f"{name} mismatch at step {i} (tick {s.tick})")
        cmd = Command(np.array(s.cmd_neck_q), np.array(s.cmd_arm_q), s.cmd_grip)
        world = step(world, cmd, dt, ctx)
