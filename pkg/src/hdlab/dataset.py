"""Episode recording, bit-exact persistence and mixed-corpus assembly.

One episode is one .hdse file: magic "HDSE", a little-endian u32 version,
a u32 header length, a UTF-8 JSON header, then all frames as contiguous
little-endian float32 in the order grid, proprioception, action. Files are
written atomically (temp file + rename); failed expert rollouts are never
persisted.
"""

from __future__ import annotations

import json
import os
import statistics
import tempfile
from dataclasses import dataclass

import numpy as np

from . import expert, sim, spaces

MAGIC = b"HDSE"
VERSION = 1

FRAME_FLOATS = sim.GRID_CHANNELS * sim.GRID_SIZE * sim.GRID_SIZE + 6 + 4


class FormatError(ValueError):
    """Base class for .hdse parsing failures."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedError(FormatError):
    def __init__(self, frame_index):
        self.frame_index = frame_index
        super().__init__(f"file truncated at frame {frame_index}")


class DimMismatchError(FormatError):
    pass


class ExpertFailureError(RuntimeError):
    """The scripted expert hit its step cap; nothing was saved."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass
class Episode:
    task_id: str
    mode: str                 # "naive" | "hd"
    seed: int
    space_index: int          # -1 for naive episodes
    success: bool
    grids: np.ndarray         # (F, 6, 32, 32) float32
    props: np.ndarray         # (F, 6) float32
    actions: np.ndarray       # (F, 4) float32
    space_header: dict | None = None
    source: str = "scripted"

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("episode must hold at least one frame")
        if (self.mode == "hd") != (self.space_index >= 0):
            raise ValueError("mode=hd iff space_index >= 0")
        if self.grids.shape[1:] != (sim.GRID_CHANNELS, sim.GRID_SIZE, sim.GRID_SIZE):
            raise DimMismatchError(f"bad grid dims {self.grids.shape[1:]}")
        if self.props.shape != (self.frame_count, 6):
            raise DimMismatchError("bad proprio dims")
        if self.actions.shape != (self.frame_count, 4):
            raise DimMismatchError("bad action dims")

    @property
    def frame_count(self) -> int:
        return self.grids.shape[0]

    def header(self) -> dict:
        h = {
            "task_id": self.task_id,
            "mode": self.mode,
            "seed": self.seed,
            "space_index": self.space_index,
            "frame_count": self.frame_count,
            "grid_dims": [sim.GRID_CHANNELS, sim.GRID_SIZE, sim.GRID_SIZE],
            "proprio_dim": 6,
            "action_dim": 4,
            "control_hz": sim.CONTROL_HZ,
            "success": self.success,
            "source": self.source,
        }
        if self.space_header is not None:
            h["space"] = self.space_header
        return h

    def equals(self, other: "Episode") -> bool:
        return (self.header() == other.header()
                and np.array_equal(self.grids, other.grids)
                and np.array_equal(self.props, other.props)
                and np.array_equal(self.actions, other.actions))


@dataclass(frozen=True)
class MixSpec:
    naive_count: int
    hd_count: int

    def __post_init__(self):
        if self.naive_count < 0 or self.hd_count < 0:
            raise ValueError("episode counts must be non-negative")
        if self.naive_count + self.hd_count < 1:
            raise ValueError("mix must select at least one episode")

    def label(self) -> str:
        return f"N{self.naive_count}+H{self.hd_count}"


def _frames_to_arrays(frames):
    grids = np.stack([f[0] for f in frames]).astype(np.float32)
    props = np.stack([f[1] for f in frames]).astype(np.float32)
    actions = np.stack([f[2] for f in frames]).astype(np.float32)
    return grids, props, actions


def record_episode(task_id: str, mode: str, seed: int,
                   belt_speed: float | None = None,
                   space_index: int | None = None) -> Episode:
    """Run the expert once and package the demonstration.

    Naive mode records the full task from the home pose; hd mode samples a
    start inside the requested atomic space and records that subtask only.
    """
    if mode not in ("naive", "hd"):
        raise ValueError(f"unknown mode {mode!r}")
    state = sim.init_task(task_id, seed, belt_speed)
    if mode == "naive":
        record = expert.expert_rollout(state, None, sim.HORIZON_CAPS[task_id])
        space_header = None
        space_index = -1
    else:
        task_spaces = spaces.segment_task(task_id)
        if space_index is None or not 0 <= space_index < len(task_spaces):
            raise ValueError(f"hd mode needs a space index in "
                             f"[0, {len(task_spaces)}) for {task_id}")
        space = task_spaces[space_index]
        if task_id == "pens":
            state = spaces.preplace_pens(state, seed % sim.PEN_COUNT)
        rng = np.random.default_rng([seed, space_index])
        closed = bool(rng.uniform() < spaces.RECOVERY_START_PROB)
        if closed:
            successor = (task_spaces[space_index + 1]
                         if space_index + 1 < len(task_spaces) else None)
            pose = spaces.sample_recovery_start(space, successor, state, rng)
        else:
            pose = spaces.sample_start(space, state, rng)
        state = spaces.place_start(state, space, pose, closed_gripper=closed)
        record = expert.expert_rollout(state, space, sim.ATOMIC_CAP)
        space_header = space.to_header()
    if not record.success:
        raise ExpertFailureError(
            f"expert failed on {task_id}/{mode} seed={seed} "
            f"space={space_index} after {record.frame_count} frames", record)
    grids, props, actions = _frames_to_arrays(record.frames)
    return Episode(task_id, mode, seed, space_index, True,
                   grids, props, actions, space_header)


def episode_filename(episode: Episode) -> str:
    tag = "naive" if episode.mode == "naive" else f"hd{episode.space_index}"
    return f"episode_{episode.seed}_{tag}.hdse"


def write_episode(episode: Episode, path: str) -> None:
    header = json.dumps(episode.header(), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    blob = np.concatenate(
        [episode.grids.reshape(episode.frame_count, -1),
         episode.props, episode.actions], axis=1).astype("<f4").tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(np.uint32(VERSION).tobytes())
            fh.write(np.uint32(len(header)).tobytes())
            fh.write(header)
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_header(path: str) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r} in {path}")
        version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        if version != VERSION:
            raise VersionMismatchError(f"unsupported version {version}")
        hlen = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        raw = fh.read(hlen)
        if len(raw) != hlen:
            raise TruncatedError(0)
        return json.loads(raw.decode("utf-8"))


def read_episode(path: str) -> Episode:
    header = read_header(path)
    dims = header["grid_dims"]
    if dims != [sim.GRID_CHANNELS, sim.GRID_SIZE, sim.GRID_SIZE]:
        raise DimMismatchError(f"unexpected grid dims {dims}")
    count = header["frame_count"]
    with open(path, "rb") as fh:
        hlen = int(np.frombuffer(fh.read(12)[8:], dtype="<u4")[0])
        fh.seek(12 + hlen)
        blob = fh.read()
    floats = np.frombuffer(blob, dtype="<f4")
    if floats.size != count * FRAME_FLOATS:
        raise TruncatedError(floats.size // FRAME_FLOATS)
    frames = floats.reshape(count, FRAME_FLOATS)
    gsize = sim.GRID_CHANNELS * sim.GRID_SIZE * sim.GRID_SIZE
    grids = frames[:, :gsize].reshape(count, sim.GRID_CHANNELS,
                                      sim.GRID_SIZE, sim.GRID_SIZE).copy()
    props = frames[:, gsize:gsize + 6].copy()
    actions = frames[:, gsize + 6:].copy()
    return Episode(header["task_id"], header["mode"], header["seed"],
                   header["space_index"], header["success"],
                   grids, props, actions, header.get("space"),
                   header.get("source", "scripted"))


@dataclass
class DatasetHandle:
    directory: str
    manifest: dict

    @property
    def episode_paths(self):
        return [os.path.join(self.directory, rel)
                for rel in self.manifest["episodes"]]

    def load_episodes(self):
        return [read_episode(p) for p in self.episode_paths]

    def save_manifest(self, path: str) -> None:
        payload = json.dumps(self.manifest, sort_keys=True, indent=2)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)

    @staticmethod
    def from_manifest(path: str) -> "DatasetHandle":
        with open(path) as fh:
            manifest = json.load(fh)
        return DatasetHandle(manifest["directory"], manifest)


def build_mix(directory: str, spec: MixSpec, seed: int) -> DatasetHandle:
    """Select a seeded mixed corpus of naive and hd episodes.

    Hd selection is balanced across space indices with the remainder going
    to the lowest indices; selection is without replacement and
    deterministic per (directory contents, spec, seed).
    """
    files = sorted(f for f in os.listdir(directory) if f.endswith(".hdse"))
    naive_files = []
    hd_files: dict = {}
    for name in files:
        header = read_header(os.path.join(directory, name))
        if header["mode"] == "naive":
            naive_files.append(name)
        else:
            hd_files.setdefault(header["space_index"], []).append(name)
    rng = np.random.default_rng(seed)
    if len(naive_files) < spec.naive_count:
        raise ValueError(f"need {spec.naive_count} naive episodes, "
                         f"found {len(naive_files)}")
    chosen_naive = sorted(
        rng.choice(naive_files, size=spec.naive_count, replace=False).tolist()
    ) if spec.naive_count else []

    total_hd = sum(len(v) for v in hd_files.values())
    if total_hd < spec.hd_count:
        raise ValueError(f"need {spec.hd_count} hd episodes, found {total_hd}")
    chosen_hd = []
    if spec.hd_count:
        indices = sorted(hd_files)
        base, rem = divmod(spec.hd_count, len(indices))
        for rank, idx in enumerate(indices):
            quota = base + (1 if rank < rem else 0)
            pool = sorted(hd_files[idx])
            if len(pool) < quota:
                raise ValueError(f"need {quota} hd episodes for space {idx}, "
                                 f"found {len(pool)}")
            chosen_hd.extend(sorted(
                rng.choice(pool, size=quota, replace=False).tolist()))
    manifest = {
        "directory": os.path.abspath(directory),
        "spec": {"naive": spec.naive_count, "hd": spec.hd_count},
        "seed": seed,
        "episodes": chosen_naive + chosen_hd,
    }
    return DatasetHandle(os.path.abspath(directory), manifest)


def frame_stats(handle: DatasetHandle) -> dict:
    """Per-mode mean/median/total frame counts over the selected corpus."""
    paths = handle.episode_paths
    if not paths:
        raise ValueError("empty dataset")
    counts = {"naive": [], "hd": []}
    for p in paths:
        header = read_header(p)
        counts[header["mode"]].append(header["frame_count"])
    stats = {}
    for mode, values in counts.items():
        if not values:
            stats[mode] = None
            continue
        stats[mode] = {
            "episodes": len(values),
            "mean_frames": sum(values) / len(values),
            "median_frames": float(statistics.median(values)),
            "total_frames": int(sum(values)),
        }
    return stats
