"""Seeded optimization loop mapping a mixed corpus to a trained policy.

Training samples a batch by first drawing episodes uniformly and then one
frame uniformly within each drawn episode, builds K-step action chunks
forward from each frame (tail chunks repeat the final action with the
valid mask cleared), applies the zero-mask augmentation per sample, and
takes clipped Adam steps. Episode-first sampling keeps short hierarchical
episodes from being drowned out by long naive trajectories in mixed
corpora; plain frame-uniform sampling remains available via
TrainConfig.sampling. The whole loop is deterministic per (manifest,
config).
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import policy
from .dataset import DatasetHandle
from .policy import ArchConfig, MaskConfig, PolicyParams

CHECKPOINT_MAGIC = b"HDCP"
CHECKPOINT_VERSION = 1
LOG_EVERY = 100

class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 20_000
    batch_size: int = 64
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    mask: MaskConfig | None = field(default_factory=MaskConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    sampling: str = "episode-uniform"  # or "frame-uniform"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("steps and batch size must be >= 1, lr > 0")
        if self.sampling not in ("episode-uniform", "frame-uniform"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    def digest(self) -> str:
        payload = {
            "steps": self.steps, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "adam": [self.adam_beta1, self.adam_beta2, self.adam_eps],
            "grad_clip": self.grad_clip, "seed": self.seed,
            "sampling": self.sampling,
            "mask": None if self.mask is None else [
                self.mask.apply_probability, self.mask.area_fraction,
                list(self.mask.patch_size_choices)],
            "arch": self.arch.to_json(),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FrameStore:
    """All frames of a corpus, flattened for uniform sampling."""
    grids: np.ndarray     # (N, C, G, G) uint8; grids are binary
    props: np.ndarray     # (N, 6) float32
    actions: np.ndarray   # (N, 4) float32
    last_index: np.ndarray  # (N,) index of the final frame of each episode
    ep_start: np.ndarray    # (E,) first frame index of each episode
    ep_length: np.ndarray   # (E,) frame count of each episode

    @staticmethod
    def from_handle(handle: DatasetHandle) -> "FrameStore":
        episodes = handle.load_episodes()
        if not episodes:
            raise ValueError("dataset selects no episodes")
        grids, props, actions, last = [], [], [], []
        starts, lengths = [], []
        offset = 0
        for ep in episodes:
            grids.append(ep.grids.astype(np.uint8))
            props.append(ep.props)
            actions.append(ep.actions)
            last.append(np.full(ep.frame_count, offset + ep.frame_count - 1,
                                dtype=np.int64))
            starts.append(offset)
            lengths.append(ep.frame_count)
            offset += ep.frame_count
        return FrameStore(np.concatenate(grids), np.concatenate(props),
                          np.concatenate(actions), np.concatenate(last),
                          np.asarray(starts, dtype=np.int64),
                          np.asarray(lengths, dtype=np.int64))

    def __len__(self):
        return self.grids.shape[0]

    def sample_indices(self, rng: np.random.Generator, size: int,
                       mode: str) -> np.ndarray:
        """Draw frame indices: uniform over frames, or episode-first."""
        if mode == "frame-uniform":
            return rng.integers(0, len(self), size=size)
        ep = rng.integers(0, len(self.ep_start), size=size)
        offs = (rng.random(size) * self.ep_length[ep]).astype(np.int64)
        return self.ep_start[ep] + offs

    def chunk_targets(self, idx: np.ndarray, k: int):
        """K-step forward targets and valid masks for the given frames."""
        steps = idx[:, None] + np.arange(k)[None, :]
        masks = steps <= self.last_index[idx][:, None]
        clipped = np.minimum(steps, self.last_index[idx][:, None])
        return self.actions[clipped], masks


def train(handle: DatasetHandle, cfg: TrainConfig = TrainConfig()):
    """Run the optimization loop; returns (params, loss_log).

    The loss log holds (step, mean loss over the preceding window) pairs,
    emitted every 100 steps and once at the end for a partial window.
    """
    store = FrameStore.from_handle(handle)
    rng = np.random.default_rng(cfg.seed)
    params = policy.init_params(cfg.arch, cfg.seed)
    k = cfg.arch.chunk_size

    m = np.zeros_like(params.flat)
    v = np.zeros_like(params.flat)
    log = []
    window = []
    for step_i in range(1, cfg.steps + 1):
        idx = store.sample_indices(rng, cfg.batch_size, cfg.sampling)
        grids = store.grids[idx].astype(np.float32)
        if cfg.mask is not None:
            for j in range(cfg.batch_size):
                grids[j] = policy.mask_augment(grids[j], cfg.mask, rng)
        props = store.props[idx]
        targets, masks = store.chunk_targets(idx, k)
        try:
            loss, grad = policy.loss_and_gradient(params, grids, props,
                                                  targets, masks)
        except FloatingPointError as exc:
            raise RuntimeError(f"non-finite loss at step {step_i}") from exc
        gnorm = float(np.linalg.norm(grad.astype(np.float64)))
        if gnorm > cfg.grad_clip:
            grad = grad * np.float32(cfg.grad_clip / gnorm)
        m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad
        v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad * grad
        mhat = m / (1.0 - cfg.adam_beta1 ** step_i)
        vhat = v / (1.0 - cfg.adam_beta2 ** step_i)
        # Hold the base rate, then anneal linearly to zero over the final
        # 30% of steps. The absolute-error loss has sign gradients that do
        # not vanish at the optimum, so a constant rate leaves parameters
        # dithering at a noise floor proportional to it; annealing lets
        # them settle. A full-length cosine halves the average rate and
        # undertrains at the default step budget, so only the tail decays.
        lr = cfg.learning_rate * min(1.0, (cfg.steps - step_i)
                                     / (0.3 * cfg.steps))
        params.flat -= (lr * mhat
                        / (np.sqrt(vhat) + cfg.adam_eps)).astype(np.float32)
        window.append(loss)
        if step_i % LOG_EVERY == 0:
            log.append((step_i, sum(window) / len(window)))
            window = []
    if window:
        log.append((cfg.steps, sum(window) / len(window)))
    return params, log


def write_loss_log(log, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,mean_loss\n")
        for step_i, loss in log:
            fh.write(f"{step_i},{loss:.6f}\n")


def save_checkpoint(params: PolicyParams, path: str,
                    train_digest: str = "") -> None:
    header = json.dumps({
        "arch": params.config.to_json(),
        "param_count": int(params.flat.size),
        "train_digest": train_digest,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(np.uint32(CHECKPOINT_VERSION).tobytes())
            fh.write(np.uint32(len(header)).tobytes())
            fh.write(header)
            fh.write(params.flat.astype("<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> PolicyParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r} in {path}")
        version = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        hlen = int(np.frombuffer(fh.read(4), dtype="<u4")[0])
        raw = fh.read(hlen)
        if len(raw) != hlen:
            raise CheckpointError("truncated checkpoint header")
        header = json.loads(raw.decode("utf-8"))
        blob = fh.read()
    config = ArchConfig.from_json(header["arch"])
    flat = np.frombuffer(blob, dtype="<f4")
    if flat.size != header["param_count"] or flat.size != config.param_count():
        raise CheckpointError(
            f"truncated parameter blob: {flat.size} of "
            f"{config.param_count()} values")
    return PolicyParams(config, flat.copy())
