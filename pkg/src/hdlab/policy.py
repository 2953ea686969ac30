"""Chunking behavior-cloning policy with analytic gradients.

The observation encoder is a from-scratch, untied patch embedding: the
6x32x32 grid is cut into 64 non-overlapping 4x4 patches, each patch gets
its own linear map to an embed-width token, and tokens are sum-pooled.
Untied weights keep spatial information through the pooling. The pooled
feature is concatenated with proprioception and a small set of fixed
(parameter-free) blob-centroid features, passed through two tanh hidden
layers, and a K x 4 head squashed per coordinate onto the per-step action
limits.

The chunk regression loss is the mean absolute error over valid chunk
positions (a fixed-scale Laplace log-likelihood).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sim

PARAM_BUDGET = 500_000

# Grid channels whose blob count/centroid are appended to the trunk input as
# fixed features: end-effector, graspable objects, containers. The lid and
# belt channels stay out: their footprints encode articulation state, which
# the learned embedding handles, and a lid-centroid feature proved to act as
# a stage-confusing shortcut.
FEATURE_CHANNELS = (0, 2, 3)
# Channels whose centroid offset from the end-effector (read from
# proprioception) is appended as an explicit relative feature, squashed
# through tanh at this gain. The offset is what fine approach control is
# a function of; handing it to the trunk directly makes the near-target
# feedback field representable as a first-layer linear readout instead of
# something reconstructed per object position, which a small corpus lets
# the trunk memorize rather than generalize.
RELATIVE_CHANNELS = (2, 3)
RELATIVE_GAIN = 6.0


@dataclass(frozen=True)
class ArchConfig:
    grid_channels: int = sim.GRID_CHANNELS
    grid_size: int = sim.GRID_SIZE
    patch_size: int = 4
    embed_width: int = 48
    hidden_width: int = 320
    chunk_size: int = 32
    action_dim: int = 4
    proprio_dim: int = 6

    def __post_init__(self):
        if self.grid_size % self.patch_size != 0:
            raise ValueError("patch size must divide the grid size")
        if min(self.embed_width, self.hidden_width, self.chunk_size) < 1:
            raise ValueError("widths and chunk size must be positive")

    @property
    def tokens(self) -> int:
        return (self.grid_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.grid_channels * self.patch_size ** 2

    @property
    def grid_dim(self) -> int:
        return self.grid_channels * self.grid_size ** 2

    @property
    def feature_dim(self) -> int:
        return 3 * len(FEATURE_CHANNELS) + 2 * len(RELATIVE_CHANNELS)

    @property
    def trunk_in(self) -> int:
        return self.embed_width + self.proprio_dim + self.feature_dim

    @property
    def head_out(self) -> int:
        return self.chunk_size * self.action_dim

    def shapes(self):
        """Parameter layout, in storage order."""
        return [
            ("W0", (self.grid_dim, self.embed_width)),
            ("b0", (self.embed_width,)),
            ("W1", (self.trunk_in, self.hidden_width)),
            ("b1", (self.hidden_width,)),
            ("W2", (self.hidden_width, self.hidden_width)),
            ("b2", (self.hidden_width,)),
            ("W3", (self.hidden_width, self.head_out)),
            ("b3", (self.head_out,)),
        ]

    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.shapes())

    def to_json(self) -> dict:
        return {
            "grid_channels": self.grid_channels,
            "grid_size": self.grid_size,
            "patch_size": self.patch_size,
            "embed_width": self.embed_width,
            "hidden_width": self.hidden_width,
            "chunk_size": self.chunk_size,
            "action_dim": self.action_dim,
            "proprio_dim": self.proprio_dim,
        }

    @staticmethod
    def from_json(d: dict) -> "ArchConfig":
        return ArchConfig(**d)

    def action_limits(self) -> np.ndarray:
        """Per-coordinate output bounds of the squashing head.

        Bounds carry headroom above the simulator's per-step limits so
        that demonstrated extremes (full-speed steps, grip flips) land
        strictly inside the tanh range instead of at its saturated
        asymptotes; the simulator clips executed actions regardless.
        """
        per_step = [1.25 * sim.STEP_POS_LIMIT, 1.25 * sim.STEP_POS_LIMIT,
                    1.25 * sim.STEP_ROT_LIMIT, 2.0 * sim.GRIP_SCALE]
        return np.tile(np.asarray(per_step, dtype=np.float64),
                       self.chunk_size)


@dataclass
class PolicyParams:
    config: ArchConfig
    flat: np.ndarray  # float32, layout per ArchConfig.shapes()

    def __post_init__(self):
        if self.flat.shape != (self.config.param_count(),):
            raise ValueError("flat parameter array does not match the config")
        if not np.all(np.isfinite(self.flat)):
            raise ValueError("parameters must be finite")

    def views(self, dtype=np.float32) -> dict:
        flat = self.flat.astype(dtype, copy=False)
        out = {}
        offset = 0
        for name, shape in self.config.shapes():
            n = int(np.prod(shape))
            out[name] = flat[offset:offset + n].reshape(shape)
            offset += n
        return out


def init_params(config: ArchConfig = ArchConfig(), seed: int = 0) -> PolicyParams:
    """Seeded Glorot-style scaled-uniform initialization; biases start at 0."""
    if config.param_count() > PARAM_BUDGET:
        raise ValueError(f"config exceeds the {PARAM_BUDGET} parameter budget")
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in config.shapes():
        if len(shape) == 1:
            chunks.append(np.zeros(shape, dtype=np.float32))
        else:
            fan_in, fan_out = shape
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            block = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            chunks.append(block.ravel())
    return PolicyParams(config, np.concatenate(chunks))


@dataclass(frozen=True)
class MaskConfig:
    apply_probability: float = 0.7
    area_fraction: float = 0.5
    patch_size_choices: tuple = (1, 2)

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must lie in [0, 1]")
        if not 0.0 <= self.area_fraction <= 1.0:
            raise ValueError("area_fraction must lie in [0, 1]")
        for p in self.patch_size_choices:
            if sim.GRID_SIZE % p != 0:
                raise ValueError("mask patch sizes must divide the grid size")


def mask_augment(grid: np.ndarray, cfg: MaskConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Zero out a random set of square patches across all channels.

    With probability 1 - apply_probability the grid is returned unchanged.
    Otherwise one patch size is drawn, the 32x32 plane is partitioned into
    square patches, and round(area_fraction * n_patches) of them are zeroed
    without replacement; untouched cells are bit-identical to the input.
    """
    if rng.uniform() >= cfg.apply_probability:
        return grid.copy()
    p = int(cfg.patch_size_choices[rng.integers(len(cfg.patch_size_choices))])
    side = sim.GRID_SIZE // p
    n = side * side
    k = int(round(cfg.area_fraction * n))
    chosen = rng.choice(n, size=k, replace=False)
    out = grid.copy()
    view = out.reshape(grid.shape[0], side, p, side, p)
    view[:, chosen // side, :, chosen % side, :] = 0.0
    return out


def _blob_features(grids: np.ndarray, props: np.ndarray,
                   config: ArchConfig) -> np.ndarray:
    """Parameter-free blob statistics: scaled cell count and centroid of the
    end-effector, graspable and container channels, plus the tanh-squashed
    centroid offsets of graspables and containers from the end-effector.

    A pooled linear patch embedding cannot generalize a learned response to
    object positions no demonstration visited, and raw (unnormalized) moment
    readouts scale with the surviving cell count under the zero-mask
    augmentation. The centroid ratio is computed here instead: it is exact on
    clean grids, unbiased under cell-speckle masking, and hands the trunk the
    relative geometry (target minus end-effector) as a first-layer
    subtraction. All-masked blobs report zeros, which no real blob can.
    """
    g = config.grid_size
    coords = ((np.arange(g) + 0.5) / g).astype(grids.dtype)
    sel = grids[:, FEATURE_CHANNELS, :, :]
    count = sel.sum(axis=(2, 3))
    cx = sel.sum(axis=2) @ coords   # columns carry x
    cy = sel.sum(axis=3) @ coords   # rows carry y
    safe = np.maximum(count, 1.0)
    ee = props[:, :2]
    rel = []
    for c in RELATIVE_CHANNELS:
        i = FEATURE_CHANNELS.index(c)
        rel.append(np.tanh(RELATIVE_GAIN * (cx[:, i:i + 1] / safe[:, i:i + 1]
                                            - ee[:, 0:1])))
        rel.append(np.tanh(RELATIVE_GAIN * (cy[:, i:i + 1] / safe[:, i:i + 1]
                                            - ee[:, 1:2])))
    return np.concatenate([count * 0.125, cx / safe, cy / safe] + rel, axis=1)


def _patch_order_flatten(grids: np.ndarray, config: ArchConfig) -> np.ndarray:
    """Flatten (B, C, H, W) grids into patch-major order matching W0 rows."""
    b = grids.shape[0]
    c, g, p = config.grid_channels, config.grid_size, config.patch_size
    side = g // p
    x = grids.reshape(b, c, side, p, side, p)
    x = x.transpose(0, 2, 4, 1, 3, 5)  # (B, side, side, C, p, p)
    return np.ascontiguousarray(x).reshape(b, config.grid_dim)


def _forward_batch(views: dict, config: ArchConfig, grids: np.ndarray,
                   props: np.ndarray, dtype=np.float32):
    grids = grids.astype(dtype, copy=False)
    x = _patch_order_flatten(grids, config)
    props = props.astype(dtype, copy=False)
    pooled = x @ views["W0"] + views["b0"]
    z = np.concatenate([pooled, props,
                        _blob_features(grids, props, config)], axis=1)
    h1 = np.tanh(z @ views["W1"] + views["b1"])
    h2 = np.tanh(h1 @ views["W2"] + views["b2"])
    o = h2 @ views["W3"] + views["b3"]
    to = np.tanh(o)
    limits = config.action_limits().astype(dtype)
    chunk = limits * to
    cache = (x, z, h1, h2, to, limits)
    return chunk, cache


def forward(params: PolicyParams, grid: np.ndarray,
            prop: np.ndarray) -> np.ndarray:
    """Predict a K x 4 action chunk for one observation."""
    config = params.config
    if grid.shape != (config.grid_channels, config.grid_size, config.grid_size):
        raise ValueError(f"grid dims {grid.shape} do not match the config")
    if np.asarray(prop).shape != (config.proprio_dim,):
        raise ValueError("proprio dims do not match the config")
    chunk, _ = _forward_batch(params.views(), config, grid[None],
                              np.asarray(prop, dtype=np.float32)[None])
    return chunk[0].reshape(config.chunk_size, config.action_dim)


def forward_batch(params: PolicyParams, grids: np.ndarray,
                  props: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Predict (B, K, action_dim) chunks for a batch of observations."""
    config = params.config
    chunk, _ = _forward_batch(params.views(dtype), config, grids, props, dtype)
    return chunk.reshape(grids.shape[0], config.chunk_size, config.action_dim)


def bc_loss(pred: np.ndarray, target: np.ndarray,
            valid_mask: np.ndarray) -> float:
    """Mean absolute error over valid chunk positions and coordinates."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    valid = np.asarray(valid_mask, dtype=bool)
    if not valid.any():
        raise ValueError("valid mask selects no chunk positions")
    diff = np.abs(pred - target)[valid]
    return float(diff.mean())


def loss_and_gradient(params: PolicyParams, grids: np.ndarray,
                      props: np.ndarray, targets: np.ndarray,
                      masks: np.ndarray, dtype=np.float32):
    """Mean chunk loss over a batch and its analytic gradient.

    targets: (B, K, action_dim); masks: (B, K) booleans. The returned
    gradient is flat, in the parameter storage layout.
    """
    config = params.config
    b = grids.shape[0]
    if b < 1:
        raise ValueError("batch must be non-empty")
    views = params.views(dtype)
    chunk, cache = _forward_batch(views, config, grids, props, dtype)
    x, z, h1, h2, to, limits = cache

    y = targets.reshape(b, config.head_out).astype(dtype, copy=False)
    m = np.repeat(np.asarray(masks, dtype=dtype), config.action_dim, axis=1)
    valid_per = m.sum(axis=1)
    if np.any(valid_per < 1):
        raise ValueError("every sample needs at least one valid position")

    resid = chunk - y
    loss = float(np.mean((np.abs(resid) * m).sum(axis=1) / valid_per))
    if not math.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    dchunk = np.sign(resid) * m / valid_per[:, None] / b
    do = dchunk * limits * (1.0 - to * to)
    gW3 = h2.T @ do
    gb3 = do.sum(axis=0)
    dh2 = do @ views["W3"].T
    da2 = dh2 * (1.0 - h2 * h2)
    gW2 = h1.T @ da2
    gb2 = da2.sum(axis=0)
    dh1 = da2 @ views["W2"].T
    da1 = dh1 * (1.0 - h1 * h1)
    gW1 = z.T @ da1
    gb1 = da1.sum(axis=0)
    dz = da1 @ views["W1"].T
    dpooled = dz[:, :config.embed_width]
    gW0 = x.T @ dpooled
    gb0 = dpooled.sum(axis=0)

    grad = np.concatenate([gW0.ravel(), gb0, gW1.ravel(), gb1,
                           gW2.ravel(), gb2, gW3.ravel(), gb3]).astype(dtype)
    return loss, grad


def gradient(params: PolicyParams, grids: np.ndarray, props: np.ndarray,
             targets: np.ndarray, masks: np.ndarray,
             dtype=np.float32) -> np.ndarray:
    return loss_and_gradient(params, grids, props, targets, masks, dtype)[1]
