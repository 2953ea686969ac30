"""Self-check suites: sampler uniformity, overlap contract, gradient
check, format round-trips, and end-to-end determinism.

Each suite returns a report dict with a boolean ``passed`` plus the
numbers behind the verdict, so callers (the CLI and the test suite) can
print or assert on the same evidence.
"""

from __future__ import annotations

import filecmp
import json
import os
import tempfile

import numpy as np
from scipy import special

from . import dataset, evaluator, policy, sim, spaces, trainer

TASKS = ("teacup", "belt-spoon", "belt-bowl", "pens")

CHI2_SAMPLES = 10_000
CHI2_BINS = 4
CHI2_SIGNIFICANCE = 0.01

GRAD_TOLERANCE = 1e-4
GRAD_PROBE_COORDS = 160


def chi_square_critical(dof: int, significance: float) -> float:
    """Upper critical value of the chi-square distribution."""
    return float(2.0 * special.gammaincinv(dof / 2.0, 1.0 - significance))


def _region_box(space, state):
    region = space.start_region
    anchor = spaces.resolve_anchor(region, state)
    hw = region.half_width
    return (max(anchor.x - hw, 0.0), min(anchor.x + hw, 1.0),
            max(anchor.y - hw, 0.0), min(anchor.y + hw, 1.0))


def verify_sampler(samples: int = CHI2_SAMPLES, seed: int = 0) -> dict:
    """Chi-square uniformity of sample_start over every atomic space.

    Positions are binned on a 4x4 grid over the workspace-clipped region
    box; the statistic must stay below the 1 - significance quantile of
    chi-square with 15 degrees of freedom.
    """
    dof = CHI2_BINS * CHI2_BINS - 1
    critical = chi_square_critical(dof, CHI2_SIGNIFICANCE)
    entries = []
    for task in TASKS:
        belt_speed = 0.08 if task.startswith("belt") else None
        state = sim.init_task(task, seed, belt_speed)
        for space in spaces.segment_task(task):
            rng = np.random.default_rng([seed, space.index])
            lo_x, hi_x, lo_y, hi_y = _region_box(space, state)
            counts = np.zeros((CHI2_BINS, CHI2_BINS), dtype=np.int64)
            for _ in range(samples):
                pose = spaces.sample_start(space, state, rng)
                bx = min(int((pose.x - lo_x) / (hi_x - lo_x) * CHI2_BINS),
                         CHI2_BINS - 1)
                by = min(int((pose.y - lo_y) / (hi_y - lo_y) * CHI2_BINS),
                         CHI2_BINS - 1)
                counts[bx, by] += 1
            expected = samples / counts.size
            statistic = float(((counts - expected) ** 2 / expected).sum())
            entries.append({"task": task, "space": space.index,
                            "statistic": round(statistic, 3),
                            "critical": round(critical, 4),
                            "passed": statistic < critical})
    return {"suite": "sampler", "entries": entries,
            "passed": all(e["passed"] for e in entries)}


def verify_overlap(trials: int = 1000, seeds: tuple = (0, 1, 2)) -> dict:
    """Overlap contract on every boundary of every task, across seeds."""
    entries = []
    for task in TASKS:
        for seed in seeds:
            report = spaces.verify_overlap(task, trials, seed)
            entries.append({"task": task, "seed": seed,
                            "boundaries": report["boundaries"],
                            "passed": report["passed"]})
    return {"suite": "overlap", "entries": entries,
            "passed": all(e["passed"] for e in entries)}


def gradient_probe_batch(config: policy.ArchConfig, batch: int = 4,
                         seed: int = 0):
    """Fixed random batch used by the finite-difference check."""
    rng = np.random.default_rng(seed)
    grids = (rng.uniform(size=(batch, config.grid_channels, config.grid_size,
                               config.grid_size)) < 0.2).astype(np.float64)
    props = rng.normal(size=(batch, config.proprio_dim))
    targets = rng.uniform(-0.01, 0.01,
                          size=(batch, config.chunk_size, config.action_dim))
    masks = np.ones((batch, config.chunk_size), dtype=bool)
    masks[0, config.chunk_size // 2:] = False
    return grids, props, targets, masks


def verify_grad(tolerance: float = GRAD_TOLERANCE, seed: int = 0) -> dict:
    """Analytic gradient vs. central finite differences in float64.

    A seeded subset of coordinates is probed across every parameter
    block; the max relative error must stay below the tolerance.
    """
    config = policy.ArchConfig()
    params = policy.init_params(config, seed=seed)
    grids, props, targets, masks = gradient_probe_batch(config, seed=seed)
    flat64 = params.flat.astype(np.float64)
    base = policy.PolicyParams(config, flat64.astype(np.float32))

    _, grad = policy.loss_and_gradient(base, grids, props, targets, masks,
                                       dtype=np.float64)

    rng = np.random.default_rng(seed + 1)
    # Probe coordinates spread over all parameter blocks.
    picks = []
    offset = 0
    per_block = max(GRAD_PROBE_COORDS // len(config.shapes()), 4)
    for _, shape in config.shapes():
        n = int(np.prod(shape))
        picks.extend(offset + rng.choice(n, size=min(per_block, n),
                                         replace=False))
        offset += n

    def loss_at(vec):
        # Carry float64 parameters so the 1e-6 bump is not rounded away;
        # views()/the forward path cast per the requested dtype.
        p64 = policy.PolicyParams.__new__(policy.PolicyParams)
        p64.config = config
        p64.flat = vec
        loss, _ = policy.loss_and_gradient(p64, grids, props, targets, masks,
                                           dtype=np.float64)
        return loss

    eps = 1e-6
    max_rel = 0.0
    for idx in picks:
        bumped = flat64.copy()
        bumped[idx] += eps
        up = loss_at(bumped)
        bumped[idx] -= 2 * eps
        down = loss_at(bumped)
        fd = (up - down) / (2 * eps)
        denom = max(abs(fd), abs(grad[idx]), 1e-8)
        max_rel = max(max_rel, abs(fd - grad[idx]) / denom)
    return {"suite": "grad", "coords": len(picks),
            "max_relative_error": float(max_rel),
            "tolerance": tolerance, "passed": max_rel < tolerance}


def _files_equal(a: str, b: str) -> bool:
    return filecmp.cmp(a, b, shallow=False)


def verify_format(seed: int = 3) -> dict:
    """Episode and checkpoint round-trips are bit-identical."""
    checks = []
    with tempfile.TemporaryDirectory() as tmp:
        ep = dataset.record_episode("teacup", "naive", seed)
        p1 = os.path.join(tmp, "a.hdse")
        p2 = os.path.join(tmp, "b.hdse")
        dataset.write_episode(ep, p1)
        dataset.write_episode(dataset.read_episode(p1), p2)
        checks.append(("episode-roundtrip", _files_equal(p1, p2)))
        checks.append(("episode-equals",
                       ep.equals(dataset.read_episode(p2))))

        params = policy.init_params(seed=seed)
        c1 = os.path.join(tmp, "a.hdcp")
        c2 = os.path.join(tmp, "b.hdcp")
        trainer.save_checkpoint(params, c1, "digest")
        trainer.save_checkpoint(trainer.load_checkpoint(c1), c2, "digest")
        checks.append(("checkpoint-roundtrip", _files_equal(c1, c2)))
    return {"suite": "format",
            "checks": [{"name": n, "passed": ok} for n, ok in checks],
            "passed": all(ok for _, ok in checks)}


def verify_determinism(seed: int = 5) -> dict:
    """Repeated collect / train / eval with equal inputs are byte-identical."""
    checks = []
    with tempfile.TemporaryDirectory() as tmp:
        dirs = [os.path.join(tmp, d) for d in ("c1", "c2")]
        for d in dirs:
            os.makedirs(d)
            for i in range(4):
                ep = dataset.record_episode("teacup",
                                            "hd" if i % 2 else "naive",
                                            seed + i,
                                            space_index=i % 4 if i % 2 else None)
                dataset.write_episode(
                    ep, os.path.join(d, dataset.episode_filename(ep)))
        names = sorted(os.listdir(dirs[0]))
        checks.append(("collect", names == sorted(os.listdir(dirs[1])) and all(
            _files_equal(os.path.join(dirs[0], n), os.path.join(dirs[1], n))
            for n in names)))

        handle = dataset.build_mix(dirs[0], dataset.MixSpec(2, 2), seed=seed)
        cfg = trainer.TrainConfig(steps=120, seed=seed)
        ckpts = []
        for tag in ("t1", "t2"):
            params, _ = trainer.train(handle, cfg)
            path = os.path.join(tmp, tag + ".hdcp")
            trainer.save_checkpoint(params, path, cfg.digest())
            ckpts.append(path)
        checks.append(("train", _files_equal(*ckpts)))

        params = trainer.load_checkpoint(ckpts[0])
        runs = [evaluator.evaluate(params, "teacup", n=4, seed=seed)
                for _ in range(2)]
        checks.append(("eval", json.dumps(runs[0].to_json(), sort_keys=True)
                       == json.dumps(runs[1].to_json(), sort_keys=True)))
    return {"suite": "determinism",
            "checks": [{"name": n, "passed": ok} for n, ok in checks],
            "passed": all(ok for _, ok in checks)}


SUITES = {
    "sampler": verify_sampler,
    "overlap": verify_overlap,
    "grad": verify_grad,
    "format": verify_format,
    "determinism": verify_determinism,
}


def run_suite(name: str) -> dict:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from "
                         f"{sorted(SUITES)}")
    return SUITES[name]()
