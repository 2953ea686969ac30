#!/usr/bin/env python3
"""Train a small policy end to end and evaluate it.

A miniature version of the real experiment loop: record a small mixed
corpus, train for a few hundred steps (far short of convergence — this is
a plumbing demo, not a result), and run seeded rollouts with the failure
taxonomy. Expect near-zero success at this budget; the point is to see
the artifacts each stage produces.
"""

import json
import tempfile

from hdlab import dataset, evaluator, trainer

EPISODES = 6
STEPS = 400


def main() -> None:
    with tempfile.TemporaryDirectory() as out:
        print(f"recording {EPISODES} naive + {EPISODES} hd teacup episodes…")
        for i in range(EPISODES):
            for mode, seed, space in (("naive", i, None),
                                      ("hd", 1000 + i, i % 4)):
                ep = dataset.record_episode("teacup", mode, seed,
                                            space_index=space)
                dataset.write_episode(
                    ep, f"{out}/{dataset.episode_filename(ep)}")

        half = EPISODES // 2
        handle = dataset.build_mix(out, dataset.MixSpec(half, half), seed=0)
        cfg = trainer.TrainConfig(steps=STEPS, seed=0)
        print(f"training N{half}+H{half} for {STEPS} steps…")
        params, log = trainer.train(handle, cfg)
        for step, loss in log[:3] + log[-1:]:
            print(f"  step {step:4d}  loss {loss:.4f}")

        ckpt = f"{out}/demo.hdcp"
        trainer.save_checkpoint(params, ckpt, cfg.digest())
        again = trainer.load_checkpoint(ckpt)
        assert (again.flat == params.flat).all(), "round-trip must be exact"

        print("evaluating 5 seeded rollouts…")
        metrics = evaluator.evaluate(params, "teacup", n=5, seed=9000)
        print(json.dumps(metrics.to_json(), indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
