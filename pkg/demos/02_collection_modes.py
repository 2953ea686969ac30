#!/usr/bin/env python3
"""Compare naive and HD collection on the teacup task.

Records a handful of episodes in each mode, then prints what the HD mode
actually buys: shorter atomic episodes, start poses spread across each
subtask's region (including recovery starts with a closed empty gripper),
and the frame-cost ratio between the two corpora.
"""

import tempfile

import numpy as np

from hdlab import dataset, spaces

EPISODES = 8


def main() -> None:
    with tempfile.TemporaryDirectory() as out:
        for i in range(EPISODES):
            ep = dataset.record_episode("teacup", "naive", seed=i)
            dataset.write_episode(ep, f"{out}/{dataset.episode_filename(ep)}")
        for i in range(EPISODES):
            ep = dataset.record_episode("teacup", "hd", seed=1000 + i,
                                        space_index=i % 4)
            dataset.write_episode(ep, f"{out}/{dataset.episode_filename(ep)}")

        handle = dataset.build_mix(out, dataset.MixSpec(EPISODES, EPISODES),
                                   seed=0)
        stats = dataset.frame_stats(handle)
        print("teacup corpus:")
        for mode in ("naive", "hd"):
            s = stats[mode]
            print(f"  {mode:5s}: {s['episodes']} episodes, "
                  f"mean frames {s['mean_frames']:.1f}")
        ratio = stats["hd"]["mean_frames"] / stats["naive"]["mean_frames"]
        print(f"  frame-cost ratio hd/naive: {ratio:.2f}")

        print("\natomic spaces (teacup):")
        for space in spaces.segment_task("teacup"):
            region = space.start_region
            print(f"  [{space.index}] from {space.precondition_id} — start "
                  f"region half-width {region.half_width}, "
                  f"theta range ±{region.theta_half_range:.2f}")

        closed = 0
        for ep in handle.load_episodes():
            if ep.mode == "hd" and ep.props[0][4] < 0.5:
                closed += 1
        print(f"\nrecovery starts (closed empty gripper) in the hd half: "
              f"{closed}/{EPISODES}")


if __name__ == "__main__":
    main()
