"""False-positive edges on a step scene, per sample-frame and after probability filtering."""

import argparse

import numpy as np

from uqsense import fixtures
from uqsense.conversion import SceneConditions
from uqsense.edges import canny, false_positive_stats, filter_edges, per_sample_edges
from uqsense.montecarlo import McConfig, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cold", type=float, default=30.0)
    ap.add_argument("--hot", type=float, nargs="+", default=[33.0])
    ap.add_argument("--frames", type=int, default=5000)
    ap.add_argument("--threshold", type=float, default=0.99)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args()

    mem = fixtures.reference_memory()
    print("hot  frames_with_fp  mean_fp  max_fp  filtered_fp  recall")
    for hot in args.hot:
        scene_c = fixtures.step_scene(args.cold, hot)
        frame = fixtures.synthesize_frame(mem, scene_c)
        dist = run(mem, frame, SceneConditions(), McConfig(iterations=args.frames, master_seed=args.seed))
        ref = canny(scene_c)
        maps = list(per_sample_edges(dist))
        fp = false_positive_stats(maps, ref)
        kept = filter_edges(np.mean(maps, axis=0), args.threshold)
        print(f"{hot:4.1f}  {np.mean(np.array(fp.counts) > 0):14.3f}  {fp.mean:7.2f}  {fp.max:6d}  "
              f"{int(np.count_nonzero(kept & ~ref)):11d}  {kept[ref].mean():.3f}")


if __name__ == "__main__":
    main()
