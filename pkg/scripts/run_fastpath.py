"""Stratified fast path vs plain Monte Carlo at equal accuracy.

For each pixel: a 500k-iteration ground truth, the p90 worst-case W1 of a
k-sample stratified run, and the plain Monte Carlo run size reaching the
same W1 with the same confidence.
"""

import argparse
import json
import time

from uqsense import fixtures
from uqsense.conversion import SceneConditions
from uqsense.montecarlo import McConfig, fastpath_compare, run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pixel", type=int, action="append", help="pixel index (repeatable), default 400")
    ap.add_argument("--k", type=int, default=256)
    ap.add_argument("--truth", type=int, default=500_000)
    ap.add_argument("--truth-seed", type=int, action="append", help="ground-truth seed (repeatable)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--temperature", type=float, default=60.0)
    args = ap.parse_args()

    mem = fixtures.reference_memory()
    frame = fixtures.synthesize_frame(mem, args.temperature)
    scene = SceneConditions()
    for px in args.pixel or [400]:
        for ts in args.truth_seed or [20240]:
            t0 = time.perf_counter()
            gt = run(mem, frame, scene, McConfig(iterations=args.truth, master_seed=ts, pixels=(px,),
                                                 block_size=65536))
            cmp = fastpath_compare(mem, frame, scene, args.k, gt, pixels=(px,), seed=args.seed, trials=args.trials,
                                   fast_trials=args.trials)
            print(json.dumps({"pixel": px, "truth_seed": ts, "k": args.k, "target_w1": cmp.target_w1,
                              "cutoff": cmp.cutoff.cutoff_iterations, "ratio": cmp.iteration_ratio,
                              "seconds": round(time.perf_counter() - t0, 1)}), flush=True)


if __name__ == "__main__":
    main()
