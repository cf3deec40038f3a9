"""W1 to a long ground truth as the Monte Carlo run grows; prints the log-log slope."""

import argparse

from uqsense import fixtures
from uqsense.conversion import SceneConditions
from uqsense.montecarlo import McConfig, convergence, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pixel", type=int, action="append")
    ap.add_argument("--truth", type=int, default=500_000)
    ap.add_argument("--ns", type=int, nargs="+", default=[1000, 4000, 16000, 64000])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    mem = fixtures.reference_memory()
    frame = fixtures.synthesize_frame(mem, 60.0)
    scene = SceneConditions()
    pixels = tuple(args.pixel or [400])
    gt = run(mem, frame, scene, McConfig(iterations=args.truth, master_seed=20240, pixels=pixels, block_size=65536))
    points, slope = convergence(mem, frame, scene, gt, ns=args.ns, pixels=pixels, repeats=args.repeats,
                                seed=args.seed)
    print(f"{'n':>8}  median W1")
    for p in points:
        print(f"{p.n:>8}  {p.median_w1:.6g}")
    print(f"slope {slope:.3f}")


if __name__ == "__main__":
    main()
