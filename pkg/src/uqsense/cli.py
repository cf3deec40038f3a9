"""Command-line front end: extract, mc, edges, report, demo.

Exit codes: 0 success, 2 input or format error, 3 numeric domain error,
4 configuration error. Every command writes ``manifest.json`` next to its
outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, edges, eeprom, fixtures
from .conversion import SceneConditions, TemperatureFrameDistribution, convert_frame, load_frame, read_frame_csv, \
    save_frame, write_frame_csv
from .ensemble import EnsembleContext, error_stats, histogram, summarize
from .errors import ConfigError, DomainError, FormatError, UnreachableTarget
from .extraction import Conventional, Uncertain, extract, parameters_to_json
from .montecarlo import DEFAULT_ITERATIONS, FastPath, FullMc, McConfig, run

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN, EXIT_CONFIG = 0, 2, 3, 4

STATS_COLUMNS = ["pixel", "row", "col", "conventional", "mean", "std", "ci95_low", "ci95_high", "ci95_width",
                 "mae", "max_ae", "mre", "max_re"]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, args, inputs) -> dict:
    """Record inputs (with content hashes), every flag except the output directory, seed and version."""
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    manifest = {
        "tool": "uqsense",
        "version": __version__,
        "command": args.command,
        "seed": getattr(args, "seed", None),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return manifest


def _dump_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- commands -------------------------------------------------------------


def cmd_extract(args) -> int:
    mem = eeprom.load(args.eeprom)
    if args.mode == "conventional":
        params = extract(mem, Conventional)
    else:
        ctx = EnsembleContext(n=args.ensemble_size, master_seed=args.seed)
        params = extract(mem, Uncertain(ctx, args.amplitude))
    doc = parameters_to_json(params, include_vectors=not args.scalars_only)
    doc["sensor_id"] = mem.sensor_id
    doc["mode"] = args.mode
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = _out_dir(args)
        (out / "parameters.json").write_text(text)
        write_manifest(out, args, [args.eeprom])
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _stats_rows(dist: TemperatureFrameDistribution, conventional: np.ndarray):
    for k, px in enumerate(dist.pixels):
        s = dist.samples[k]
        summ = summarize(s)
        ref = float(conventional[k])
        err = error_stats(s, ref, relative=ref != 0)
        yield {
            "pixel": int(px), "row": int(px) // 32, "col": int(px) % 32, "conventional": ref,
            "mean": summ.mean, "std": summ.std, "ci95_low": summ.q2_5, "ci95_high": summ.q97_5,
            "ci95_width": summ.ci95_width, "mae": err.mae, "max_ae": err.max_ae,
            "mre": "" if err.mre is None else err.mre, "max_re": "" if err.max_re is None else err.max_re,
        }


def write_stats_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_mc(args) -> int:
    mem = eeprom.load(args.eeprom)
    frame = load_frame(args.frame)
    scene = SceneConditions(emissivity=args.emissivity,
                            reflected_k=None if args.reflected_k is None else args.reflected_k)
    mode = FullMc() if args.fast_path is None else FastPath(args.fast_path)
    cfg = McConfig(iterations=args.iterations, master_seed=args.seed, workers=args.workers, mode=mode,
                   amplitude=args.amplitude, skip_invalid=args.skip_invalid_samples, block_size=args.block_size)
    out = _out_dir(args)
    conventional = convert_frame(frame, extract(mem, Conventional), scene)
    dist = run(mem, frame, scene, cfg, out_path=out / "ensemble.bin")
    write_frame_csv(conventional, out / "conventional.csv")
    write_frame_csv(dist.mean(), out / "mean.csv")
    write_stats_csv(out / "stats.csv", _stats_rows(dist, conventional))
    _dump_json(out / "run.json", {"iterations": dist.n, "invalid_samples": dist.invalid_count,
                                  "pixels": len(dist)})
    write_manifest(out, args, [args.eeprom, args.frame])
    return EXIT_OK


def cmd_edges(args) -> int:
    dist = TemperatureFrameDistribution.load(args.ensemble)
    if not dist.full_frame:
        raise FormatError("edge detection needs a full 768-pixel ensemble frame")
    cfg = edges.CannyConfig(gaussian_sigma=args.sigma, low_frac=args.low_frac, high_frac=args.high_frac,
                            normalize=not args.no_normalize)
    m = dist.n if args.samples is None else args.samples
    if not 1 <= m <= dist.n:
        raise ConfigError(f"--samples must be in 1..{dist.n}")
    ref_frame = dist.mean() if args.reference is None else read_frame_csv(args.reference)
    reference = edges.canny(ref_frame, cfg)
    maps = []
    counts = np.zeros(edges.SHAPE, dtype=np.int64)
    for e in edges.per_sample_edges(dist, cfg, m):
        counts += e
        maps.append(e)
    prob = counts / m
    filtered = edges.filter_edges(prob, args.threshold)
    fp = edges.false_positive_stats(maps, reference)
    out = _out_dir(args)
    edges.write_grid_csv(out / "probability.csv", prob)
    edges.write_probability_pgm(out / "probability.pgm", prob)
    edges.write_edge_map(out / "filtered.pgm", filtered)
    edges.write_edge_map(out / "reference.pgm", reference)
    (out / "filtered.json").write_text(edges.edge_map_json(filtered) + "\n")
    stats = fp.to_dict()
    stats["filtered_false_positives"] = int(np.count_nonzero(filtered & ~reference))
    stats["filtered_recall"] = float(np.count_nonzero(filtered & reference) / max(1, reference.sum()))
    _dump_json(out / "fp_stats.json", stats)
    inputs = [args.ensemble] + ([args.reference] if args.reference else [])
    write_manifest(out, args, inputs)
    return EXIT_OK


def _read_stats(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"{path}: no rows")
    missing = [c for c in STATS_COLUMNS if c not in rows[0]]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return rows


METRICS = ["mean", "std", "ci95_width", "mae", "max_ae", "mre", "max_re"]


def aggregate(rows) -> dict:
    """Min, mean and max of every metric across all pixel distributions."""
    out = {}
    for m in METRICS:
        vals = np.array([float(r[m]) for r in rows if r[m] not in ("", None)])
        if vals.size:
            out[m] = {"min": float(vals.min()), "mean": float(vals.mean()), "max": float(vals.max())}
    return out


def cmd_report(args) -> int:
    rows = []
    for p in args.stats:
        rows.extend(_read_stats(p))
    agg = aggregate(rows)
    doc = {"inputs": len(args.stats), "distributions": len(rows), "metrics": agg}
    if args.ensemble and args.pixel:
        dist = TemperatureFrameDistribution.load(args.ensemble)
        hists = {}
        for px in args.pixel:
            where = np.flatnonzero(dist.pixels == px)
            if where.size == 0:
                raise ConfigError(f"pixel {px} is not in the ensemble")
            counts, edges_ = histogram(dist.samples[where[0]])
            hists[str(px)] = {"counts": counts.tolist(), "edges": edges_.tolist()}
        doc["histograms"] = hists
    out = _out_dir(args)
    _dump_json(out / "report.json", doc)
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "min", "mean", "max"])
        for m, v in agg.items():
            w.writerow([m, repr(v["min"]), repr(v["mean"]), repr(v["max"])])
    write_manifest(out, args, list(args.stats) + ([args.ensemble] if args.ensemble else []))
    return EXIT_OK


def cmd_demo(args) -> int:
    """Write the fixture calibration memory and a few synthetic frames."""
    out = _out_dir(args)
    mem = fixtures.reference_memory()
    eeprom.save(mem, out / "eeprom.json")
    save_frame(fixtures.synthesize_frame(mem, 60.0), out / "frame_flat60.json")
    save_frame(fixtures.synthesize_frame(mem, fixtures.step_scene(30.0, 33.0)), out / "frame_step.json")
    write_manifest(out, args, [])
    return EXIT_OK


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uqsense", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract calibration parameters")
    p.add_argument("eeprom")
    p.add_argument("--mode", choices=["conventional", "uncertain"], default="conventional")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ensemble-size", type=int, default=10000)
    p.add_argument("--amplitude", type=float, default=1.0, help="noise width in LSB (default 1)")
    p.add_argument("--scalars-only", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("mc", help="Monte Carlo propagation of one frame")
    p.add_argument("eeprom")
    p.add_argument("frame")
    p.add_argument("--iterations", type=int, default=DEFAULT_ITERATIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emissivity", type=float, default=0.95)
    p.add_argument("--reflected-k", type=float, default=None)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--skip-invalid-samples", action="store_true")
    p.add_argument("--fast-path", type=int, default=None, metavar="K", help="stratified K-sample ensemble")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--block-size", type=int, default=4096)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("edges", help="probabilistic Canny edges")
    p.add_argument("ensemble")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.99)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--low-frac", type=float, default=0.10)
    p.add_argument("--high-frac", type=float, default=0.20)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--reference", default=None, help="CSV temperature grid defining true edges")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_edges)

    p = sub.add_parser("report", help="aggregate per-pixel statistics")
    p.add_argument("stats", nargs="+")
    p.add_argument("--ensemble", default=None)
    p.add_argument("--pixel", type=int, action="append")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("demo", help="write fixture inputs")
    p.add_argument("--out", default="demo")
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"uqsense: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DomainError, UnreachableTarget, ArithmeticError) as exc:
        print(f"uqsense: numeric error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ConfigError as exc:
        print(f"uqsense: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
