"""Monte Carlo propagation through extraction and conversion.

Samples are processed in fixed-size blocks. Every draw is a function of
``(seed, stream, sample index)`` only, so the output does not depend on
how blocks are scheduled over worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .conversion import RawFrame, SceneConditions, TemperatureFrameDistribution, convert_raw
from .eeprom import N_PIXELS, CalibrationMemory
from .ensemble import PSEUDORANDOM, STRATIFIED, EnsembleContext, open_ensemble_matrix, wasserstein1_sorted
from .errors import ConfigError, DomainError, UnreachableTarget
from .extraction import Uncertain, extract

DEFAULT_ITERATIONS = 500_000


@dataclass(frozen=True)
class FullMc:
    pass


@dataclass(frozen=True)
class FastPath:
    """Reduced ensemble of ``k`` aligned samples, stratified by default."""

    k: int = 256
    sampling: str = STRATIFIED

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError("fast path needs k >= 2")
        if self.sampling not in (STRATIFIED, PSEUDORANDOM):
            raise ConfigError(f"unknown sampling {self.sampling!r}")


@dataclass(frozen=True)
class McConfig:
    iterations: int = DEFAULT_ITERATIONS
    master_seed: int = 0
    workers: int | None = None
    mode: FullMc | FastPath = field(default_factory=FullMc)
    block_size: int = 4096
    amplitude: float = 1.0
    skip_invalid: bool = False
    pixels: tuple | None = None
    emulate_rediscretization: bool = False

    def __post_init__(self):
        if isinstance(self.mode, FullMc) and self.iterations < 2:
            raise ConfigError("need at least 2 iterations")
        if self.block_size < 1:
            raise ConfigError("block size must be positive")
        if self.workers is not None and self.workers < 1:
            raise ConfigError("worker count must be positive")

    @property
    def size(self) -> int:
        return self.mode.k if isinstance(self.mode, FastPath) else self.iterations


def worker_count(hint: int | None = None) -> int:
    """Requested workers, capped by ``UQSENSE_THREADS`` when set."""
    n = hint or os.cpu_count() or 1
    cap = os.environ.get("UQSENSE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ConfigError(f"UQSENSE_THREADS must be an integer, got {cap!r}") from exc
    return max(1, n)


def _block(mem, frame, scene, cfg, pixels, ctx) -> np.ndarray:
    params = extract(mem, Uncertain(ctx, cfg.amplitude), pixels=pixels)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return convert_raw(frame, params, scene, cfg.emulate_rediscretization)


def run(mem: CalibrationMemory, frame: RawFrame, scene: SceneConditions = SceneConditions(),
        cfg: McConfig = McConfig(), out_path=None) -> TemperatureFrameDistribution:
    """Per-pixel output ensembles.

    With ``out_path`` the samples go straight into a memory-mapped file in
    the ensemble binary format (one record per pixel) instead of RAM.
    Samples where any pixel's conversion is undefined abort the run, or are
    dropped and counted when ``cfg.skip_invalid`` is set.
    """
    pixels = np.arange(N_PIXELS) if cfg.pixels is None else np.asarray(cfg.pixels, dtype=np.int64)
    n = cfg.size
    if isinstance(cfg.mode, FastPath):
        ctx = EnsembleContext(n=n, master_seed=cfg.master_seed, sampling=cfg.mode.sampling)
        blocks = [(0, n)]
    else:
        blocks = [(s, min(cfg.block_size, n - s)) for s in range(0, n, cfg.block_size)]

    if out_path is not None and not cfg.skip_invalid:
        mm, out = open_ensemble_matrix(out_path, pixels.size, n)
    else:
        mm, out = None, np.empty((pixels.size, n))

    def work(block):
        start, count = block
        c = ctx if isinstance(cfg.mode, FastPath) else EnsembleContext(n=count, master_seed=cfg.master_seed,
                                                                         offset=start)
        out[:, start:start + count] = _block(mem, frame, scene, cfg, pixels, c)

    nw = min(worker_count(cfg.workers), len(blocks))
    if nw == 1:
        for b in blocks:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=nw) as pool:
            list(pool.map(work, blocks))

    invalid = 0
    bad_cols = np.zeros(n, dtype=bool)
    for r0 in range(0, pixels.size, 64):
        bad_cols |= ~np.all(np.isfinite(out[r0:r0 + 64]), axis=0)
    if np.any(bad_cols):
        if not cfg.skip_invalid:
            sample = int(np.flatnonzero(bad_cols)[0])
            row = int(np.flatnonzero(~np.isfinite(out[:, sample]))[0])
            raise DomainError(f"conversion undefined at pixel {int(pixels[row])}, iteration {sample}",
                              index=sample, pixel=int(pixels[row]))
        invalid = int(bad_cols.sum())
        out = out[:, ~bad_cols]
        if out.shape[1] < 1:
            raise DomainError("every sample was invalid")
    if out_path is not None and mm is None:
        mm, dest = open_ensemble_matrix(out_path, pixels.size, out.shape[1])
        dest[:] = out
        out = dest
    if mm is not None:
        mm.flush()
        return TemperatureFrameDistribution(out, pixels, invalid_count=invalid, copy=False)
    return TemperatureFrameDistribution(out, pixels, invalid_count=invalid, copy=False)


# --- equal-accuracy cutoff -----------------------------------------------


@dataclass(frozen=True)
class EqMcReport:
    target_w1: float
    p: float
    cutoff_iterations: int
    trials: int

    def to_dict(self):
        return {"target_w1": self.target_w1, "p": self.p, "cutoff_iterations": self.cutoff_iterations,
                "trials": self.trials}


def _trial_seed(seed: int, m: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), m, trial]).generate_state(1, np.uint64)[0])


def _gt_matrix(ground_truth) -> np.ndarray:
    s = ground_truth.samples if hasattr(ground_truth, "samples") else np.asarray(ground_truth, dtype=float)
    s = np.atleast_2d(np.asarray(s, dtype=float))
    return s


def bootstrap_sampler(ground_truth):
    """Runs drawn with replacement from the ground-truth samples, aligned across pixels."""
    gt = _gt_matrix(ground_truth)

    def sample(m, seed):
        idx = np.random.default_rng(seed).integers(0, gt.shape[1], m)
        return gt[:, idx]

    return sample


def mc_sampler(mem, frame, scene=SceneConditions(), pixels=None, amplitude: float = 1.0):
    """Runs of fresh pseudorandom Monte Carlo through extraction and conversion."""

    def sample(m, seed):
        cfg = McConfig(iterations=max(m, 2), master_seed=seed, pixels=None if pixels is None else tuple(pixels),
                       amplitude=amplitude, block_size=max(m, 2), workers=1)
        return run(mem, frame, scene, cfg).samples[:, :m]

    return sample


def eqmc_cutoff(ground_truth, target_w1: float, p: float = 0.9, trials: int = 100, seed: int = 0,
                sampler=None, m_min: int = 2, m_max: int | None = None, reduce: str = "max") -> EqMcReport:
    """Smallest run size whose W1 to the ground truth is within ``target_w1`` in a fraction ``p`` of trials.

    Search by doubling from ``m_min``, then bisection. Trial ``t`` at size
    ``m`` always uses the same random numbers, so the cutoff is monotone in
    ``p`` and in ``target_w1``. For several pixels the per-run distance is
    reduced across pixels with ``max`` (default) or ``median``.
    """
    if not 0 < p < 1:
        raise ConfigError("confidence p must lie in (0, 1)")
    if trials < 1:
        raise ConfigError("need at least one trial")
    if not target_w1 >= 0:
        raise ConfigError("target distance must be non-negative")
    gt = _gt_matrix(ground_truth)
    gt_sorted = np.sort(gt, axis=1)
    m_max = gt.shape[1] if m_max is None else int(m_max)
    if m_min < 1 or m_min > m_max:
        raise ConfigError("need 1 <= m_min <= m_max")
    sampler = bootstrap_sampler(gt) if sampler is None else sampler
    agg = {"max": np.max, "median": np.median}[reduce]
    cache = {}
    need = int(np.ceil(p * trials - 1e-9))

    def ok(m):
        if m not in cache:
            hits = 0
            for t in range(trials):
                if np.isinf(target_w1):
                    hits = trials
                    break
                run_s = np.sort(np.atleast_2d(sampler(m, _trial_seed(seed, m, t))), axis=1)
                d = agg([wasserstein1_sorted(run_s[i], gt_sorted[i]) for i in range(gt.shape[0])])
                hits += d <= target_w1
                if hits >= need or hits + (trials - t - 1) < need:
                    break
            cache[m] = hits >= need
        return cache[m]

    lo, hi = None, m_min
    while not ok(hi):
        if hi >= m_max:
            raise UnreachableTarget(f"W1 <= {target_w1} not reached with probability {p} even at m={m_max}")
        lo, hi = hi, min(2 * hi, m_max)
    if lo is not None:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
    return EqMcReport(float(target_w1), float(p), int(hi), int(trials))


@dataclass(frozen=True)
class FastPathComparison:
    w1_per_pixel: np.ndarray
    target_w1: float
    cutoff: EqMcReport
    k: int

    @property
    def iteration_ratio(self) -> float:
        return self.cutoff.cutoff_iterations / self.k


def fastpath_w1(mem, frame, scene, k, ground_truth, seed: int = 0, pixels=None, sampling: str = STRATIFIED,
                amplitude: float = 1.0) -> np.ndarray:
    gt = _gt_matrix(ground_truth)
    cfg = McConfig(mode=FastPath(k, sampling), master_seed=seed, pixels=None if pixels is None else tuple(pixels),
                   amplitude=amplitude, workers=1)
    fast = np.sort(run(mem, frame, scene, cfg).samples, axis=1)
    gts = np.sort(gt, axis=1)
    return np.array([wasserstein1_sorted(fast[i], gts[i]) for i in range(gt.shape[0])])


def fastpath_compare(mem, frame, scene, k, ground_truth, pixels=None, seed: int = 0, p: float = 0.9,
                     trials: int = 100, fast_trials: int = 100, amplitude: float = 1.0,
                     sampler=None) -> FastPathComparison:
    """Accuracy of a stratified k-sample run and the pseudorandom run size that matches it.

    The target distance is the ``p`` quantile, over ``fast_trials`` seeds, of
    the worst per-pixel W1 the stratified run reaches. The cutoff is the
    :func:`eqmc_cutoff` of plain pseudorandom Monte Carlo for that target,
    so ``iteration_ratio`` says how many more conversions plain sampling
    needs for the same accuracy at the same confidence.
    """
    per_seed = np.array([
        fastpath_w1(mem, frame, scene, k, ground_truth, seed=_trial_seed(seed, k, 1_000_000 + t), pixels=pixels,
                    amplitude=amplitude)
        for t in range(fast_trials)
    ])
    target = float(np.quantile(per_seed.max(axis=1), p, method="higher"))
    if sampler is None:
        sampler = mc_sampler(mem, frame, scene, pixels=pixels, amplitude=amplitude)
    report = eqmc_cutoff(ground_truth, target, p=p, trials=trials, seed=seed + 1, sampler=sampler, m_min=k // 4 or 1)
    return FastPathComparison(per_seed[0], target, report, k)


# --- convergence ----------------------------------------------------------


@dataclass(frozen=True)
class ConvergencePoint:
    n: int
    median_w1: float


def convergence(mem, frame, scene, ground_truth, ns=(1000, 4000, 16000, 64000), pixels=None, repeats: int = 5,
                seed: int = 1, amplitude: float = 1.0):
    """Median per-pixel W1 to the ground truth at each run size, and the log-log slope."""
    gt = np.sort(_gt_matrix(ground_truth), axis=1)
    points = []
    for n in ns:
        vals = []
        for r in range(repeats):
            cfg = McConfig(iterations=n, master_seed=_trial_seed(seed, n, r), pixels=None if pixels is None else
                           tuple(pixels), amplitude=amplitude, block_size=16384, workers=1)
            s = np.sort(run(mem, frame, scene, cfg).samples, axis=1)
            vals.extend(wasserstein1_sorted(s[i], gt[i]) for i in range(gt.shape[0]))
        points.append(ConvergencePoint(int(n), float(np.median(vals))))
    slope = float(np.polyfit(np.log([pt.n for pt in points]), np.log([pt.median_w1 for pt in points]), 1)[0])
    return points, slope
