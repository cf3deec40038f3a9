import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uqsense.conversion import RawFrame, SceneConditions, TemperatureFrameDistribution, convert_frame, convert_raw
from uqsense.ensemble import PSEUDORANDOM, read_ensembles, wasserstein1
from uqsense.errors import ConfigError, DomainError, UnreachableTarget
from uqsense.extraction import extract
from uqsense.montecarlo import (FastPath, McConfig, _trial_seed, bootstrap_sampler, convergence, eqmc_cutoff,
                                fastpath_w1, run, worker_count)

PIXELS = (0, 47, 400, 767)


def test_zero_amplitude_equals_conventional(ref_mem, ref_params, step_frame):
    dist = run(ref_mem, step_frame, cfg=McConfig(iterations=2, amplitude=0.0))
    conv = convert_frame(step_frame, ref_params)
    assert np.array_equal(dist.samples, np.column_stack([conv, conv]))


@pytest.mark.parametrize("workers,block", [(2, 300), (8, 97), (1, 5000)])
def test_independent_of_workers_and_blocks(ref_mem, flat_frame, workers, block):
    base = run(ref_mem, flat_frame, cfg=McConfig(iterations=1000, master_seed=5, workers=1, block_size=1000))
    other = run(ref_mem, flat_frame, cfg=McConfig(iterations=1000, master_seed=5, workers=workers, block_size=block))
    assert np.array_equal(base.samples, other.samples)


def test_seed_changes_samples(ref_mem, flat_frame):
    a = run(ref_mem, flat_frame, cfg=McConfig(iterations=100, master_seed=1, pixels=PIXELS))
    b = run(ref_mem, flat_frame, cfg=McConfig(iterations=100, master_seed=2, pixels=PIXELS))
    assert not np.array_equal(a.samples, b.samples)


def test_pixel_subset_reuses_streams(ref_mem, flat_frame):
    full = run(ref_mem, flat_frame, cfg=McConfig(iterations=300, master_seed=3))
    sub = run(ref_mem, flat_frame, cfg=McConfig(iterations=300, master_seed=3, pixels=PIXELS))
    assert np.array_equal(full.samples[list(PIXELS)], sub.samples)


def test_memmap_output_matches_memory(tmp_path, ref_mem, flat_frame):
    cfg = McConfig(iterations=500, master_seed=9, pixels=PIXELS)
    mem_run = run(ref_mem, flat_frame, cfg=cfg)
    disk = run(ref_mem, flat_frame, cfg=cfg, out_path=tmp_path / "e.bin")
    np.testing.assert_array_equal(np.asarray(disk.samples), mem_run.samples)
    recs = read_ensembles(tmp_path / "e.bin")
    assert len(recs) == len(PIXELS) and np.array_equal(recs[2], mem_run.samples[2])


def test_mean_is_near_conventional(ref_mem, ref_params, flat_frame):
    dist = run(ref_mem, flat_frame, cfg=McConfig(iterations=20000, pixels=PIXELS))
    conv = convert_frame(flat_frame, ref_params)[list(PIXELS)]
    assert np.all(np.abs(dist.mean() - conv) < 3 * dist.std())
    assert np.all(dist.std() > 0)


def test_w1_halves_when_iterations_quadruple(ref_mem, flat_frame):
    cfg = McConfig(iterations=200_000, master_seed=77, pixels=(400,), block_size=65536)
    gt = run(ref_mem, flat_frame, cfg=cfg)
    pts, slope = convergence(ref_mem, flat_frame, SceneConditions(), gt, ns=(4000, 16000), pixels=(400,), repeats=9)
    ratio = pts[0].median_w1 / pts[1].median_w1
    assert 1.4 < ratio < 2.9


def _domain_edge_frame(mem, frame, pixel=5):
    params = extract(mem)
    with np.errstate(invalid="ignore"):
        for c in range(-1024, 0):
            if np.isfinite(convert_raw(frame, params, counts=np.full(768, c))[pixel]):
                break
    px = frame.pixels.copy()
    px[pixel] = c
    return RawFrame(px, frame.vdd_raw, frame.vptat_raw, frame.vbe_raw, frame.gain_raw, frame.cp_raw)


def test_invalid_samples_abort_or_are_dropped(ref_mem, flat_frame):
    frame = _domain_edge_frame(ref_mem, flat_frame)
    with pytest.raises(DomainError) as exc:
        run(ref_mem, frame, cfg=McConfig(iterations=500))
    assert exc.value.pixel == 5 and exc.value.index is not None
    dist = run(ref_mem, frame, cfg=McConfig(iterations=500, skip_invalid=True))
    assert dist.invalid_count > 0 and dist.n + dist.invalid_count == 500
    assert np.all(np.isfinite(dist.samples))


def test_fast_path_size_and_sampling(ref_mem, flat_frame):
    d = run(ref_mem, flat_frame, cfg=McConfig(mode=FastPath(64), pixels=PIXELS))
    assert d.n == 64
    with pytest.raises(ConfigError):
        FastPath(1)
    with pytest.raises(ConfigError):
        FastPath(8, "sobol")


def test_stratified_beats_pseudorandom(ref_mem, flat_frame):
    gt = run(ref_mem, flat_frame, cfg=McConfig(iterations=100_000, master_seed=11, pixels=(400,)))
    strat = [fastpath_w1(ref_mem, flat_frame, SceneConditions(), 256, gt, seed=s, pixels=(400,))[0]
             for s in range(20)]
    plain = [fastpath_w1(ref_mem, flat_frame, SceneConditions(), 256, gt, seed=s, pixels=(400,),
                         sampling=PSEUDORANDOM)[0] for s in range(20)]
    assert np.median(strat) < 0.75 * np.median(plain)


def test_fast_path_against_itself_is_zero(ref_mem, flat_frame):
    cfg = McConfig(mode=FastPath(128), master_seed=4, pixels=PIXELS)
    own = run(ref_mem, flat_frame, cfg=cfg)
    assert np.all(fastpath_w1(ref_mem, flat_frame, SceneConditions(), 128, own, seed=4, pixels=PIXELS) == 0)


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("UQSENSE_THREADS", "2")
    assert worker_count(8) == 2
    monkeypatch.setenv("UQSENSE_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count(4)


def test_trial_seed_is_stable():
    assert _trial_seed(0, 16, 3) == _trial_seed(0, 16, 3)
    assert len({_trial_seed(0, m, t) for m in (8, 16) for t in range(10)}) == 20


# --- equal-accuracy cutoff -------------------------------------------------

GT = np.random.default_rng(123).normal(size=(1, 4000))


def test_infinite_target_is_reached_immediately():
    assert eqmc_cutoff(GT, np.inf, m_min=3).cutoff_iterations == 3


def test_unreachable_target():
    with pytest.raises(UnreachableTarget):
        eqmc_cutoff(GT, 0.0, trials=5, m_max=64)


def test_bootstrap_of_full_sample_matches_sqrt_law():
    # bootstrap W1 of a standard normal falls roughly like 1/sqrt(m)
    small = eqmc_cutoff(GT, 0.2, trials=40).cutoff_iterations
    tight = eqmc_cutoff(GT, 0.1, trials=40).cutoff_iterations
    assert 2.5 < tight / small < 6


@settings(max_examples=12, deadline=None)
@given(st.floats(0.05, 0.4), st.floats(0.05, 0.4), st.floats(0.55, 0.95), st.floats(0.55, 0.95))
def test_cutoff_is_monotone(t1, t2, p1, p2):
    lo_t, hi_t = sorted((t1, t2))
    lo_p, hi_p = sorted((p1, p2))
    m = lambda t, p: eqmc_cutoff(GT, t, p=p, trials=20).cutoff_iterations  # noqa: E731
    assert m(lo_t, lo_p) >= m(hi_t, lo_p)
    assert m(lo_t, hi_p) >= m(lo_t, lo_p)


def test_bootstrap_sampler_is_aligned():
    gt = np.vstack([np.arange(100.0), np.arange(100.0) * 2])
    draw = bootstrap_sampler(gt)(50, 7)
    assert np.array_equal(draw[1], draw[0] * 2)


def test_cutoff_validation():
    with pytest.raises(ConfigError):
        eqmc_cutoff(GT, 0.1, p=1.0)
    with pytest.raises(ConfigError):
        eqmc_cutoff(GT, -1.0)


def test_distribution_from_run_is_full_frame(ref_mem, flat_frame):
    d = run(ref_mem, flat_frame, cfg=McConfig(iterations=10))
    assert isinstance(d, TemperatureFrameDistribution) and d.full_frame and d.samples.shape == (768, 10)
    assert wasserstein1(d[0], d[0]) == 0
