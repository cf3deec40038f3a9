import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uqsense import fixtures
from uqsense.conversion import TemperatureFrameDistribution
from uqsense.edges import (SHAPE, CannyConfig, canny, edge_map_json, edge_probability, false_positive_stats,
                           filter_edges, per_sample_edges, read_pgm, write_edge_map, write_pgm,
                           write_probability_pgm)
from uqsense.errors import ConfigError, FormatError

skimage_feature = pytest.importorskip("skimage.feature")


def _sk(grid, cfg=CannyConfig()):
    g = (grid - grid.min()) / (grid.max() - grid.min())
    return skimage_feature.canny(g, sigma=cfg.gaussian_sigma, low_threshold=cfg.low_frac * _peak(g, cfg),
                                 high_threshold=cfg.high_frac * _peak(g, cfg), mode=cfg.border_mode)


def _peak(g, cfg):
    from scipy import ndimage as ndi
    s = ndi.gaussian_filter(g, cfg.gaussian_sigma, mode=cfg.border_mode)
    return np.hypot(ndi.sobel(s, 0, mode=cfg.border_mode), ndi.sobel(s, 1, mode=cfg.border_mode)).max()


def test_constant_frame_has_no_edges():
    assert not canny(np.full(768, 42.0)).any()


@pytest.mark.parametrize("col", [5, 16, 26])
def test_vertical_step_matches_reference_detector(col):
    grid = fixtures.step_scene(30.0, 40.0, col).reshape(SHAPE)
    ours = canny(grid)
    assert np.array_equal(ours, _sk(grid))
    assert np.array_equal(np.flatnonzero(ours.any(axis=0)), [col])
    assert ours.sum() == SHAPE[0] - 2


@pytest.mark.parametrize("row", [4, 12, 19])
def test_horizontal_step_matches_reference_detector(row):
    grid = np.full(SHAPE, 20.0)
    grid[row] = 25.0
    grid[row + 1:] = 30.0
    ours = canny(grid)
    assert np.array_equal(ours, _sk(grid))
    assert np.array_equal(np.flatnonzero(ours.any(axis=1)), [row])


def test_half_step_gives_single_column():
    grid = np.full(SHAPE, 30.0)
    grid[:, 16:] = 40.0
    e = canny(grid)
    assert np.array_equal(np.flatnonzero(e.any(axis=0)), [16])


@settings(max_examples=30, deadline=None)
@given(st.floats(-50, 200), st.floats(0.01, 100))
def test_offset_and_scale_invariance(offset, scale):
    grid = fixtures.step_scene(30.0, 33.0).reshape(SHAPE)
    grid = grid + np.random.default_rng(0).normal(0, 0.3, SHAPE)
    assert np.array_equal(canny(grid), canny(grid * scale + offset))


def test_config_validation():
    with pytest.raises(ConfigError):
        CannyConfig(gaussian_sigma=0)
    with pytest.raises(ConfigError):
        CannyConfig(low_frac=0.5, high_frac=0.2)
    with pytest.raises(ConfigError):
        CannyConfig(border_mode="bogus")


def _dist(rng, n, noise=0.3, hot=33.0):
    base = fixtures.step_scene(30.0, hot)
    return TemperatureFrameDistribution(base[:, None] + rng.normal(0, noise, (768, n)))


def test_degenerate_distribution_gives_binary_probability():
    base = fixtures.step_scene(30.0, 33.0)
    dist = TemperatureFrameDistribution(np.repeat(base[:, None], 7, axis=1))
    prob = edge_probability(dist)
    assert np.array_equal(prob, canny(base).astype(float))


def test_single_frame_probability_is_binary(rng):
    prob = edge_probability(_dist(rng, 5), m=1)
    assert set(np.unique(prob)) <= {0.0, 1.0}


def test_probability_is_frequency(rng):
    dist = _dist(rng, 40, noise=1.0)
    maps = list(per_sample_edges(dist))
    assert np.array_equal(edge_probability(dist), np.mean(maps, axis=0))


def test_probability_needs_full_frame(rng):
    with pytest.raises(FormatError):
        edge_probability(TemperatureFrameDistribution(rng.normal(size=(4, 3)), pixels=[0, 1, 2, 3]))
    with pytest.raises(ConfigError):
        edge_probability(_dist(rng, 3), m=4)


def test_filter_thresholds(rng):
    prob = edge_probability(_dist(rng, 60, noise=1.0))
    assert not filter_edges(prob, 1.0).any()
    assert np.array_equal(filter_edges(prob, 0.0), prob > 0)
    sizes = [filter_edges(prob, t).sum() for t in np.linspace(0, 1, 21)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    with pytest.raises(ConfigError):
        filter_edges(prob, 1.5)


def test_filtering_removes_noise_edges(rng):
    dist = _dist(rng, 200, noise=0.3)
    ref = canny(fixtures.step_scene(30.0, 33.0))
    kept = filter_edges(edge_probability(dist), 0.99)
    assert not (kept & ~ref).any()
    assert kept[ref].mean() > 0.9


def test_false_positive_stats_example():
    ref = np.zeros((2, 3), dtype=bool)
    ref[0, 0] = True
    maps = [ref.copy(), np.ones((2, 3), dtype=bool), np.zeros((2, 3), dtype=bool)]
    s = false_positive_stats(maps, ref)
    assert s.counts == (0, 5, 0) and s.max == 5
    assert s.mean == pytest.approx(5 / 3) and s.fraction_of_frame == pytest.approx(5 / 18)
    assert s.std == pytest.approx(np.std([0, 5, 0]))
    with pytest.raises(FormatError):
        false_positive_stats([np.zeros((3, 3), bool)], ref)


def test_pgm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 65536, SHAPE)
    write_pgm(tmp_path / "a.pgm", img, maxval=65535)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    edges = rng.random(SHAPE) > 0.5
    write_edge_map(tmp_path / "e.pgm", edges)
    assert np.array_equal(read_pgm(tmp_path / "e.pgm") == 255, edges)
    write_probability_pgm(tmp_path / "p.pgm", np.full(SHAPE, 0.5))
    assert np.all(read_pgm(tmp_path / "p.pgm") == 32768)
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FormatError):
        read_pgm(tmp_path / "bad.pgm")


def test_edge_json_shape():
    import json
    d = json.loads(edge_map_json(np.eye(3, dtype=bool)))
    assert d["rows"] == 3 and d["edges"][1] == [0, 1, 0]
