import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from uqsense import eeprom, fixtures
from uqsense.conversion import (C0, DATASHEET, NEGATED, STEFAN_BOLTZMANN, RawFrame, SceneConditions,
                                TemperatureFrameDistribution, ambient_temperature, compute_tar, compute_to_physics,
                                convert_frame, convert_raw, load_frame, read_frame_csv, save_frame,
                                stefan_boltzmann_power, supply_voltage, thermocouple_voltage, write_frame_csv)
from uqsense.ensemble import EnsembleContext, UncertainValue
from uqsense.errors import ConfigError, DomainError, FormatError
from uqsense.extraction import Uncertain, extract

from driver_port import calculate_to, extract as port_extract


def test_tar_emissivity_one():
    ta = 300.0
    assert compute_tar(1.0, 290.0, ta, DATASHEET) == ta**4
    assert compute_tar(1.0, 290.0, ta, NEGATED) == -(ta**4)


def test_tar_equal_temperatures():
    t = 295.15
    assert compute_tar(0.95, t, t) == pytest.approx(t**4, rel=1e-15)


def test_tar_rejects_zero_emissivity():
    with pytest.raises(DomainError):
        compute_tar(0.0, 290.0, 290.0)


def test_physics_constructed_inverse():
    # pick T_o, solve the forward model for V numerically, then invert
    alpha, s, tar, to = 5e-8, 0.01, compute_tar(0.95, 290.0, 298.0), 320.0

    def resid(v):
        inner = (v / alpha + tar) ** 0.25
        return v / (alpha * s * (inner - C0)) + tar - to**4

    v = brentq(resid, 0.0, 1e3, xtol=1e-30, rtol=1e-15)
    assert compute_to_physics(v, alpha, s, tar) == pytest.approx(to, rel=1e-12)


def test_physics_equilibrium():
    ta = 301.0
    assert compute_to_physics(0.0, 5e-8, 0.01, ta**4) == pytest.approx(ta, rel=1e-15)


def test_physics_negative_radicand_reports_sample():
    v = UncertainValue([0.0, 0.0, -1e3])
    with pytest.raises(DomainError) as exc:
        compute_to_physics(v, 5e-8, 0.01, 290.0**4)
    assert exc.value.index == 2


def test_stefan_boltzmann():
    assert stefan_boltzmann_power(1.0, 1.0) == STEFAN_BOLTZMANN
    assert stefan_boltzmann_power(0.5, 300.0) == stefan_boltzmann_power(1.0, 300.0) / 2
    assert stefan_boltzmann_power(0.95, 373.15) == pytest.approx(0.95 * 5.670374419e-8 * 373.15**4)


def test_thermocouple():
    assert thermocouple_voltage(58.7e-6, 300.0, 300.0) == 0
    assert thermocouple_voltage(58.7e-6, 301.0, 300.0) == pytest.approx(58.7e-6)
    assert thermocouple_voltage(58.7e-6, 310.0, 300.0) == pytest.approx(10 * thermocouple_voltage(58.7e-6, 301, 300))


def test_scene_validation():
    with pytest.raises(ConfigError):
        SceneConditions(emissivity=0.0)
    with pytest.raises(ConfigError):
        SceneConditions(reflected_k=-1.0)


def test_aux_registers(ref_params, flat_frame):
    assert supply_voltage(flat_frame, ref_params) == pytest.approx(3.3, abs=1e-12)
    assert ambient_temperature(flat_frame, ref_params) == pytest.approx(25.0, abs=0.01)


@pytest.mark.parametrize("restored", [True, False])
def test_frame_matches_driver_port(ref_mem, ref_params, step_frame, restored):
    d = port_extract([int(w) for w in ref_mem.words])
    want = calculate_to(d, [int(w) for w in step_frame.to_words()], 0.95, restored=restored)
    got = convert_frame(step_frame, ref_params, emulate_rediscretization=restored)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


def test_driver_restorage_changes_little(ref_params, step_frame):
    a = convert_frame(step_frame, ref_params)
    b = convert_frame(step_frame, ref_params, emulate_rediscretization=True)
    assert 0 < np.abs(a - b).max() < 0.01


def test_interleaved_mode_applies_chess_corrections(ref_mem, ref_params, step_frame):
    words = step_frame.to_words()
    words[832] = 0x0901  # chess bit cleared: the EE calibration mode no longer matches
    frame = RawFrame.from_words(words)
    d = port_extract([int(w) for w in ref_mem.words])
    want = calculate_to(d, [int(w) for w in frame.to_words()], 0.95, restored=False)
    np.testing.assert_allclose(convert_frame(frame, ref_params), want, atol=1e-9)


def test_synthesized_frame_hits_targets(ref_params, step_frame):
    got = convert_frame(step_frame, ref_params)
    assert np.abs(got - fixtures.step_scene(30.0, 33.0)).max() < 0.15  # one count is ~0.2 K


def test_flat_calibration_gives_flat_output():
    mem = fixtures.flat_memory()
    p = extract(mem)
    frame = fixtures.synthesize_frame(mem, 50.0)
    frame = RawFrame(pixels=np.full(768, frame.pixels[0]), vdd_raw=frame.vdd_raw, vptat_raw=frame.vptat_raw,
                     vbe_raw=frame.vbe_raw, gain_raw=frame.gain_raw, cp_raw=frame.cp_raw)
    out = convert_frame(frame, p)
    assert out.max() - out.min() == 0


def test_monotone_in_counts(ref_params, flat_frame):
    counts = np.linspace(0, 3000, 301)
    to = np.array([convert_raw(flat_frame, ref_params, counts=np.full(768, c))[400] for c in counts])
    assert np.all(np.diff(to) > 0)


def test_zero_noise_ensemble_is_bit_identical(ref_mem, ref_params, step_frame):
    dist = convert_frame(step_frame, extract(ref_mem, Uncertain(EnsembleContext(n=2), 0.0)))
    conv = convert_frame(step_frame, ref_params)
    assert np.array_equal(dist.samples[:, 0], conv) and np.array_equal(dist.samples[:, 1], conv)


def test_smaller_alpha_gives_larger_spread():
    # identical calibration except the per-pixel sensitivity remainder
    raw = dict(fixtures.REFERENCE_SCALES)
    raw.update({k: 18 for k in ("kta_ro_co", "kta_ro_ce", "kta_re_co", "kta_re_ce")})
    raw.update({k: 4 for k in ("kv_ro_co", "kv_ro_ce", "kv_re_co", "kv_re_ce")})
    raw["pix_alpha"] = np.tile(np.arange(-30, 30, 60 / 32).astype(int)[:32], 24)
    mem = eeprom.inverse_encode(fixtures.REFERENCE_VALUES, raw)
    frame = fixtures.synthesize_frame(mem, 90.0)
    row = np.arange(12 * 32, 13 * 32)
    dist = convert_frame(frame, extract(mem, Uncertain(EnsembleContext(n=20000, master_seed=2)), pixels=row))
    alpha = extract(mem).alpha[row]
    std = dist.std()
    order = np.argsort(alpha)
    # spearman-style: spread decreases as alpha increases
    assert np.corrcoef(np.argsort(order), np.argsort(np.argsort(std)))[0, 1] < -0.7
    assert std[order[:8]].mean() > std[order[-8:]].mean()


def test_celsius_is_kelvin_minus_c0(ref_params, flat_frame):
    scene = SceneConditions(ambient_k=298.15, reflected_k=298.15, emissivity=1.0)
    p = ref_params
    to = convert_frame(flat_frame, p, scene)
    # with no ambient offset the radicand is V/alpha_c + Ta^4 up to the Ks_To correction
    assert np.all(to > -C0) and np.all(np.isfinite(to))


def test_negative_radicand_carries_pixel(ref_params, flat_frame):
    px = flat_frame.pixels.copy()
    px[37] = -30000
    frame = RawFrame(px, flat_frame.vdd_raw, flat_frame.vptat_raw, flat_frame.vbe_raw, flat_frame.gain_raw)
    with pytest.raises(DomainError) as exc:
        convert_frame(frame, ref_params)
    assert exc.value.pixel == 37


def test_mode_mismatch(ref_params, flat_frame):
    with pytest.raises(ConfigError):
        convert_frame(flat_frame, ref_params, mode="uncertain")


def test_broken_pixels_read_absolute_zero(step_frame):
    raw = {**fixtures.REFERENCE_SCALES, **fixtures.reference_pixel_raw()}
    mem = eeprom.inverse_encode({**fixtures.REFERENCE_VALUES, "BrokenPixels": [3]}, raw)
    out = convert_frame(step_frame, extract(mem))
    assert out[3] == -C0 and np.all(out[4:] > 0)


def test_frame_roundtrips(tmp_path, step_frame):
    save_frame(step_frame, tmp_path / "f.json")
    back = load_frame(tmp_path / "f.json")
    np.testing.assert_array_equal(back.pixels, step_frame.pixels)
    assert back.to_words().tolist() == step_frame.to_words().tolist()
    assert RawFrame.from_words(step_frame.to_words()).cp_raw == step_frame.cp_raw
    write_frame_csv(np.arange(768.0), tmp_path / "t.csv")
    np.testing.assert_array_equal(read_frame_csv(tmp_path / "t.csv"), np.arange(768.0))


def test_frame_validation():
    with pytest.raises(FormatError):
        RawFrame(np.zeros(10), 0, 0, 0, 1)
    with pytest.raises(FormatError):
        RawFrame(np.zeros(768), 0, 0, 0, 1, subpage=2)
    with pytest.raises(FormatError):
        RawFrame.from_json("{}")


def test_distribution_file_roundtrip(tmp_path, rng):
    d = TemperatureFrameDistribution(rng.normal(size=(768, 5)))
    d.save(tmp_path / "d.bin")
    back = TemperatureFrameDistribution.load(tmp_path / "d.bin")
    np.testing.assert_array_equal(back.samples, d.samples)
    assert back.full_frame and back[3].n == 5


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1.0), st.floats(250.0, 320.0))
def test_datasheet_tar_is_positive_for_physical_inputs(eps, t):
    assert compute_tar(eps, t - 8, t) > 0
    assert compute_tar(eps, t - 8, t, NEGATED) < 0
