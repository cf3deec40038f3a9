"""Synthetic calibration memories, frames and scenes.

The reference memory reproduces the published scalar calibration values of
sensor ``0x1f15cb2d0189``. Its per-pixel data is synthetic: sensitivity
falls off towards the array border (vignetting), so border pixels carry
more relative representation uncertainty than central ones.
"""

from __future__ import annotations

import numpy as np

from . import eeprom
from .conversion import C0, RawFrame, SceneConditions, convert_raw
from .errors import ConfigError, DomainError
from .extraction import Conventional, extract

REFERENCE_SENSOR_ID = "0x1f15cb2d0189"

# Scalar calibration parameters as extracted from the reference sensor.
REFERENCE_VALUES = {
    "K_Vdd": -3040,
    "Vdd25": -12864,
    "Kv_PTAT": 0.001953125,
    "Kt_PTAT": 42.75,
    "V_PTAT25": 12194,
    "alpha_PTAT": 9,
    "GAIN": 6276,
    "TGC": 0,
    "Kv_CP": 0.375,
    "Kta_CP": 0.00439453125,
    "Resolution_EE": 2,
    "CalibrationMode_EE": 128,
    "Ks_Ta": -0.001220703125,
    "Ks_To": [-0.000396728515625, -0.00045013427734375, -0.00060272216796875, -0.00080108642578125],
    "CT": [-40, 0, 120, 240],
    "alpha_CP": [3.6670826375484467e-09, 3.5238372220192105e-09],
    "CP_Offset": [-80, -75],
    "IL_Chess": [0.9375, 4.0, 0.0],
    "BrokenPixels": [],
    "OutlierPixels": [],
}

# Flattened expected rows, including the derived ones.
REFERENCE_ROWS = {
    "K_Vdd": -3040,
    "Vdd25": -12864,
    "Kv_PTAT": 0.001953125,
    "Kt_PTAT": 42.75,
    "V_PTAT25": 12194,
    "alpha_PTAT": 9,
    "GAIN": 6276,
    "TGC": 0,
    "Kv_CP": 0.375,
    "Kta_CP": 0.00439453125,
    "Resolution_EE": 2,
    "CalibrationMode_EE": 128,
    "Ks_Ta": -0.001220703125,
    "Ks_To[0]": -0.000396728515625,
    "Ks_To[1]": -0.00045013427734375,
    "Ks_To[2]": -0.00060272216796875,
    "Ks_To[3]": -0.00080108642578125,
    "Ks_To[4]": -0.0,
    "CT[0]": -40,
    "CT[1]": 0,
    "CT[2]": 120,
    "CT[3]": 240,
    "s_alpha": 11,
    "s_KTa": 13,
    "s_KV": 7,
    "alpha_CP0": 3.6670826375484467e-09,
    "alpha_CP1": 3.5238372220192105e-09,
    "CP_Offset[0]": -80,
    "CP_Offset[1]": -75,
    "IL_Chess[0]": 0.9375,
    "IL_Chess[1]": 4.0,
    "IL_Chess[2]": 0.0,
}

# EE scale nibbles and pixel-average words of the reference memory.
REFERENCE_SCALES = {
    "alpha_scale": 8,
    "acc_row_scale": 7,
    "acc_col_scale": 7,
    "acc_rem_scale": 4,
    "alpha_ref": 14403,
    "occ_row_scale": 2,
    "occ_col_scale": 2,
    "occ_rem_scale": 1,
    "offset_ref": -60,
    "kv_scale": 3,
    "kta_scale1": 3,
    "kta_scale2": 1,
}


def _profile(k: int, amplitude: int) -> np.ndarray:
    """Signed 4-bit bowl: ``amplitude`` at the centre, ``-amplitude - 1`` at the ends."""
    x = (np.arange(k) - (k - 1) / 2) / ((k - 1) / 2)
    return np.round(amplitude - (2 * amplitude + 1) * x * x).astype(int)


def reference_pixel_raw(seed: int = 0x1F15) -> dict:
    """Synthetic per-pixel calibration fields (rows, columns and remainders)."""
    rng = np.random.default_rng(seed)
    return {
        "acc_row": _profile(eeprom.ROWS, 7),
        "acc_col": _profile(eeprom.COLS, 7),
        "pix_alpha": rng.integers(-8, 8, eeprom.N_PIXELS),
        "occ_row": rng.integers(-3, 4, eeprom.ROWS),
        "occ_col": rng.integers(-3, 4, eeprom.COLS),
        "pix_offset": rng.integers(-12, 13, eeprom.N_PIXELS),
        "kta_ro_co": 20,
        "kta_ro_ce": 18,
        "kta_re_co": 19,
        "kta_re_ce": 17,
        "pix_kta": rng.integers(-2, 4, eeprom.N_PIXELS),
        "kv_ro_co": 5,
        "kv_ro_ce": 4,
        "kv_re_co": 4,
        "kv_re_ce": 3,
    }


def reference_memory() -> eeprom.CalibrationMemory:
    """Memory image of the reference sensor: published scalars, synthetic pixel data."""
    raw = {**REFERENCE_SCALES, **reference_pixel_raw()}
    return eeprom.inverse_encode(REFERENCE_VALUES, raw, sensor_id=REFERENCE_SENSOR_ID)


def flat_memory() -> eeprom.CalibrationMemory:
    """Reference scalars with every per-pixel parameter identical."""
    raw = dict(REFERENCE_SCALES)
    raw.update({"kta_ro_co": 18, "kta_ro_ce": 18, "kta_re_co": 18, "kta_re_ce": 18})
    raw.update({"kv_ro_co": 4, "kv_ro_ce": 4, "kv_re_co": 4, "kv_re_ce": 4})
    return eeprom.inverse_encode(REFERENCE_VALUES, raw, sensor_id=REFERENCE_SENSOR_ID)


def _ptat_registers(params, ambient_c: float, vptat: int = 1600) -> tuple[int, int]:
    target = ((ambient_c - 25) * params.kt_ptat + params.v_ptat25) * (1 + params.kv_ptat * 0.0)
    vbe = vptat * (2.0**18 / target - params.alpha_ptat)
    vbe = int(round(vbe))
    if not -32768 <= vbe <= 32767:
        raise ConfigError(f"ambient {ambient_c} degC is outside the synthesizable range")
    return vptat, vbe


def synthesize_frame(mem: eeprom.CalibrationMemory, target_c, ambient_c: float = 25.0,
                     scene: SceneConditions = SceneConditions(), subpage: int = 0, iterations: int = 48) -> RawFrame:
    """Raw frame whose conventional conversion approximates ``target_c`` (768 values, degC).

    Pixel counts are found by bisection on the conversion (monotone in the
    count) and rounded to integers, so the reproduction is exact only up to
    one count.
    """
    target = np.broadcast_to(np.asarray(target_c, dtype=float), (eeprom.N_PIXELS,))
    params = extract(mem, Conventional)
    vptat, vbe = _ptat_registers(params, ambient_c)
    frame = RawFrame(
        pixels=np.zeros(eeprom.N_PIXELS, dtype=int),
        vdd_raw=int(round(params.vdd25)),
        vptat_raw=vptat,
        vbe_raw=vbe,
        gain_raw=int(round(params.gain)),
        cp_raw=(int(round(params.cp_offset[0])), int(round(params.cp_offset[1]))),
        subpage=subpage,
        meta={"target_c": [float(t) for t in target], "ambient_c": ambient_c},
    )
    lo = np.full(eeprom.N_PIXELS, -32768.0)
    hi = np.full(eeprom.N_PIXELS, 32767.0)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        with np.errstate(invalid="ignore"):
            to = convert_raw(frame, params, scene, counts=mid)
        above = ~(to < target)  # NaN counts as too cold: it sits at the low end
        above &= np.isfinite(to)
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    counts = np.round(0.5 * (lo + hi)).astype(int)
    counts = np.clip(counts, -32768, 32767)
    check = convert_raw(frame, params, scene, counts=counts)
    if not np.all(np.isfinite(check)):
        raise DomainError("target temperatures are outside the convertible range")
    return RawFrame(pixels=counts, vdd_raw=frame.vdd_raw, vptat_raw=vptat, vbe_raw=vbe, gain_raw=frame.gain_raw,
                    cp_raw=frame.cp_raw, subpage=subpage, meta=frame.meta)


def step_scene(cold_c: float = 30.0, hot_c: float = 40.0, column: int = 16) -> np.ndarray:
    """Vertical step: cold left, hot right, and one midpoint column at ``column``.

    The midpoint column makes the edge location unambiguous: the horizontal
    gradient peaks on that column alone.
    """
    if not 1 <= column <= eeprom.COLS - 2:
        raise ConfigError("step column must leave one column on each side")
    grid = np.full((eeprom.ROWS, eeprom.COLS), float(cold_c))
    grid[:, column] = 0.5 * (cold_c + hot_c)
    grid[:, column + 1:] = hot_c
    return grid.reshape(-1)


def kelvin(celsius):
    return np.asarray(celsius, dtype=float) + C0
