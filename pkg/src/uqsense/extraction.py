"""Calibration parameter extraction, conventional and uncertain.

The formulas follow the manufacturer driver. In uncertain mode every raw
datum flagged ``uncertain`` in the field catalog receives additive uniform
noise on [-a/2, a/2) (``a`` = amplitude, default 1). The catalog flag is the
injection annotation; :meth:`_Reader.datum` is the single injection point and
sits where the rules require it:

1. after the logical shift that brings the bits to their significance,
2. after two's-complement restoration of the sign,
3. before the datum meets any value derived from another parameter,
4. before any multiplication or division applied to it.

Each datum owns one named noise stream, realized once per context, so a
datum read by several extraction routines is the same random variable
everywhere (the sample-once rule).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import eeprom
from .ensemble import EnsembleContext, UncertainValue, samples_of, summarize
from .errors import ConfigError, DomainError

SCALE_ALPHA = 0.000001


class _ConventionalMode:
    def __repr__(self):
        return "Conventional"


Conventional = _ConventionalMode()


@dataclass(frozen=True)
class Uncertain:
    ctx: EnsembleContext
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ConfigError(f"noise amplitude must be non-negative, got {self.amplitude}")


class UncertainVector:
    """Per-pixel ensembles stored as one ``(pixels, n)`` array."""

    __slots__ = ("_samples",)

    def __init__(self, samples):
        arr = np.array(samples, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ConfigError("UncertainVector needs a (pixels, n) array")
        arr.flags.writeable = False
        self._samples = arr

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def n(self) -> int:
        return self._samples.shape[1]

    def __len__(self):
        return self._samples.shape[0]

    def __getitem__(self, i) -> UncertainValue:
        return UncertainValue(self._samples[i])

    def mean(self) -> np.ndarray:
        return self._samples.mean(axis=1)


@dataclass
class CalibrationParameters:
    mode: object
    pixels: np.ndarray
    k_vdd: object
    vdd25: object
    kv_ptat: object
    kt_ptat: object
    v_ptat25: object
    alpha_ptat: object
    gain: object
    tgc: object
    kv_cp: object
    kta_cp: object
    resolution_ee: int
    calibration_mode_ee: int
    ks_ta: object
    ks_to: list
    ct: list
    s_alpha: int
    s_kta: int
    s_kv: int
    alpha_cp: list
    cp_offset: list
    il_chess: list
    broken_pixels: list
    outlier_pixels: list
    alpha: object
    offset: object
    kta: object
    kv: object
    ee_scales: dict = field(default_factory=dict)

    @property
    def uncertain(self) -> bool:
        return isinstance(self.mode, Uncertain)

    def scalar_rows(self) -> dict:
        """Scalar parameters keyed by their parameter-table names."""
        rows = {
            "K_Vdd": self.k_vdd,
            "Vdd25": self.vdd25,
            "Kv_PTAT": self.kv_ptat,
            "Kt_PTAT": self.kt_ptat,
            "V_PTAT25": self.v_ptat25,
            "alpha_PTAT": self.alpha_ptat,
            "GAIN": self.gain,
            "TGC": self.tgc,
            "Kv_CP": self.kv_cp,
            "Kta_CP": self.kta_cp,
            "Resolution_EE": self.resolution_ee,
            "CalibrationMode_EE": self.calibration_mode_ee,
            "Ks_Ta": self.ks_ta,
        }
        rows.update({f"Ks_To[{k}]": v for k, v in enumerate(self.ks_to)})
        rows.update({f"CT[{k}]": v for k, v in enumerate(self.ct)})
        rows.update({"s_alpha": self.s_alpha, "s_KTa": self.s_kta, "s_KV": self.s_kv})
        rows.update({"alpha_CP0": self.alpha_cp[0], "alpha_CP1": self.alpha_cp[1]})
        rows.update({f"CP_Offset[{k}]": v for k, v in enumerate(self.cp_offset)})
        rows.update({f"IL_Chess[{k}]": v for k, v in enumerate(self.il_chess)})
        return rows

    def vector_rows(self) -> dict:
        return {"alpha": self.alpha, "Offset": self.offset, "K_Ta": self.kta, "K_V": self.kv}


# Parameter-table row numbers, in table order.
ROW_NUMBERS = {
    name: f"R{i + 1}"
    for i, name in enumerate(
        ["K_Vdd", "Vdd25", "Kv_PTAT", "Kt_PTAT", "V_PTAT25", "alpha_PTAT", "GAIN", "TGC", "Kv_CP", "Kta_CP",
         "Resolution_EE", "CalibrationMode_EE", "Ks_Ta", "Ks_To[0]", "Ks_To[1]", "Ks_To[2]", "Ks_To[3]",
         "Ks_To[4]", "CT[0]", "CT[1]", "CT[2]", "CT[3]", "s_alpha", "s_KTa", "s_KV", "alpha_CP0", "alpha_CP1",
         "CP_Offset[0]", "CP_Offset[1]", "IL_Chess[0]", "IL_Chess[1]", "IL_Chess[2]", "BrokenPixels",
         "OutlierPixels", "alpha", "Offset", "K_Ta", "K_V"]
    )
}


class _Reader:
    """Reads raw data and injects representation noise."""

    def __init__(self, mem, mode, pixels):
        self.mem = mem
        self.cat = eeprom.catalog()
        self.pixels = pixels
        if isinstance(mode, Uncertain):
            self.ctx, self.amp = mode.ctx, float(mode.amplitude)
        else:
            self.ctx, self.amp = None, 0.0

    def _noise(self, stream):
        return self.amp * self.ctx.unit_noise(stream)

    def datum(self, name):
        """Scalar datum: int in conventional mode, float64 array in uncertain mode."""
        value = eeprom.read_field(self.mem, name)
        if self.ctx is None or not self.cat[name].uncertain:
            return value
        return value + self._noise(name)

    def ordinal(self, name) -> int:
        return eeprom.read_field(self.mem, name)

    def array(self, name):
        """Row/column data: shape (k,) or (k, n)."""
        raw = eeprom.read_array(self.mem, name)
        if self.ctx is None:
            return raw
        return raw[:, None] + np.stack([self._noise(f"{name}[{k}]") for k in range(raw.size)])

    def pixel(self, name):
        """Per-pixel data for the selected pixels: shape (P,) or (P, n)."""
        raw = eeprom.read_pixel_field(self.mem, name)[self.pixels]
        if self.ctx is None:
            return raw
        return raw[:, None] + np.stack([self._noise(f"{name}[{p}]") for p in self.pixels])

    def gather(self, arr, index):
        return arr[index]


def _pattern_split(pixels):
    # 0..3: (row odd/even) x (column odd/even) in driver order
    p = np.asarray(pixels)
    return 2 * (p // 32 - (p // 64) * 2) + p % 2


def _extract(mem, mode, pixels) -> dict:
    r = _Reader(mem, mode, pixels)
    out = {}

    # supply voltage
    out["k_vdd"] = r.datum("k_vdd") * 32
    out["vdd25"] = (r.datum("vdd25") - 256) * 32 - 8192

    # PTAT
    out["kv_ptat"] = r.datum("kv_ptat") / 4096
    out["kt_ptat"] = r.datum("kt_ptat") / 8
    out["v_ptat25"] = r.datum("vptat25") * 1
    out["alpha_ptat"] = r.datum("alpha_ptat") / 4 + 8

    out["gain"] = r.datum("gain") * 1
    out["tgc"] = r.datum("tgc") / 32
    out["resolution_ee"] = r.ordinal("resolution")
    out["ks_ta"] = r.datum("ks_ta") / 8192

    # ranges of the object-temperature sensitivity
    step = r.ordinal("temp_step") * 10
    ct2 = r.datum("ct3") * step
    ct3 = ct2 + r.datum("ct4") * step
    out["ct"] = [-40.0, 0.0, ct2, ct3]
    ks_to_scale = 2.0 ** (r.ordinal("ks_to_scale") + 8)
    out["ks_to"] = [r.datum(f"ks_to{k}") / ks_to_scale for k in range(4)] + [-0.0]

    # compensation pixel
    alpha_scale_cp = 2.0 ** (r.ordinal("alpha_scale") + 27)
    offset_sp0 = r.datum("offset_cp_sp0")
    offset_sp1 = r.datum("offset_cp_delta") + offset_sp0
    alpha_sp0 = r.datum("alpha_cp_sp0") / alpha_scale_cp
    alpha_sp1 = (1 + r.datum("alpha_cp_ratio") / 128) * alpha_sp0
    kta_scale1 = r.ordinal("kta_scale1") + 8
    kv_scale = r.ordinal("kv_scale")
    out["kta_cp"] = r.datum("kta_cp") / 2.0**kta_scale1
    out["kv_cp"] = r.datum("kv_cp") / 2.0**kv_scale
    out["alpha_cp"] = [alpha_sp0, alpha_sp1]
    out["cp_offset"] = [offset_sp0, offset_sp1]

    rows, cols = np.asarray(pixels) // 32, np.asarray(pixels) % 32

    # sensitivity
    acc_row = r.array("acc_row")[rows]
    acc_col = r.array("acc_col")[cols]
    alpha = r.pixel("pix_alpha") * 2.0 ** r.ordinal("acc_rem_scale")
    alpha = alpha + (
        r.datum("alpha_ref")
        + acc_row * 2.0 ** r.ordinal("acc_row_scale")
        + acc_col * 2.0 ** r.ordinal("acc_col_scale")
    )
    alpha = alpha / 2.0 ** (r.ordinal("alpha_scale") + 30)
    out["alpha"] = alpha - out["tgc"] * (alpha_sp0 + alpha_sp1) / 2

    # offset
    occ_row = r.array("occ_row")[rows]
    occ_col = r.array("occ_col")[cols]
    offset = r.pixel("pix_offset") * 2.0 ** r.ordinal("occ_rem_scale")
    out["offset"] = offset + (
        r.datum("offset_ref")
        + occ_row * 2.0 ** r.ordinal("occ_row_scale")
        + occ_col * 2.0 ** r.ordinal("occ_col_scale")
    )

    # Kta: odd/even row/column averages plus a scaled per-pixel remainder
    split = _pattern_split(pixels)
    kta_rc = [r.datum(n) for n in ("kta_ro_co", "kta_ro_ce", "kta_re_co", "kta_re_ce")]
    kta_avg = _select(kta_rc, split)
    kta = r.pixel("pix_kta") * 2.0 ** r.ordinal("kta_scale2")
    out["kta"] = (kta + kta_avg) / 2.0**kta_scale1

    kv_t = [r.datum(n) for n in ("kv_ro_co", "kv_ro_ce", "kv_re_co", "kv_re_ce")]
    out["kv"] = _select(kv_t, split) / 2.0**kv_scale

    # interleave / chess pattern corrections
    out["calibration_mode_ee"] = (r.ordinal("calibration_mode") << 7) ^ 0x80
    out["il_chess"] = [r.datum("il_chess_c0") / 16.0, r.datum("il_chess_c1") / 2.0, r.datum("il_chess_c2") / 8.0]

    words = mem.words[0x40:].astype(np.int64)
    out["broken_pixels"] = np.flatnonzero(words == 0).tolist()
    out["outlier_pixels"] = np.flatnonzero((words != 0) & (words & 1 == 1)).tolist()
    out["ee_scales"] = {
        "alpha_scale": r.ordinal("alpha_scale") + 30,
        "kta_scale1": kta_scale1,
        "kta_scale2": r.ordinal("kta_scale2"),
        "kv_scale": kv_scale,
        "occ_rem_scale": r.ordinal("occ_rem_scale"),
        "acc_rem_scale": r.ordinal("acc_rem_scale"),
    }
    return out


def _select(values, split):
    """Pick ``values[split[p]]`` per pixel; works for scalars and (n,) arrays."""
    stacked = np.stack([np.broadcast_to(np.asarray(v, dtype=float), np.shape(values[0])) for v in values])
    return stacked[split]


def _storage_scale(max_value: float, limit: float) -> int:
    """Driver's storage exponent: doublings needed to lift ``max_value`` to ``limit``."""
    if not max_value > 0:
        return 0
    scale = 0
    while max_value < limit:
        max_value *= 2
        scale += 1
    return scale


def storage_scales(alpha, kta, kv) -> tuple[int, int, int]:
    """Exponents the driver uses when it re-stores alpha, K_Ta and K_V as integers."""
    s_alpha = _storage_scale(float(np.max(SCALE_ALPHA / np.asarray(alpha))), 32768)
    s_kta = _storage_scale(float(np.max(np.abs(kta))), 64)
    s_kv = _storage_scale(float(np.max(np.abs(kv))), 64)
    return s_alpha, s_kta, s_kv


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def rediscretize(alpha, kta, kv, scales):
    """Driver emulation: store as integers at the given scales, then read back as floats."""
    s_alpha, s_kta, s_kv = scales
    stored_alpha = np.floor(SCALE_ALPHA / alpha * 2.0**s_alpha + 0.5)
    alpha = SCALE_ALPHA * 2.0**s_alpha / stored_alpha
    kta = _round_half_away(kta * 2.0**s_kta) / 2.0**s_kta
    kv = _round_half_away(kv * 2.0**s_kv) / 2.0**s_kv
    return alpha, kta, kv


_SCALAR_KEYS = ("k_vdd", "vdd25", "kv_ptat", "kt_ptat", "v_ptat25", "alpha_ptat", "gain", "tgc", "kv_cp", "kta_cp",
                "ks_ta")


def extract(mem, mode=Conventional, pixels=None, emulate_rediscretization: bool = False) -> CalibrationParameters:
    """Extract calibration parameters from calibration memory.

    ``pixels`` restricts the per-pixel vectors to a subset (default: all 768,
    indexed ``row * 32 + col``). Per-pixel parameters stay real-valued unless
    ``emulate_rediscretization`` is set, in which case alpha, K_Ta and K_V go
    through the driver's integer storage and are read back.
    """
    if mode is not Conventional and not isinstance(mode, Uncertain):
        raise ConfigError(f"unknown extraction mode {mode!r}")
    pixels = np.arange(eeprom.N_PIXELS) if pixels is None else np.asarray(pixels, dtype=np.int64).reshape(-1)
    if pixels.size == 0 or pixels.min() < 0 or pixels.max() >= eeprom.N_PIXELS:
        raise ConfigError("pixel indices must lie in 0..767")

    nominal = _extract(mem, Conventional, np.arange(eeprom.N_PIXELS))
    if not np.all(np.asarray(nominal["alpha"]) != 0):
        raise DomainError("zero pixel sensitivity; calibration memory is malformed")
    scales = storage_scales(nominal["alpha"], nominal["kta"], nominal["kv"])
    vals = nominal if mode is Conventional else _extract(mem, mode, pixels)
    if mode is Conventional:
        for key in ("alpha", "offset", "kta", "kv"):
            vals[key] = np.asarray(vals[key], dtype=float)[pixels]

    if emulate_rediscretization:
        a, t, v = rediscretize(vals["alpha"], vals["kta"], vals["kv"], scales)
        vals["alpha"], vals["kta"], vals["kv"] = a, t, v

    if mode is Conventional:
        wrap = float
        vec = lambda x: np.asarray(x, dtype=float)  # noqa: E731
    else:
        n = mode.ctx.n
        wrap = lambda x: UncertainValue(np.broadcast_to(np.asarray(x, dtype=float), (n,)))  # noqa: E731
        vec = lambda x: UncertainVector(np.broadcast_to(np.asarray(x, dtype=float), (pixels.size, n)))  # noqa: E731

    return CalibrationParameters(
        mode=mode,
        pixels=pixels,
        **{k: wrap(vals[k]) for k in _SCALAR_KEYS},
        resolution_ee=int(vals["resolution_ee"]),
        calibration_mode_ee=int(vals["calibration_mode_ee"]),
        ks_to=[wrap(x) for x in vals["ks_to"]],
        ct=[wrap(x) for x in vals["ct"]],
        s_alpha=scales[0],
        s_kta=scales[1],
        s_kv=scales[2],
        alpha_cp=[wrap(x) for x in vals["alpha_cp"]],
        cp_offset=[wrap(x) for x in vals["cp_offset"]],
        il_chess=[wrap(x) for x in vals["il_chess"]],
        broken_pixels=vals["broken_pixels"],
        outlier_pixels=vals["outlier_pixels"],
        alpha=vec(vals["alpha"]),
        offset=vec(vals["offset"]),
        kta=vec(vals["kta"]),
        kv=vec(vals["kv"]),
        ee_scales=vals["ee_scales"],
    )


def extract_alpha(mem, tgc, alpha_cp0, alpha_cp1, mode=Conventional, pixels=None):
    """Per-pixel sensitivity from shared, already extracted TGC and CP sensitivities.

    ``alpha_i = (A_ref + 2^sR R_i + 2^sC C_i + 2^sD D_i) / 2^s - TGC (a_CP0 + a_CP1) / 2``.
    In uncertain mode ``tgc`` and the CP sensitivities should be the
    ensembles produced by :func:`extract` with the same context, so the
    mutual information they carry is shared rather than redrawn.
    """
    pixels = np.arange(eeprom.N_PIXELS) if pixels is None else np.asarray(pixels, dtype=np.int64).reshape(-1)
    r = _Reader(mem, mode, pixels)
    rows, cols = pixels // 32, pixels % 32
    a = r.pixel("pix_alpha") * 2.0 ** r.ordinal("acc_rem_scale")
    a = a + (
        r.datum("alpha_ref")
        + r.array("acc_row")[rows] * 2.0 ** r.ordinal("acc_row_scale")
        + r.array("acc_col")[cols] * 2.0 ** r.ordinal("acc_col_scale")
    )
    a = a / 2.0 ** (r.ordinal("alpha_scale") + 30)
    alpha = a - samples_of(tgc) * (samples_of(alpha_cp0) + samples_of(alpha_cp1)) / 2
    if isinstance(mode, Uncertain):
        return UncertainVector(np.broadcast_to(alpha, (pixels.size, mode.ctx.n)))
    return np.asarray(alpha, dtype=float)


def parameters_to_json(params: CalibrationParameters, include_vectors: bool = True) -> dict:
    """Conventional values (or ensemble summaries) named after the parameter table."""
    def value(x):
        if isinstance(x, UncertainValue):
            s = summarize(x) if x.n >= 2 else None
            d = {"mean": x.mean()}
            if s is not None:
                d.update(std=s.std, min=s.min, max=s.max, ci95_width=s.ci95_width)
            return d
        if isinstance(x, (np.floating, np.integer)):
            return x.item()
        return x

    out = {"rows": {}}
    for name, v in params.scalar_rows().items():
        out["rows"][name] = {"row": ROW_NUMBERS[name], "value": value(v)}
    out["rows"]["BrokenPixels"] = {"row": ROW_NUMBERS["BrokenPixels"], "value": params.broken_pixels}
    out["rows"]["OutlierPixels"] = {"row": ROW_NUMBERS["OutlierPixels"], "value": params.outlier_pixels}
    if include_vectors:
        for name, v in params.vector_rows().items():
            if isinstance(v, UncertainVector):
                entry = {"mean": v.samples.mean(axis=1).tolist(), "std": v.samples.std(axis=1).tolist()}
            else:
                entry = np.asarray(v).tolist()
            out["rows"][name] = {"row": ROW_NUMBERS[name], "value": entry}
    out["pixels"] = params.pixels.tolist()
    return out
