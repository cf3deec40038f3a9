"""Raw frame to object temperature, in scalar or ensemble form.

The frame pipeline mirrors the manufacturer driver: supply voltage and
ambient temperature from the auxiliary registers, gain compensation,
per-pixel offset/K_Ta/K_V compensation, compensation-pixel (TGC)
correction, emissivity, then the fourth-root object temperature with
K_s_To range selection. The same vectorized code runs in both modes:
scalar parameters are floats or ``(n,)`` arrays, per-pixel parameters are
``(P,)`` or ``(P, n)`` arrays, and broadcasting does the rest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import eeprom
from .ensemble import (UncertainValue, open_ensemble_matrix, read_ensembles, samples_of, shifted_mean, shifted_std,
                       write_ensembles)
from .errors import ConfigError, DomainError, FormatError
from .extraction import CalibrationParameters, UncertainVector, rediscretize

C0 = 273.15
STEFAN_BOLTZMANN = 5.670374419e-8  # W m^-2 K^-4

DATASHEET = "datasheet"
NEGATED = "negated"

FRAME_WORDS = 834
# register offsets within a driver frame buffer
VBE, CP_SP0, GAIN, VPTAT, CP_SP1, VDD, CONTROL, SUBPAGE = 768, 776, 778, 800, 808, 810, 832, 833


def _s16(x: int) -> int:
    x = int(x) & 0xFFFF
    return x - 0x10000 if x > 0x7FFF else x


@dataclass(frozen=True)
class RawFrame:
    """One subpage readout: 768 signed pixel counts plus auxiliary registers."""

    pixels: np.ndarray
    vdd_raw: int
    vptat_raw: int
    vbe_raw: int
    gain_raw: int
    cp_raw: tuple = (0, 0)
    subpage: int = 0
    control_word: int = 0x1901
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).reshape(-1)
        if px.size != eeprom.N_PIXELS:
            raise FormatError(f"a frame needs {eeprom.N_PIXELS} pixels, got {px.size}")
        if px.min() < -32768 or px.max() > 32767:
            raise FormatError("pixel counts must fit in a signed 16-bit register")
        if self.subpage not in (0, 1):
            raise FormatError(f"subpage must be 0 or 1, got {self.subpage}")
        if not 0 <= int(self.control_word) <= 0xFFFF:
            raise FormatError("control word must be 16-bit")
        if len(self.cp_raw) != 2:
            raise FormatError("cp_raw needs one value per subpage")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "cp_raw", tuple(int(c) for c in self.cp_raw))

    @property
    def resolution_ram(self) -> int:
        return (int(self.control_word) & 0x0C00) >> 10

    @classmethod
    def from_words(cls, words, meta=None) -> RawFrame:
        """Build from a driver frame buffer (768 pixel words, aux words, control, subpage)."""
        w = np.asarray(words, dtype=np.int64).reshape(-1)
        if w.size != FRAME_WORDS:
            raise FormatError(f"frame buffer needs {FRAME_WORDS} words, got {w.size}")
        return cls(
            pixels=np.array([_s16(x) for x in w[:768]]),
            vdd_raw=_s16(w[VDD]),
            vptat_raw=_s16(w[VPTAT]),
            vbe_raw=_s16(w[VBE]),
            gain_raw=_s16(w[GAIN]),
            cp_raw=(_s16(w[CP_SP0]), _s16(w[CP_SP1])),
            subpage=int(w[SUBPAGE]),
            control_word=int(w[CONTROL]),
            meta=dict(meta or {}),
        )

    def to_words(self) -> np.ndarray:
        w = np.zeros(FRAME_WORDS, dtype=np.int64)
        w[:768] = self.pixels & 0xFFFF
        for pos, v in ((VDD, self.vdd_raw), (VPTAT, self.vptat_raw), (VBE, self.vbe_raw), (GAIN, self.gain_raw),
                       (CP_SP0, self.cp_raw[0]), (CP_SP1, self.cp_raw[1])):
            w[pos] = int(v) & 0xFFFF
        w[CONTROL] = self.control_word
        w[SUBPAGE] = self.subpage
        return w

    def to_json(self) -> str:
        return json.dumps(
            {
                "pixels": self.pixels.tolist(),
                "aux": {
                    "vdd_raw": self.vdd_raw,
                    "vptat_raw": self.vptat_raw,
                    "vbe_raw": self.vbe_raw,
                    "gain_raw": self.gain_raw,
                    "cp_raw": list(self.cp_raw),
                    "subpage": self.subpage,
                    "control_word": self.control_word,
                },
                "meta": self.meta,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> RawFrame:
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"frame is not valid JSON: {exc}") from exc
        if "words" in d:
            return cls.from_words(d["words"], d.get("meta"))
        try:
            aux = d["aux"]
            return cls(
                pixels=d["pixels"],
                vdd_raw=int(aux["vdd_raw"]),
                vptat_raw=int(aux["vptat_raw"]),
                vbe_raw=int(aux["vbe_raw"]),
                gain_raw=int(aux["gain_raw"]),
                cp_raw=tuple(aux.get("cp_raw", (0, 0))),
                subpage=int(aux.get("subpage", 0)),
                control_word=int(aux.get("control_word", 0x1901)),
                meta=d.get("meta", {}),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"frame JSON is missing field {exc}") from exc


def load_frame(path) -> RawFrame:
    return RawFrame.from_json(Path(path).read_text())


def save_frame(frame: RawFrame, path) -> None:
    Path(path).write_text(frame.to_json())


@dataclass(frozen=True)
class SceneConditions:
    """Emissivity and radiation environment.

    ``reflected_k=None`` uses the driver's open-air estimate, 8 K below the
    sensor's ambient temperature. ``ambient_k`` overrides the ambient
    temperature computed from the frame.
    """

    emissivity: float = 0.95
    reflected_k: float | None = None
    ambient_k: float | None = None
    sign_convention: str = DATASHEET

    def __post_init__(self):
        if not 0 < self.emissivity <= 1:
            raise ConfigError(f"emissivity must be in (0, 1], got {self.emissivity}")
        for t in (self.reflected_k, self.ambient_k):
            if t is not None and not t > 0:
                raise ConfigError(f"temperatures must be positive kelvin, got {t}")
        if self.sign_convention not in (DATASHEET, NEGATED):
            raise ConfigError(f"unknown sign convention {self.sign_convention!r}")


def compute_tar(emissivity, t_r, t_a, sign_convention: str = DATASHEET):
    """Combined ambient/reflected radiation term, in K^4."""
    eps = np.asarray(emissivity, dtype=float)
    if np.any(eps == 0):
        raise DomainError("emissivity of zero makes the radiation term undefined")
    if np.any((eps < 0) | (eps > 1)):
        raise ConfigError("emissivity must be in (0, 1]")
    if np.any(np.asarray(t_r) <= 0) or np.any(np.asarray(t_a) <= 0):
        raise ConfigError("temperatures must be positive kelvin")
    tr4 = t_r * t_r
    tr4 = tr4 * tr4
    ta4 = t_a * t_a
    ta4 = ta4 * ta4
    if sign_convention == DATASHEET:
        return tr4 - (tr4 - ta4) / emissivity
    if sign_convention == NEGATED:
        return -(1 - emissivity) * tr4 / emissivity - ta4 / emissivity
    raise ConfigError(f"unknown sign convention {sign_convention!r}")


def _first_bad(mask) -> tuple:
    idx = np.argwhere(mask)[0]
    return tuple(int(i) for i in idx)


def _root4(x, what):
    x = np.asarray(x, dtype=float)
    bad = ~(x >= 0)
    if np.any(bad):
        pos = _first_bad(bad)
        raise DomainError(f"negative radicand in {what} at index {pos}", index=pos[-1] if pos else None)
    return np.sqrt(np.sqrt(x))


def compute_to_physics(v_out, alpha, seebeck, tar):
    """Object temperature (K) from output voltage, sensitivity, Seebeck slope and T_a-r.

    ``T_o = (V / (alpha S ((V/alpha + T_ar)^(1/4) - c0)) + T_ar)^(1/4)``.
    Works elementwise on ensembles; a domain error reports the first bad
    sample index.
    """
    v, a, s, t = (np.asarray(samples_of(x), dtype=float) for x in (v_out, alpha, seebeck, tar))
    if np.any(a == 0):
        raise DomainError("pixel sensitivity must be nonzero")
    inner = _root4(v / a + t, "inner root")
    denom = a * s * (inner - C0)
    if np.any(denom == 0) and np.any(v != 0):
        raise DomainError("zero denominator: inner root equals c0")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(v == 0, 0.0, v / np.where(denom == 0, 1.0, denom))
    out = _root4(ratio + t, "outer root")
    if isinstance(v_out, UncertainValue) or isinstance(alpha, UncertainValue) or isinstance(tar, UncertainValue):
        return UncertainValue(out)
    return float(out) if out.ndim == 0 else out


def stefan_boltzmann_power(emissivity, t_k):
    """Radiated power per area, ``eps sigma T^4`` (W/m^2)."""
    if not 0 <= emissivity <= 1:
        raise ConfigError("emissivity must be in [0, 1]")
    if np.any(np.asarray(t_k) < 0):
        raise DomainError("absolute temperature cannot be negative")
    p = emissivity * STEFAN_BOLTZMANN * np.asarray(t_k, dtype=float) ** 4
    return float(p) if p.ndim == 0 else p


def thermocouple_voltage(s_xy, t_hot, t_cold):
    """Open-circuit thermocouple voltage ``S_xy (T_h - T_c)``."""
    return s_xy * (t_hot - t_cold)


# --- frame pipeline -------------------------------------------------------


def _as_vec(x):
    return x.samples if isinstance(x, UncertainVector) else np.asarray(x, dtype=float)


def supply_voltage(frame: RawFrame, p: CalibrationParameters):
    res_corr = 2.0**p.resolution_ee / 2.0**frame.resolution_ram
    return (res_corr * frame.vdd_raw - samples_of(p.vdd25)) / samples_of(p.k_vdd) + 3.3


def ambient_temperature(frame: RawFrame, p: CalibrationParameters, vdd=None):
    """Sensor die temperature in degC from the PTAT registers."""
    vdd = supply_voltage(frame, p) if vdd is None else vdd
    ptat = frame.vptat_raw
    ptat_art = (ptat / (ptat * samples_of(p.alpha_ptat) + frame.vbe_raw)) * 2.0**18
    ta = ptat_art / (1 + samples_of(p.kv_ptat) * (vdd - 3.3)) - samples_of(p.v_ptat25)
    return ta / samples_of(p.kt_ptat) + 25


def pixel_patterns(pixels):
    p = np.asarray(pixels, dtype=np.int64)
    il = p // 32 - (p // 64) * 2
    chess = il ^ (p - (p // 2) * 2)
    conv = ((p + 2) // 4 - (p + 3) // 4 + (p + 1) // 4 - p // 4) * (1 - 2 * il)
    return il, chess, conv


def convert_raw(frame: RawFrame, p: CalibrationParameters, scene: SceneConditions = SceneConditions(),
                emulate_rediscretization: bool = False, counts=None) -> np.ndarray:
    """Object temperatures in degC, NaN where a radicand went negative.

    Returns ``(P,)`` for conventional parameters and ``(P, n)`` for
    uncertain ones. Broken and outlier pixels read -273.15, as in the driver.
    ``counts`` replaces the frame's pixel readings for the selected pixels
    with real values (used when synthesizing frames).
    """
    g = samples_of
    vdd = supply_voltage(frame, p)
    if scene.ambient_k is None:
        ta = ambient_temperature(frame, p, vdd)
    else:
        ta = scene.ambient_k - C0
    tr = ta - 8 if scene.reflected_k is None else scene.reflected_k - C0
    ta4 = ta + C0
    ta4 = ta4 * ta4
    ta4 = ta4 * ta4
    tr4 = tr + C0
    tr4 = tr4 * tr4
    tr4 = tr4 * tr4
    eps = scene.emissivity
    if scene.sign_convention == DATASHEET:
        ta_tr = tr4 - (tr4 - ta4) / eps
    else:
        ta_tr = -(1 - eps) * tr4 / eps - ta4 / eps

    ks_to = [g(k) for k in p.ks_to]
    ct = [g(c) for c in p.ct]
    corr = [1 / (1 + ks_to[0] * 40), 1.0, 1 + ks_to[1] * ct[2]]
    corr.append(corr[2] * (1 + ks_to[2] * (ct[3] - ct[2])))

    gain = g(p.gain) / frame.gain_raw
    mode = (int(frame.control_word) & 0x1000) >> 5
    cp_offset = [g(c) for c in p.cp_offset]
    kta_cp, kv_cp = g(p.kta_cp), g(p.kv_cp)
    il_c = [g(c) for c in p.il_chess]
    ir_cp = [frame.cp_raw[0] * gain, frame.cp_raw[1] * gain]
    ir_cp[0] = ir_cp[0] - cp_offset[0] * (1 + kta_cp * (ta - 25)) * (1 + kv_cp * (vdd - 3.3))
    if mode == p.calibration_mode_ee:
        ir_cp[1] = ir_cp[1] - cp_offset[1] * (1 + kta_cp * (ta - 25)) * (1 + kv_cp * (vdd - 3.3))
    else:
        ir_cp[1] = ir_cp[1] - (cp_offset[1] + il_c[0]) * (1 + kta_cp * (ta - 25)) * (1 + kv_cp * (vdd - 3.3))

    pix = p.pixels
    alpha, kta, kv, offset = _as_vec(p.alpha), _as_vec(p.kta), _as_vec(p.kv), _as_vec(p.offset)
    if emulate_rediscretization:
        alpha, kta, kv = rediscretize(alpha, kta, kv, (p.s_alpha, p.s_kta, p.s_kv))
    col = (lambda a: a[:, None]) if alpha.ndim == 2 else (lambda a: a)

    raw = frame.pixels[pix].astype(float) if counts is None else np.asarray(counts, dtype=float)
    ir = col(raw) * gain
    ir = ir - offset * (1 + kta * (ta - 25)) * (1 + kv * (vdd - 3.3))
    if mode != p.calibration_mode_ee:
        il, _, conv = pixel_patterns(pix)
        ir = ir + (il_c[2] * col(2.0 * il - 1) - il_c[1] * col(conv.astype(float)))
    ir = ir - g(p.tgc) * ir_cp[frame.subpage]
    ir = ir / eps

    alpha_c = alpha * (1 + g(p.ks_ta) * (ta - 25))
    with np.errstate(invalid="ignore", divide="ignore"):
        sx = alpha_c * alpha_c * alpha_c * (ir + alpha_c * ta_tr)
        sx = np.sqrt(np.sqrt(sx)) * ks_to[1]
        to = np.sqrt(np.sqrt(ir / (alpha_c * (1 - ks_to[1] * C0) + sx) + ta_tr)) - C0
        rng = np.select([to < ct[1], to < ct[2], to < ct[3]], [0, 1, 2], 3)
        ks_sel = np.choose(rng, np.broadcast_arrays(*ks_to[:4], to))
        corr_sel = np.choose(rng, np.broadcast_arrays(*corr, to))
        ct_sel = np.choose(rng, np.broadcast_arrays(*ct, to))
        to = np.sqrt(np.sqrt(ir / (alpha_c * corr_sel * (1 + ks_sel * (to - ct_sel))) + ta_tr)) - C0

    bad = np.isin(pix, np.asarray(p.broken_pixels + p.outlier_pixels, dtype=np.int64))
    if np.any(bad):
        to = np.where(col(bad), -C0, to)
    return np.asarray(to, dtype=float)


class TemperatureFrameDistribution:
    """Per-pixel output temperature ensembles (degC), aligned across pixels."""

    def __init__(self, samples, pixels=None, invalid_count: int = 0, copy: bool = True):
        arr = np.array(samples, dtype=np.float64, copy=True) if copy else samples
        if arr.ndim != 2:
            raise FormatError("distribution samples must be (pixels, n)")
        for r0 in range(0, arr.shape[0], 64):
            bad = ~np.isfinite(arr[r0:r0 + 64])
            if np.any(bad):
                pos = _first_bad(bad)
                raise DomainError(f"non-finite temperature at pixel {r0 + pos[0]}, sample {pos[1]}",
                                  index=pos[1], pixel=r0 + pos[0])
        if copy:
            arr.flags.writeable = False
        self._samples = arr
        self.pixels = np.arange(arr.shape[0]) if pixels is None else np.asarray(pixels, dtype=np.int64)
        if self.pixels.size != arr.shape[0]:
            raise FormatError("pixel index list does not match the sample rows")
        self.invalid_count = invalid_count

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def n(self) -> int:
        return self._samples.shape[1]

    @property
    def full_frame(self) -> bool:
        return self._samples.shape[0] == eeprom.N_PIXELS

    def __len__(self):
        return self._samples.shape[0]

    def __getitem__(self, i) -> UncertainValue:
        return UncertainValue(self._samples[i])

    def sample_frame(self, i: int) -> np.ndarray:
        return self._samples[:, i]

    def mean(self) -> np.ndarray:
        return np.concatenate([shifted_mean(self._samples[r:r + 64], axis=1)
                               for r in range(0, len(self._samples), 64)])

    def std(self) -> np.ndarray:
        return np.concatenate([shifted_std(self._samples[r:r + 64], axis=1)
                               for r in range(0, len(self._samples), 64)])

    def save(self, path) -> None:
        write_ensembles(path, self._samples)

    @classmethod
    def load(cls, path) -> TemperatureFrameDistribution:
        """Read an ensemble frame; equal-length records are memory-mapped."""
        size = Path(path).stat().st_size
        with open(path, "rb") as fh:
            head = fh.read(8)
        if len(head) == 8:
            n = int(np.frombuffer(head, "<u8")[0])
            rec = 8 + 8 * n
            if n and size % rec == 0:
                try:
                    _, samples = open_ensemble_matrix(path, size // rec, n, mode="r")
                except FormatError:
                    samples = None
                if samples is not None:
                    return cls(samples, copy=False)
        recs = read_ensembles(path)
        if not recs or len({r.size for r in recs}) != 1:
            raise FormatError("ensemble frame needs equal-length records")
        return cls(np.stack(recs))


def convert_frame(frame: RawFrame, params: CalibrationParameters, scene: SceneConditions = SceneConditions(),
                  mode=None, emulate_rediscretization: bool = False):
    """Convert one frame. Conventional parameters give a ``(P,)`` array in degC.

    Uncertain parameters give a :class:`TemperatureFrameDistribution`. ``mode``
    may be passed as ``"conventional"`` or ``"uncertain"`` to assert which one
    the caller expects.
    """
    if mode is not None:
        want = str(mode).lower()
        if want not in ("conventional", "uncertain"):
            raise ConfigError(f"unknown mode {mode!r}")
        if (want == "uncertain") != params.uncertain:
            raise ConfigError(f"parameters were extracted in {params.mode!r} mode, not {mode}")
    to = convert_raw(frame, params, scene, emulate_rediscretization)
    bad = ~np.isfinite(to)
    if np.any(bad):
        pos = _first_bad(bad)
        pixel = int(params.pixels[pos[0]])
        sample = pos[1] if len(pos) > 1 else None
        raise DomainError(f"negative radicand at pixel {pixel}" + (f", sample {sample}" if sample is not None else ""),
                          index=sample, pixel=pixel)
    if params.uncertain:
        return TemperatureFrameDistribution(to, params.pixels)
    return to


def to_grid(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size != eeprom.N_PIXELS:
        raise FormatError("a grid needs all 768 pixels")
    return v.reshape(eeprom.ROWS, eeprom.COLS)


def write_frame_csv(values, path) -> None:
    """24 rows by 32 columns, one temperature per cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in to_grid(values):
            w.writerow([repr(float(x)) for x in row])


def read_frame_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(x) for x in r] for r in csv.reader(fh) if r]
    arr = np.asarray(rows, dtype=float)
    if arr.shape != (eeprom.ROWS, eeprom.COLS):
        raise FormatError(f"temperature grid must be 24x32, got {arr.shape}")
    return arr.reshape(-1)


def write_frame_json(values, path) -> None:
    Path(path).write_text(json.dumps({"rows": eeprom.ROWS, "cols": eeprom.COLS,
                                      "celsius": [float(x) for x in np.asarray(values).reshape(-1)]}))
