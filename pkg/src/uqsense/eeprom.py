"""MLX90640 calibration memory: parsing, bit-field reads and the inverse encoder.

The calibration EEPROM is 832 big-endian 16-bit words at 0x2400-0x273F.
Field positions come from the versioned catalog in ``data/eeprom_fields.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import FormatError

BASE_ADDRESS = 0x2400
N_WORDS = 832
N_PIXELS = 768
ROWS, COLS = 24, 32
DEVICE_ID_ADDRESS = 0x2407


@dataclass(frozen=True)
class RawField:
    name: str
    source_address: int
    msb: int
    lsb: int
    signed: bool
    scale_exponent: int = 0
    uncertain: bool = True

    def __post_init__(self):
        if not 0 <= self.lsb <= self.msb <= 15:
            raise FormatError(f"bad bit range [{self.msb}:{self.lsb}] for {self.name}")

    @property
    def bits(self) -> int:
        return self.msb - self.lsb + 1


@dataclass(frozen=True)
class FieldSpec:
    """Catalog entry; array fields pack ``per_word`` elements into each word."""

    name: str
    address: int
    msb: int
    lsb: int
    signed: bool
    uncertain: bool
    scale_exponent: int = 0
    count: int = 1
    per_word: int = 1

    @property
    def bits(self) -> int:
        return self.msb - self.lsb + 1

    def element(self, k: int = 0) -> RawField:
        if not 0 <= k < self.count:
            raise IndexError(f"{self.name}[{k}] out of range")
        shift = (k % self.per_word) * self.bits if self.per_word > 1 else 0
        return RawField(
            name=self.name if self.count == 1 else f"{self.name}[{k}]",
            source_address=self.address + k // self.per_word,
            msb=self.msb + shift,
            lsb=self.lsb + shift,
            signed=self.signed,
            scale_exponent=self.scale_exponent,
            uncertain=self.uncertain,
        )


@lru_cache(maxsize=1)
def catalog() -> dict[str, FieldSpec]:
    text = resources.files("uqsense").joinpath("data/eeprom_fields.json").read_text()
    raw = json.loads(text)
    out = {}
    for f in raw["fields"]:
        out[f["name"]] = FieldSpec(
            name=f["name"],
            address=int(f["address"], 16),
            msb=f["msb"],
            lsb=f["lsb"],
            signed=f["signed"],
            uncertain=f["uncertain"],
            scale_exponent=f.get("scale_exponent", 0),
            count=f.get("count", 1),
            per_word=f.get("per_word", 1),
        )
    return out


def catalog_version() -> int:
    text = resources.files("uqsense").joinpath("data/eeprom_fields.json").read_text()
    return json.loads(text)["version"]


class CalibrationMemory:
    """Immutable image of the calibration EEPROM."""

    def __init__(self, words, sensor_id: str | None = None):
        arr = np.asarray(words, dtype=np.int64).reshape(-1)
        if arr.size != N_WORDS:
            raise FormatError(f"calibration memory needs {N_WORDS} words, got {arr.size}")
        if arr.min() < 0 or arr.max() > 0xFFFF:
            raise FormatError("calibration words must be 16-bit unsigned values")
        self._words = arr.astype(np.uint16)
        self._words.flags.writeable = False
        self.sensor_id = sensor_id if sensor_id is not None else device_id(self._words)

    @property
    def words(self) -> np.ndarray:
        return self._words

    def __getitem__(self, address: int) -> int:
        i = address - BASE_ADDRESS
        if not 0 <= i < N_WORDS:
            raise FormatError(f"address 0x{address:04X} outside calibration memory")
        return int(self._words[i])

    def __eq__(self, other):
        return isinstance(other, CalibrationMemory) and np.array_equal(self._words, other._words)

    def __hash__(self):
        return hash(self._words.tobytes())

    def to_bytes(self) -> bytes:
        return self._words.astype(">u2").tobytes()

    def to_json(self) -> str:
        return json.dumps(
            {"sensor_id": self.sensor_id, "base_address": f"0x{BASE_ADDRESS:04X}", "words": self._words.tolist()}
        )


def device_id(words) -> str:
    i = DEVICE_ID_ADDRESS - BASE_ADDRESS
    w = [int(x) for x in words[i : i + 3]]
    return "0x" + "".join(f"{x:04x}" for x in w)


def parse(dump, sensor_id: str | None = None) -> CalibrationMemory:
    """Build a :class:`CalibrationMemory` from bytes, a word list or the JSON mapping.

    A JSON mapping may list ``words`` with a ``base_address`` or give an
    ``{"address": value}`` map; gaps raise :class:`FormatError`.
    """
    if isinstance(dump, (bytes, bytearray, memoryview)):
        b = bytes(dump)
        if len(b) != 2 * N_WORDS:
            raise FormatError(f"binary dump must be {2 * N_WORDS} bytes, got {len(b)}")
        return CalibrationMemory(np.frombuffer(b, dtype=">u2"), sensor_id)
    if isinstance(dump, dict):
        sid = sensor_id or dump.get("sensor_id")
        words = dump.get("words")
        if isinstance(words, dict):
            by_addr = {int(k, 0) if isinstance(k, str) else int(k): v for k, v in words.items()}
            missing = [a for a in range(BASE_ADDRESS, BASE_ADDRESS + N_WORDS) if a not in by_addr]
            if missing:
                raise FormatError(f"calibration memory has gaps, first missing address 0x{missing[0]:04X}")
            return CalibrationMemory([by_addr[a] for a in range(BASE_ADDRESS, BASE_ADDRESS + N_WORDS)], sid)
        base = dump.get("base_address", BASE_ADDRESS)
        base = int(base, 0) if isinstance(base, str) else int(base)
        if base != BASE_ADDRESS:
            raise FormatError(f"base address must be 0x{BASE_ADDRESS:04X}, got 0x{base:04X}")
        if words is None:
            raise FormatError("JSON dump has no 'words'")
        return CalibrationMemory(words, sid)
    return CalibrationMemory(list(dump), sensor_id)


def load(path) -> CalibrationMemory:
    p = Path(path)
    data = p.read_bytes()
    if p.suffix.lower() == ".json" or data[:1] in (b"{", b"["):
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p}: invalid JSON ({exc})") from exc
        return parse(obj)
    return parse(data)


def save(mem: CalibrationMemory, path) -> None:
    p = Path(path)
    if p.suffix.lower() == ".json":
        p.write_text(mem.to_json())
    else:
        p.write_bytes(mem.to_bytes())


def _field(field: RawField | str) -> RawField:
    if isinstance(field, str):
        return catalog()[field].element(0)
    return field


def read_field(mem: CalibrationMemory, field: RawField | str) -> int:
    """Bits ``[msb..lsb]`` of the field's word, two's complement if signed. No scaling."""
    f = _field(field)
    value = (mem[f.source_address] >> f.lsb) & ((1 << f.bits) - 1)
    if f.signed and value >= 1 << (f.bits - 1):
        value -= 1 << f.bits
    return value


def read_array(mem: CalibrationMemory, name: str) -> np.ndarray:
    """All elements of an array field as int64."""
    spec = catalog()[name]
    return np.array([read_field(mem, spec.element(k)) for k in range(spec.count)], dtype=np.int64)


def _pixel_words(mem):
    return mem.words[0x40:].astype(np.int64)


def read_pixel_field(mem: CalibrationMemory, name: str) -> np.ndarray:
    """Vectorized read of a per-pixel field (one word per pixel)."""
    spec = catalog()[name]
    v = (_pixel_words(mem) >> spec.lsb) & ((1 << spec.bits) - 1)
    if spec.signed:
        v = np.where(v >= 1 << (spec.bits - 1), v - (1 << spec.bits), v)
    return v


# --- encoding ------------------------------------------------------------


def _c_round(x: float) -> int:
    a = abs(x)
    r = math.floor(a)
    if a - r >= 0.5:
        r += 1
    return int(math.copysign(r, x)) if r else 0


def _check_range(f: RawField, value: int) -> int:
    if f.signed:
        lo, hi = -(1 << (f.bits - 1)), (1 << (f.bits - 1)) - 1
    else:
        lo, hi = 0, (1 << f.bits) - 1
    if not lo <= value <= hi:
        raise FormatError(f"{f.name}={value} does not fit {f.bits}-bit {'signed' if f.signed else 'unsigned'} field")
    return value & ((1 << f.bits) - 1)


def pack(raw: dict, base_words=None, sensor_id: str | None = None) -> CalibrationMemory:
    """Write raw (integer) field values into a memory image.

    ``raw`` maps catalog names to ints (array fields: sequences). Fields not
    mentioned keep the bits of ``base_words`` (zeros by default).
    """
    words = np.zeros(N_WORDS, dtype=np.int64) if base_words is None else np.array(base_words, dtype=np.int64)
    cat = catalog()
    for name, value in raw.items():
        if name not in cat:
            raise FormatError(f"unknown calibration field {name!r}")
        spec = cat[name]
        values = [value] if spec.count == 1 else list(value)
        if len(values) != spec.count:
            raise FormatError(f"{name} needs {spec.count} values, got {len(values)}")
        for k, v in enumerate(values):
            f = spec.element(k)
            bits = _check_range(f, int(v))
            i = f.source_address - BASE_ADDRESS
            mask = ((1 << f.bits) - 1) << f.lsb
            words[i] = (words[i] & ~mask) | (bits << f.lsb)
    if sensor_id is not None:
        sid = int(sensor_id, 16) if isinstance(sensor_id, str) else int(sensor_id)
        i = DEVICE_ID_ADDRESS - BASE_ADDRESS
        words[i : i + 3] = [(sid >> 32) & 0xFFFF, (sid >> 16) & 0xFFFF, sid & 0xFFFF]
    return CalibrationMemory(words, None)


# Parameter rows that are consequences of other data rather than stored words.
DERIVED_ROWS = ("s_alpha", "s_KTa", "s_KV", "Ks_To[4]", "CT[0]", "CT[1]", "BrokenPixels")


def encode_parameters(values: dict, raw: dict | None = None) -> dict:
    """Invert the driver scaling of conventional parameter values into raw fields.

    ``values`` uses the parameter-table names (``K_Vdd``, ``GAIN``, ``Ks_To``
    as a 4-list, ``CT`` as the 4-list ``[-40, 0, CT2, CT3]`` ...). ``raw``
    supplies fields that are not recoverable from the values (pixel data,
    EE scale nibbles) and is merged into the result. Derived rows such as the
    re-discretization scales are ignored.
    """
    raw = dict(raw or {})
    out = dict(raw)

    def put(name, x):
        out[name] = _c_round(x)

    v = values
    if "K_Vdd" in v:
        put("k_vdd", v["K_Vdd"] / 32)
    if "Vdd25" in v:
        put("vdd25", (v["Vdd25"] + 8192) / 32 + 256)
    if "Kv_PTAT" in v:
        put("kv_ptat", v["Kv_PTAT"] * 4096)
    if "Kt_PTAT" in v:
        put("kt_ptat", v["Kt_PTAT"] * 8)
    if "V_PTAT25" in v:
        put("vptat25", v["V_PTAT25"])
    if "alpha_PTAT" in v:
        put("alpha_ptat", (v["alpha_PTAT"] - 8) * 4)
    if "GAIN" in v:
        put("gain", v["GAIN"])
    if "TGC" in v:
        put("tgc", v["TGC"] * 32)
    if "Resolution_EE" in v:
        out["resolution"] = int(v["Resolution_EE"])
    if "CalibrationMode_EE" in v:
        out["calibration_mode"] = (int(v["CalibrationMode_EE"]) ^ 0x80) >> 7
    if "Ks_Ta" in v:
        put("ks_ta", v["Ks_Ta"] * 8192)
    if "Kv_CP" in v:
        put("kv_cp", v["Kv_CP"] * 2 ** out.get("kv_scale", 0))
    if "Kta_CP" in v:
        put("kta_cp", v["Kta_CP"] * 2 ** (out.get("kta_scale1", 0) + 8))
    if "Ks_To" in v:
        kst = list(v["Ks_To"])[:4]
        if "ks_to_scale" not in out:
            out["ks_to_scale"] = _smallest_exact_scale(kst, offset=8)
        for k, x in enumerate(kst):
            put(f"ks_to{k}", x * 2 ** (out["ks_to_scale"] + 8))
    if "CT" in v:
        ct = list(v["CT"])
        if ct[0] != -40 or ct[1] != 0:
            raise FormatError("CT[0] and CT[1] are fixed at -40 and 0")
        if "temp_step" not in out:
            out["temp_step"] = _ct_step_code(ct[2], ct[3])
        step = out["temp_step"] * 10
        if step == 0:
            raise FormatError("temperature step of zero cannot encode corner temperatures")
        put("ct3", ct[2] / step)
        put("ct4", (ct[3] - ct[2]) / step)
    if "alpha_CP" in v:
        a0, a1 = v["alpha_CP"]
        put("alpha_cp_sp0", a0 * 2 ** (out.get("alpha_scale", 0) + 27))
        put("alpha_cp_ratio", (a1 / a0 - 1) * 128)
    if "CP_Offset" in v:
        o0, o1 = v["CP_Offset"]
        put("offset_cp_sp0", o0)
        put("offset_cp_delta", o1 - o0)
    if "IL_Chess" in v:
        c0, c1, c2 = v["IL_Chess"]
        put("il_chess_c0", c0 * 16)
        put("il_chess_c1", c1 * 2)
        put("il_chess_c2", c2 * 8)
    if "OutlierPixels" in v and v["OutlierPixels"]:
        flags = np.array(out.get("pix_outlier", np.zeros(N_PIXELS, dtype=int)))
        flags[list(v["OutlierPixels"])] = 1
        out["pix_outlier"] = flags
    return out


def _smallest_exact_scale(values, offset: int) -> int:
    for nib in range(16):
        scaled = [x * 2 ** (nib + offset) for x in values]
        if all(float(s).is_integer() for s in scaled):
            return nib
    raise FormatError(f"values {values} are not representable at any scale")


def _ct_step_code(ct2: float, ct3: float) -> int:
    for code in (3, 2, 1):
        step = code * 10
        a, b = ct2 / step, (ct3 - ct2) / step
        if a.is_integer() and b.is_integer() and 0 <= a <= 15 and 0 <= b <= 15:
            return code
    raise FormatError(f"corner temperatures {ct2}, {ct3} are not encodable")


def inverse_encode(values: dict, raw: dict | None = None, sensor_id: str | None = None) -> CalibrationMemory:
    """Memory image whose extraction reproduces ``values`` (see :func:`encode_parameters`)."""
    fields = encode_parameters(values, raw)
    mem = pack(fields, sensor_id=sensor_id)
    broken = values.get("BrokenPixels") or []
    if broken:
        words = mem.words.astype(np.int64)
        words[0x40 + np.asarray(broken)] = 0
        mem = CalibrationMemory(words, mem.sensor_id)
    return mem
