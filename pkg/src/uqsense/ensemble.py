"""Aligned sample ensembles for epistemically uncertain reals.

An :class:`UncertainValue` is a fixed-length vector of samples. Sample ``i``
of every value created from the same :class:`EnsembleContext` belongs to
the same joint Monte Carlo world, so elementwise arithmetic preserves
correlations without any bookkeeping: ``X - X`` is exactly zero.

Random draws are a pure function of ``(master_seed, stream, index)``. Each
stream is keyed into a Philox counter-based generator, so any window of
samples can be regenerated without replaying the ones before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable

import numpy as np

from .errors import ConfigError, DomainError, FormatError
from .quantize import Interval

PSEUDORANDOM = "pseudorandom"
STRATIFIED = "stratified"


def _stream_word(stream: Hashable) -> int:
    digest = hashlib.blake2b(repr(stream).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream_key(master_seed: int, stream: Hashable) -> np.ndarray:
    """128-bit Philox key for one noise stream."""
    seq = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=(_stream_word(stream),))
    return seq.generate_state(2, np.uint64)


def uniform01(master_seed: int, stream: Hashable, start: int, count: int) -> np.ndarray:
    """Samples ``start .. start+count`` of a stream, uniform on [0, 1)."""
    head = start % 4
    bitgen = np.random.Philox(key=stream_key(master_seed, stream), counter=[start // 4, 0, 0, 0])
    return np.random.Generator(bitgen).random(count + head)[head:]


def stratified01(master_seed: int, stream: Hashable, count: int) -> np.ndarray:
    """One Latin-hypercube column: exactly one sample in each of ``count`` strata."""
    gen = np.random.Generator(np.random.Philox(key=stream_key(master_seed, ("lhs", stream))))
    perm = gen.permutation(count)
    return (perm + gen.random(count)) / count


class UncertainValue:
    """Immutable aligned ensemble of one uncertain real quantity."""

    __slots__ = ("_samples", "stream_id")

    def __init__(self, samples, stream_id=None):
        arr = np.array(samples, dtype=np.float64, copy=True).reshape(-1)
        if arr.size == 0:
            raise DomainError("an ensemble needs at least one sample")
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise DomainError(f"non-finite sample at index {bad[0]}", index=int(bad[0]))
        arr.flags.writeable = False
        self._samples = arr
        self.stream_id = stream_id

    @property
    def samples(self) -> np.ndarray:
        return self._samples

    @property
    def n(self) -> int:
        return self._samples.size

    def __len__(self):
        return self._samples.size

    def __repr__(self):
        return f"UncertainValue(n={self.n}, mean={self.mean():.6g}, std={self.std():.3g})"

    @property
    def degenerate(self) -> bool:
        return bool(np.all(self._samples == self._samples[0]))

    def mean(self) -> float:
        return float(shifted_mean(self._samples))

    def std(self) -> float:
        return float(shifted_std(self._samples))

    def quantile(self, p):
        return np.quantile(self._samples, p, method="linear")

    def __neg__(self):
        return apply(np.negative, self)

    def __add__(self, other):
        return apply(np.add, self, other)

    def __radd__(self, other):
        return apply(np.add, other, self)

    def __sub__(self, other):
        return apply(np.subtract, self, other)

    def __rsub__(self, other):
        return apply(np.subtract, other, self)

    def __mul__(self, other):
        return apply(np.multiply, self, other)

    def __rmul__(self, other):
        return apply(np.multiply, other, self)

    def __truediv__(self, other):
        return apply(np.divide, self, other)

    def __rtruediv__(self, other):
        return apply(np.divide, other, self)

    def __pow__(self, other):
        return apply(np.power, self, other)


def samples_of(x) -> np.ndarray | float:
    """Sample array of an ensemble, or the float itself for a plain scalar."""
    if isinstance(x, UncertainValue):
        return x.samples
    return x


def apply(f: Callable, *args) -> UncertainValue:
    """Evaluate ``f`` sample-by-sample over aligned ensembles.

    Plain numbers broadcast as constants. Raises :class:`DomainError` naming
    the first sample where ``f`` produced a non-finite value from finite inputs.
    """
    sizes = {a.n for a in args if isinstance(a, UncertainValue)}
    if not sizes:
        raise ConfigError("apply needs at least one UncertainValue argument")
    if len(sizes) > 1:
        raise ConfigError(f"ensembles of different sizes cannot be combined: {sorted(sizes)}")
    (n,) = sizes
    with np.errstate(all="ignore"):
        out = f(*(samples_of(a) for a in args))
    out = np.broadcast_to(np.asarray(out, dtype=np.float64), (n,))
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        i = int(bad[0])
        raise DomainError(f"{getattr(f, '__name__', 'function')} undefined at sample {i}", index=i)
    return UncertainValue(out)


@dataclass
class EnsembleContext:
    """Owner of ensemble size, master seed and noise-stream allocation.

    ``offset`` selects a window of the global sample index space: a context
    with ``offset=k`` produces samples ``k .. k+n`` of every stream, which
    lets long Monte Carlo runs proceed block by block.
    """

    n: int
    master_seed: int = 0
    offset: int = 0
    sampling: str = PSEUDORANDOM
    next_stream: int = 0
    _realized: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"ensemble size must be positive, got {self.n}")
        if self.sampling not in (PSEUDORANDOM, STRATIFIED):
            raise ConfigError(f"unknown sampling {self.sampling!r}")
        if self.sampling == STRATIFIED and self.offset:
            raise ConfigError("stratified ensembles cannot be windowed")

    def window(self, offset: int, n: int) -> EnsembleContext:
        return EnsembleContext(n=n, master_seed=self.master_seed, offset=offset, sampling=self.sampling)

    def new_stream(self) -> str:
        sid = f"anon/{self.next_stream}"
        self.next_stream += 1
        return sid

    def unit_noise(self, stream: Hashable) -> np.ndarray:
        """Zero-centred unit-width noise [-0.5, 0.5) for ``stream``, realized once.

        Repeated requests for the same stream return the same array: this is
        how a raw datum used in several places stays one random variable.
        """
        u = self._realized.get(stream)
        if u is None:
            if self.sampling == STRATIFIED:
                u = stratified01(self.master_seed, stream, self.n)
            else:
                u = uniform01(self.master_seed, stream, self.offset, self.n)
            u = u - 0.5
            u.flags.writeable = False
            self._realized[stream] = u
        return u

    def uniform(self, interval: Interval, stream: Hashable | None = None) -> UncertainValue:
        if interval.degenerate:
            return UncertainValue(np.full(self.n, interval.lo))
        sid = self.new_stream() if stream is None else stream
        u = self.unit_noise(sid) + 0.5
        x = interval.lo + u * interval.width
        # lo + u*width can round up to hi for u just below 1
        x = np.minimum(x, np.nextafter(interval.hi, -np.inf)) if interval.hi_open else x
        return UncertainValue(x, stream_id=sid)

    def constant(self, c: float) -> UncertainValue:
        if not np.isfinite(c):
            raise DomainError(f"constant must be finite, got {c!r}")
        return UncertainValue(np.full(self.n, float(c)))


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    min: float
    max: float
    q2_5: float
    q97_5: float
    ci95_width: float

    def to_dict(self):
        return asdict(self)


def shifted_mean(a, axis=-1):
    """Mean taken relative to the first sample: exact for constant ensembles."""
    a = np.asarray(a, dtype=float)
    ref = np.take(a, [0], axis=axis)
    return (ref + (a - ref).mean(axis=axis, keepdims=True)).squeeze(axis)


def shifted_std(a, axis=-1):
    a = np.asarray(a, dtype=float)
    ref = np.take(a, [0], axis=axis)
    return (a - ref).std(axis=axis)


def summarize(x) -> SummaryStats:
    s = np.asarray(samples_of(x), dtype=float)
    if s.size < 2:
        raise DomainError("standard deviation needs at least two samples")
    lo, hi = np.quantile(s, [0.025, 0.975], method="linear")
    return SummaryStats(
        mean=float(shifted_mean(s)),
        std=float(shifted_std(s)),
        min=float(s.min()),
        max=float(s.max()),
        q2_5=float(lo),
        q97_5=float(hi),
        ci95_width=float(hi - lo),
    )


@dataclass(frozen=True)
class ErrorStats:
    mae: float
    max_ae: float
    mre: float | None
    max_re: float | None


def error_stats(x, reference: float, relative: bool = True) -> ErrorStats:
    """Absolute (and relative) errors of every sample against ``reference``."""
    if not np.isfinite(reference):
        raise DomainError("reference must be finite")
    ae = np.abs(np.asarray(samples_of(x), dtype=float) - reference)
    mre = max_re = None
    if relative:
        if reference == 0:
            raise DomainError("relative errors are undefined for a zero reference")
        re = ae / abs(reference)
        mre, max_re = float(re.mean()), float(re.max())
    return ErrorStats(float(ae.mean()), float(ae.max()), mre, max_re)


def wasserstein1(p, q) -> float:
    """First Wasserstein distance between two empirical distributions.

    Integrates ``|F_P - F_Q|`` exactly over the merged support; the sample
    counts may differ.
    """
    u = np.sort(np.asarray(samples_of(p), dtype=float).reshape(-1))
    v = np.sort(np.asarray(samples_of(q), dtype=float).reshape(-1))
    if u.size == 0 or v.size == 0:
        raise DomainError("Wasserstein distance of an empty ensemble")
    return wasserstein1_sorted(u, v)


def wasserstein1_sorted(u: np.ndarray, v: np.ndarray) -> float:
    """:func:`wasserstein1` for already sorted sample arrays, in O(len(u) + len(v))."""
    pos = np.searchsorted(u, v, side="right")
    merged = np.insert(u, pos, v)
    from_u = np.insert(np.ones(u.size, dtype=bool), pos, np.zeros(v.size, dtype=bool))
    cdf_u = np.cumsum(from_u)[:-1] / u.size
    cdf_v = np.cumsum(~from_u)[:-1] / v.size
    return float(np.sum(np.abs(cdf_u - cdf_v) * np.diff(merged)))


def histogram(x, bins="doane"):
    """Histogram counts and edges; Doane binning by default."""
    return np.histogram(np.asarray(samples_of(x), dtype=float), bins=bins)


# --- serialization -------------------------------------------------------

_LEN = struct.Struct("<Q")


def write_ensembles(path, ensembles: Iterable) -> None:
    """Write records of ``uint64 n`` followed by ``n`` little-endian float64 samples."""
    with open(path, "wb") as fh:
        for e in ensembles:
            s = np.ascontiguousarray(samples_of(e), dtype="<f8").reshape(-1)
            fh.write(_LEN.pack(s.size))
            fh.write(s.tobytes())


def read_ensembles(path) -> list[np.ndarray]:
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos < len(data):
        if pos + 8 > len(data):
            raise FormatError(f"truncated length prefix at byte {pos}")
        (n,) = _LEN.unpack_from(data, pos)
        pos += 8
        end = pos + 8 * n
        if end > len(data):
            raise FormatError(f"record at byte {pos - 8} claims {n} samples but the file ends early")
        out.append(np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64))
        pos = end
    return out


def open_ensemble_matrix(path, records: int, n: int, mode: str = "w+"):
    """Memory-mapped view of ``records`` equal-length ensembles in the binary format.

    Returns ``(memmap, samples)`` where ``samples`` is a writable
    ``(records, n)`` view; the length prefixes are filled in on creation.
    """
    dt = np.dtype([("n", "<u8"), ("s", "<f8", (n,))])
    mm = np.memmap(path, dtype=dt, mode=mode, shape=(records,))
    if mode == "w+":
        mm["n"] = n
    elif np.any(mm["n"] != n):
        raise FormatError("ensemble records have unequal lengths")
    return mm, mm["s"]


def to_json(x) -> str:
    return json.dumps([float(v) for v in np.asarray(samples_of(x)).reshape(-1)])


def from_json(text: str) -> UncertainValue:
    data = json.loads(text)
    if not isinstance(data, list):
        raise FormatError("ensemble JSON must be an array of numbers")
    return UncertainValue(data)
