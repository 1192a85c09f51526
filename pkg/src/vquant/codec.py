"""Value-aware quantization codec.

A tensor is split into two populations: the ``round(AR * N)`` elements of
largest magnitude ("outliers") are kept exactly in a sorted coordinate list,
and every remaining element is mapped to one of a small number of uniformly
spaced levels spanning only the remaining values.  Narrowing the range this
way shrinks the level spacing for the bulk of the data.

Two code spaces exist:

``vquant``
    ``2**K`` levels ``qmin + c * step`` for ``c = 0 .. 2**K - 1`` with
    ``step = (qmax - qmin) / (2**K - 1)``; both range endpoints are levels.
``rvquant``
    For post-ReLU data.  Code 0 is reserved to mean "exactly zero / blocked
    neuron"; codes ``1 .. 2**K - 1`` are the value levels ``c * step`` with
    ``step = qmax / (2**K - 1)``, so the ReLU mask costs no extra bit.

Rounding goes to the nearest float32 level; equal distances resolve to the
level of smaller magnitude, then to the lower code.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, DimensionError, FormatError, ModeError, ParameterError
from .packing import pack_codes, packed_size, unpack_codes
from .tensor import check_tensor

VQUANT = "vquant"
RVQUANT = "rvquant"
MODES = (VQUANT, RVQUANT)
RANGE_POLICIES = ("symmetric", "asymmetric", "nonnegative")
OUTLIER_PRECISIONS = (32, 16)


@dataclass(frozen=True)
class QuantConfig:
    """Codec settings: bit width, large-value ratio, mode, range policy."""

    bits: int = 3
    large_ratio: float = 0.0
    mode: str = VQUANT
    range_policy: str = "symmetric"
    outlier_precision: int = 32

    def __post_init__(self):
        if isinstance(self.bits, bool) or not isinstance(self.bits, (int, np.integer)):
            raise ConfigError(f"bits must be an integer, got {self.bits!r}")
        if not 1 <= self.bits <= 8:
            raise ConfigError(f"bits must be in 1..8, got {self.bits}")
        if not (0.0 <= self.large_ratio < 1.0):
            raise ConfigError(f"large_ratio must be in [0, 1), got {self.large_ratio}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.range_policy not in RANGE_POLICIES:
            raise ConfigError(f"range_policy must be one of {RANGE_POLICIES}, got {self.range_policy!r}")
        if self.outlier_precision not in OUTLIER_PRECISIONS:
            raise ConfigError(f"outlier_precision must be 32 or 16, got {self.outlier_precision}")
        if self.mode == RVQUANT:
            if self.bits < 2:
                raise ConfigError("rvquant needs at least 2 bits")
            if self.range_policy != "nonnegative":
                raise ConfigError("rvquant requires the nonnegative range policy")

    @property
    def levels(self):
        return 1 << self.bits

    @property
    def value_levels(self):
        return self.levels - 1 if self.mode == RVQUANT else self.levels

    @property
    def label(self):
        """Schedule notation, e.g. ``"3:2"`` for 3 bits with 2% outliers."""
        return f"{self.bits}:{self.large_ratio * 100:g}"

    def memory_fraction(self, with_mask=False):
        from .cost import memory_fraction

        return memory_fraction(
            self.bits,
            self.large_ratio,
            mode=self.mode,
            with_mask=with_mask,
            outlier_precision=self.outlier_precision,
        )

    def to_dict(self):
        return {
            "bits": int(self.bits),
            "large_ratio": float(self.large_ratio),
            "mode": self.mode,
            "range_policy": self.range_policy,
            "outlier_precision": int(self.outlier_precision),
        }


@dataclass(frozen=True)
class OutlierSet:
    """Sorted flat indices plus their values at outlier precision."""

    indices: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.indices)


def outlier_count(large_ratio, n):
    """``round(large_ratio * n)`` with halves rounded up."""
    return int(math.floor(large_ratio * n + 0.5))


def profile_threshold(t, large_ratio):
    """Select the ``round(AR * N)`` largest-magnitude elements.

    Returns ``(threshold, indices)`` where ``indices`` is sorted ascending and
    ``threshold`` is the smallest selected magnitude (``inf`` when nothing is
    selected).  Magnitude ties are broken in favour of the smaller flat index.
    """
    if not 0.0 <= large_ratio < 1.0:
        raise ParameterError(f"large_ratio must be in [0, 1), got {large_ratio}")
    x = check_tensor(t, "input").ravel()
    k = outlier_count(large_ratio, x.size)
    if k == 0:
        return math.inf, np.zeros(0, dtype=np.int64)
    mag = np.abs(x)
    order = np.argsort(-mag, kind="stable")[:k]
    return float(mag[order[-1]]), np.sort(order).astype(np.int64)


def level_table(cfg, qmin, qmax):
    """Dequantized value for every code, as float32."""
    n_levels = cfg.levels
    if cfg.mode == RVQUANT:
        step = float(qmax) / (n_levels - 1)
        lv = np.arange(n_levels, dtype=np.float64) * step
    else:
        step = (float(qmax) - float(qmin)) / (n_levels - 1)
        lv = float(qmin) + np.arange(n_levels, dtype=np.float64) * step
    lv[-1] = qmax
    return lv.astype(np.float32)


def _nearest_code(x, lv, lo_code, pos):
    # Window of 4 candidates around floor(pos) absorbs float32 rounding of levels.
    n_levels = len(lv)
    c0 = np.floor(pos).astype(np.int64)
    lv64 = lv.astype(np.float64)
    x64 = x.astype(np.float64)
    best = np.clip(c0 - 1, lo_code, n_levels - 1)
    best_d = np.abs(x64 - lv64[best])
    for off in (0, 1, 2):
        c = np.clip(c0 + off, lo_code, n_levels - 1)
        d = np.abs(x64 - lv64[c])
        better = (d < best_d) | ((d == best_d) & (np.abs(lv64[c]) < np.abs(lv64[best])))
        best = np.where(better, c, best)
        best_d = np.where(better, d, best_d)
    return best


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Packed K-bit codes, the small-value range, outliers and optional ReLU mask."""

    shape: tuple
    codes: bytes
    qmin: float
    qmax: float
    config: QuantConfig
    outliers: OutlierSet
    relu_mask: bytes = None
    _levels: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1

    @property
    def step(self):
        cfg = self.config
        if cfg.mode == RVQUANT:
            return float(self.qmax) / (cfg.levels - 1)
        return (float(self.qmax) - float(self.qmin)) / (cfg.levels - 1)

    def levels(self):
        if self._levels is None:
            object.__setattr__(self, "_levels", level_table(self.config, self.qmin, self.qmax))
        return self._levels

    def unpacked_codes(self):
        return unpack_codes(self.codes, self.config.bits, self.size)

    def outlier_mask(self):
        mask = np.zeros(self.size, dtype=bool)
        mask[self.outliers.indices] = True
        return mask

    def active_mask(self):
        """Boolean mask of neurons whose error must be propagated (x > 0)."""
        if self.relu_mask is not None:
            bits = np.unpackbits(np.frombuffer(self.relu_mask, dtype=np.uint8), bitorder="little", count=self.size)
            return bits.astype(bool).reshape(self.shape)
        if self.config.mode != RVQUANT:
            raise ModeError("vquant tensor stored without a ReLU mask")
        active = self.unpacked_codes() != 0
        active[self.outliers.indices] = self.outliers.values > 0
        return active.reshape(self.shape)

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    __hash__ = None

    def to_bytes(self):
        return encode_quantized(self)


def quantize(t, cfg, relu_mask=False):
    """Quantize ``t`` under ``cfg``; see the module docstring for the code space.

    ``relu_mask=True`` additionally stores a 1-bit active mask (``x > 0``),
    which only makes sense in ``vquant`` mode on post-ReLU data.
    """
    if not isinstance(cfg, QuantConfig):
        raise ConfigError("cfg must be a QuantConfig")
    if relu_mask and cfg.mode == RVQUANT:
        raise ConfigError("rvquant folds the ReLU mask into code 0; no separate mask")
    arr = check_tensor(t, "input")
    x = arr.ravel()
    n = x.size
    if cfg.mode == RVQUANT and np.any(x < 0):
        raise ModeError("rvquant input contains negative values")

    _, idx = profile_threshold(x, cfg.large_ratio)
    small = np.ones(n, dtype=bool)
    small[idx] = False
    xs = x[small]
    if cfg.range_policy == "nonnegative" and np.any(xs < 0):
        raise ModeError("nonnegative range policy with negative non-outlier values")

    if xs.size == 0:
        qmin = qmax = np.float32(0.0)
    elif cfg.mode == RVQUANT or cfg.range_policy == "nonnegative":
        qmin, qmax = np.float32(0.0), xs.max()
    elif cfg.range_policy == "symmetric":
        m = np.abs(xs).max()
        qmin, qmax = -m, m
    else:
        qmin, qmax = xs.min(), xs.max()
    qmin, qmax = float(qmin), float(qmax)

    lv = level_table(cfg, qmin, qmax)
    codes = np.zeros(n, dtype=np.int64)
    if cfg.mode == RVQUANT:
        step = qmax / (cfg.levels - 1)
        pos_mask = small & (x > 0)
        if step > 0 and pos_mask.any():
            xp = x[pos_mask]
            codes[pos_mask] = _nearest_code(xp, lv, 1, xp.astype(np.float64) / step)
    else:
        step = (qmax - qmin) / (cfg.levels - 1)
        if step > 0 and xs.size:
            codes[small] = _nearest_code(xs, lv, 0, (xs.astype(np.float64) - qmin) / step)

    values = x[idx]
    if cfg.outlier_precision == 16:
        if values.size and np.abs(values).max() > np.finfo(np.float16).max:
            raise ModeError("outlier magnitude exceeds the binary16 range")
        values = values.astype(np.float16)
    else:
        values = values.copy()

    mask_bytes = None
    if relu_mask:
        mask_bytes = np.packbits(x > 0, bitorder="little").tobytes()

    return QuantizedTensor(
        shape=tuple(arr.shape),
        codes=pack_codes(codes, cfg.bits),
        qmin=qmin,
        qmax=qmax,
        config=cfg,
        outliers=OutlierSet(idx, values),
        relu_mask=mask_bytes,
        _levels=lv,
    )


def dequantize(q):
    """Reconstruct a float32 tensor: level values, with outliers restored."""
    out = q.levels()[q.unpacked_codes()]
    if len(q.outliers):
        out[q.outliers.indices] = q.outliers.values.astype(np.float32)
    return out.reshape(q.shape)


def quant_error(original, q):
    """``{"mse", "max_abs", "small_max_abs"}`` of the reconstruction of ``q``."""
    x = check_tensor(original, "original")
    if tuple(x.shape) != tuple(q.shape):
        raise DimensionError(f"shape {x.shape} does not match quantized shape {q.shape}")
    err = np.abs(dequantize(q).astype(np.float64) - x.astype(np.float64)).ravel()
    small = ~q.outlier_mask()
    return {
        "mse": float(np.mean(err**2)),
        "max_abs": float(err.max()),
        "small_max_abs": float(err[small].max()) if small.any() else 0.0,
    }


# Serialized layout, little-endian:
#   b"VQTQ" | u16 version | u8 bits | u8 mode | u8 range_policy | u8 outlier_precision
#   | f64 large_ratio | f32 qmin | f32 qmax | u64 n | codes[ceil(n*bits/8)]
#   | u64 m | u64 indices[m] | values[m] (f32 or f16) | u8 has_mask | mask[ceil(n/8)]
#   | u8 rank | u64 dims[rank]
VQTQ_MAGIC = b"VQTQ"
VQTQ_VERSION = 1


def encode_quantized(q):
    cfg = q.config
    vdtype = "<f4" if cfg.outlier_precision == 32 else "<f2"
    parts = [
        VQTQ_MAGIC,
        struct.pack(
            "<HBBBBdffQ",
            VQTQ_VERSION,
            cfg.bits,
            MODES.index(cfg.mode),
            RANGE_POLICIES.index(cfg.range_policy),
            cfg.outlier_precision,
            cfg.large_ratio,
            q.qmin,
            q.qmax,
            q.size,
        ),
        q.codes,
        struct.pack("<Q", len(q.outliers)),
        np.asarray(q.outliers.indices, dtype="<u8").tobytes(),
        np.asarray(q.outliers.values).astype(vdtype).tobytes(),
        struct.pack("<B", q.relu_mask is not None),
        q.relu_mask or b"",
        struct.pack(f"<B{len(q.shape)}Q", len(q.shape), *q.shape),
    ]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated quantized tensor")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_quantized(buf):
    r = _Reader(buf)
    if bytes(r.take(4)) != VQTQ_MAGIC:
        raise FormatError("bad magic, expected VQTQ")
    version, bits, mode, policy, oprec, ratio, qmin, qmax, n = r.unpack("<HBBBBdffQ")
    if version != VQTQ_VERSION:
        raise FormatError(f"unsupported version {version}")
    if mode >= len(MODES) or policy >= len(RANGE_POLICIES):
        raise FormatError("unknown mode or range policy code")
    try:
        cfg = QuantConfig(bits, ratio, MODES[mode], RANGE_POLICIES[policy], oprec)
    except ConfigError as exc:
        raise FormatError(f"invalid stored config: {exc}") from None
    codes = bytes(r.take(packed_size(n, bits)))
    (m,) = r.unpack("<Q")
    if m > n:
        raise FormatError("more outliers than elements")
    indices = np.frombuffer(r.take(8 * m), dtype="<u8").astype(np.int64)
    vdtype, vsize = ("<f4", 4) if oprec == 32 else ("<f2", 2)
    values = np.frombuffer(r.take(vsize * m), dtype=vdtype).astype(np.float32 if oprec == 32 else np.float16)
    (has_mask,) = r.unpack("<B")
    mask = bytes(r.take((n + 7) // 8)) if has_mask else None
    (rank,) = r.unpack("<B")
    shape = r.unpack(f"<{rank}Q")
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after quantized tensor")
    if (int(np.prod(shape, dtype=np.int64)) if rank else 1) != n:
        raise FormatError("shape does not match element count")
    if m and (np.any(np.diff(indices) <= 0) or indices[-1] >= n):
        raise FormatError("outlier indices must be strictly increasing and in range")
    if np.any(unpack_codes(codes, bits, n)[indices] != 0):
        raise FormatError("outlier positions must carry code 0")
    return QuantizedTensor(tuple(int(s) for s in shape), codes, float(qmin), float(qmax), cfg, OutlierSet(indices, values), mask)


def write_quantized(path, q):
    with open(path, "wb") as fh:
        fh.write(encode_quantized(q))


def read_quantized(path):
    with open(path, "rb") as fh:
        return decode_quantized(fh.read())
