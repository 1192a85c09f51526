"""K-bit code packing.

Codes form one continuous little-endian bit stream: element 0 occupies the
lowest ``K`` bits of byte 0, element 1 the next ``K`` bits, and so on, with
codes allowed to straddle byte boundaries.  Unused high bits of the final
byte are zero.  ``[1, 2, 3]`` at ``K=2`` packs to the single byte
``0b00111001``.
"""

import numpy as np

from .exceptions import EncodingError, ParameterError


def packed_size(n, bits):
    return (int(n) * int(bits) + 7) // 8


def _check_bits(bits):
    if not 1 <= int(bits) <= 8:
        raise ParameterError(f"bits must be in 1..8, got {bits}")
    return int(bits)


def pack_codes(codes, bits):
    bits = _check_bits(bits)
    codes = np.asarray(codes).ravel()
    if codes.size == 0:
        return b""
    if np.any(codes < 0) or np.any(codes >= (1 << bits)):
        raise EncodingError(f"code out of range for {bits}-bit packing")
    codes = codes.astype(np.uint8)
    planes = (codes[:, None] >> np.arange(bits, dtype=np.uint8)) & 1
    return np.packbits(planes.ravel(), bitorder="little").tobytes()


def unpack_codes(buf, bits, n):
    bits = _check_bits(bits)
    n = int(n)
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    if len(buf) < packed_size(n, bits):
        raise EncodingError(f"{len(buf)} bytes cannot hold {n} codes of {bits} bits")
    raw = np.frombuffer(buf, dtype=np.uint8, count=packed_size(n, bits))
    planes = np.unpackbits(raw, bitorder="little", count=n * bits).reshape(n, bits)
    weights = (1 << np.arange(bits)).astype(np.uint16)
    return (planes.astype(np.uint16) @ weights).astype(np.uint8)
