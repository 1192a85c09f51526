"""Dense tensors, deterministic matmul and the ``.vqtn`` file format.

A dense tensor is a C-contiguous ``float32`` numpy array; shape and flat
row-major data are exactly what the array already carries, so no wrapper
class is needed.  :func:`check_tensor` is the validation gate.

``.vqtn`` layout (little-endian)::

    offset  size        field
    0       4           magic b"VQTN"
    4       2           format version (u16) = 1
    6       1           dtype code (u8), 0 = float32
    7       1           rank (u8), at most 8
    8       8 * rank    dims (u64 each, all > 0)
    ...     4 * prod    float32 payload, row-major
"""

import struct

import numpy as np

from .exceptions import DimensionError, FormatError, ParameterError

VQTN_MAGIC = b"VQTN"
VQTN_VERSION = 1
MAX_RANK = 8


def check_tensor(x, name="tensor", allow_empty=False):
    """Return ``x`` as a C-contiguous float32 array, rejecting NaN/Inf."""
    arr = np.asarray(x, dtype=np.float32, order="C")
    if not allow_empty and arr.size == 0:
        raise ParameterError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    """Rank-2 float32 matrix product with fixed left-to-right accumulation.

    ``out[i, j] = (((a[i,0]*b[0,j]) + a[i,1]*b[1,j]) + ...)`` with every product
    and every partial sum rounded to float32, so the result does not depend on
    BLAS blocking or FMA availability.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    for k in range(a.shape[1]):
        out += a[:, k, None] * b[None, k, :]
    return out


def encode_tensor(t):
    t = check_tensor(t, allow_empty=False)
    if t.ndim > MAX_RANK:
        raise FormatError(f"rank {t.ndim} exceeds {MAX_RANK}")
    header = VQTN_MAGIC + struct.pack("<HBB", VQTN_VERSION, 0, t.ndim)
    header += struct.pack(f"<{t.ndim}Q", *t.shape)
    return header + t.astype("<f4").tobytes()


def decode_tensor(buf):
    """Parse one ``.vqtn`` payload; raises :class:`FormatError` on any defect."""
    if len(buf) < 8:
        raise FormatError("truncated header")
    if buf[:4] != VQTN_MAGIC:
        raise FormatError(f"bad magic {bytes(buf[:4])!r}")
    version, dtype, rank = struct.unpack_from("<HBB", buf, 4)
    if version != VQTN_VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != 0:
        raise FormatError(f"unsupported dtype code {dtype}")
    if rank > MAX_RANK:
        raise FormatError(f"rank {rank} exceeds {MAX_RANK}")
    if len(buf) < 8 + 8 * rank:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", buf, 8)
    if any(d == 0 for d in dims):
        raise FormatError("zero-sized dimension")
    n = int(np.prod(dims, dtype=np.uint64)) if rank else 1
    start = 8 + 8 * rank
    if len(buf) != start + 4 * n:
        raise FormatError(f"payload holds {len(buf) - start} bytes, expected {4 * n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=start).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise FormatError("payload contains non-finite values")
    return data.reshape(dims)


def write_tensor(path, t):
    payload = encode_tensor(t)
    with open(path, "wb") as fh:
        fh.write(payload)


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
