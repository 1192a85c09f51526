"""Closed-form memory accounting for stored activations."""

import math

from .exceptions import ParameterError


def memory_fraction(bits, large_ratio, mode="vquant", with_mask=False, outlier_precision=32):
    """Stored size relative to float32 storage of the same tensor.

    ``bits/32`` for the codes, ``1/32`` more for a separate ReLU mask
    (``vquant`` only; ``rvquant`` folds the mask into code 0), plus the outlier
    list.  A sparse index+value pair doubles the size of a 32-bit outlier,
    giving ``2 * ratio``; at 16-bit outlier precision the term is ``ratio``.

    ``bits=32`` with ``large_ratio=0`` and no mask is plain float32 (1.0).
    """
    if bits < 1:
        raise ParameterError(f"bits must be positive, got {bits}")
    if not 0.0 <= large_ratio < 1.0:
        raise ParameterError(f"large_ratio must be in [0, 1), got {large_ratio}")
    if mode not in ("vquant", "rvquant"):
        raise ParameterError(f"unknown mode {mode!r}")
    if outlier_precision not in (32, 16):
        raise ParameterError("outlier_precision must be 32 or 16")
    mask_bits = 1 if (with_mask and mode == "vquant") else 0
    outlier_term = (2.0 if outlier_precision == 32 else 1.0) * large_ratio
    return (bits + mask_bits) / 32.0 + outlier_term


def round_half_up(x):
    return int(math.floor(x + 0.5))


def checkpoint_fraction(layer_sizes):
    """Retained-activation fraction under a sqrt(N) segment checkpointing model.

    Layers are cut into contiguous segments of ``s = round(sqrt(N))`` layers
    (the last may be shorter).  The last activation of every segment is kept
    as a checkpoint, and recomputing one segment during the backward pass
    needs a workspace as large as the biggest segment.  The fraction is
    ``(sum of checkpoints + largest segment) / total``, capped at 1.0 since a
    checkpointing scheme never keeps more than plain training does.

    This is a comparator model for memory tables, not a scheduler.
    """
    sizes = [float(s) for s in layer_sizes]
    if not sizes:
        raise ParameterError("layer_sizes must be non-empty")
    if any(s < 0 for s in sizes):
        raise ParameterError("layer sizes must be non-negative")
    total = sum(sizes)
    if total == 0:
        return 1.0
    seg = max(1, round_half_up(math.sqrt(len(sizes))))
    segments = [sizes[i : i + seg] for i in range(0, len(sizes), seg)]
    retained = sum(s[-1] for s in segments) + max(sum(s) for s in segments)
    return min(1.0, retained / total)
