"""Local (per-worker) outlier selection versus global selection.

Data-parallel workers each see a contiguous chunk of the flat tensor and run
the codec on it independently with the same configuration, so outlier
counts, thresholds and small-value ranges are all local.  This module
measures how far that drifts from quantizing the whole tensor at once.
"""

from dataclasses import dataclass

import numpy as np

from .codec import dequantize, profile_threshold, quantize
from .exceptions import PlanError
from .tensor import check_tensor


@dataclass(frozen=True)
class ShardPlan:
    """Contiguous equal-size chunks; the last shard takes the remainder."""

    num_workers: int

    def __post_init__(self):
        if self.num_workers < 1:
            raise PlanError("num_workers must be >= 1")

    def bounds(self, n):
        if self.num_workers > n:
            raise PlanError(f"{self.num_workers} workers for {n} elements")
        size = n // self.num_workers
        starts = [w * size for w in range(self.num_workers)]
        ends = starts[1:] + [n]
        return list(zip(starts, ends))


def local_quantize(t, cfg, plan):
    """Quantize every shard independently.

    Returns ``(shards, reconstruction)``: the per-shard quantized tensors in
    shard order and the concatenated dequantization reshaped to ``t``'s shape.
    """
    x = check_tensor(t, "input")
    flat = x.ravel()
    shards = [quantize(flat[a:b], cfg) for a, b in plan.bounds(flat.size)]
    merged = np.concatenate([dequantize(q).ravel() for q in shards])
    return shards, merged.reshape(x.shape)


def local_outlier_indices(shards, plan, n):
    offsets = [a for a, _ in plan.bounds(n)]
    return np.concatenate([q.outliers.indices + off for q, off in zip(shards, offsets)])


def selection_divergence(t, cfg, plan):
    """Compare local and global outlier selection and reconstruction error.

    ``jaccard`` is 1 when both index sets are empty.  ``mse_ratio`` is
    ``mse_local / mse_global``; it is 1 when both errors are zero and
    ``inf`` when only the global error is zero.
    """
    x = check_tensor(t, "input")
    flat = x.ravel().astype(np.float64)
    shards, merged = local_quantize(x, cfg, plan)
    glob = dequantize(quantize(x, cfg))
    local_idx = set(local_outlier_indices(shards, plan, flat.size).tolist())
    _, gidx = profile_threshold(x, cfg.large_ratio)
    global_idx = set(gidx.tolist())
    union = local_idx | global_idx
    jaccard = len(local_idx & global_idx) / len(union) if union else 1.0
    mse_local = float(np.mean((merged.ravel().astype(np.float64) - flat) ** 2))
    mse_global = float(np.mean((glob.ravel().astype(np.float64) - flat) ** 2))
    if mse_global == 0.0:
        ratio = 1.0 if mse_local == 0.0 else float("inf")
    else:
        ratio = mse_local / mse_global
    return {
        "num_workers": plan.num_workers,
        "n": int(flat.size),
        "global_outliers": len(global_idx),
        "local_outliers": len(local_idx),
        "jaccard": jaccard,
        "mse_local": mse_local,
        "mse_global": mse_global,
        "mse_ratio": ratio,
    }
