"""Low-bit tensor quantization that keeps the largest values exact.

Low-bit uniform codes for the bulk of a tensor, exact storage for its few
large-magnitude elements, plus an MLP engine that trains with quantized
activation storage and a post-training quantization pipeline.
"""

__version__ = "0.1.0"

from .codec import (
    OutlierSet,
    QuantConfig,
    QuantizedTensor,
    dequantize,
    profile_threshold,
    quant_error,
    quantize,
    read_quantized,
    write_quantized,
)
from .cost import checkpoint_fraction, memory_fraction
from .estimators import PTQClassifier, QuantizedMLPClassifier, ValueAwareQuantizer
from .packing import pack_codes, unpack_codes
from .rng import Distribution, RngStream, sample
from .tensor import matmul, read_tensor, write_tensor

__all__ = [
    "Distribution",
    "OutlierSet",
    "PTQClassifier",
    "QuantConfig",
    "QuantizedMLPClassifier",
    "QuantizedTensor",
    "RngStream",
    "ValueAwareQuantizer",
    "checkpoint_fraction",
    "dequantize",
    "matmul",
    "memory_fraction",
    "pack_codes",
    "profile_threshold",
    "quant_error",
    "quantize",
    "read_quantized",
    "read_tensor",
    "sample",
    "unpack_codes",
    "write_quantized",
    "write_tensor",
]
