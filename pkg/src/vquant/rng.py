"""Deterministic random streams and distribution sampling.

Every random draw in the toolkit comes from :class:`RngStream`, a SplitMix64
generator.  SplitMix64 is a counter-based mixer: draw ``i`` (0-based) of a
stream seeded with ``s`` is ``mix(s + (i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``
where ``mix`` is::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with all arithmetic modulo 2**64.  Because draw ``i`` depends only on the
seed and ``i``, any language can reproduce the stream and numpy can generate
it in vectorised blocks.

Test vectors (seed 0): ``0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
0x06C45D188009454F``.

Continuous draws map a 64-bit word ``x`` to the open unit interval as
``((x >> 11) + 0.5) * 2**-53``; distributions are then obtained by inverse
transform (uniform, laplace) or Box-Muller (gaussian, lognormal).
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

_G = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class RngStream:
    """SplitMix64 stream.  Not thread-safe; give each worker its own stream."""

    def __init__(self, seed=0):
        seed = int(seed)
        if not 0 <= seed <= _MASK64:
            raise ParameterError(f"seed must fit in 64 unsigned bits, got {seed}")
        self.seed = seed
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"

    def next_u64(self, n):
        """Return the next ``n`` raw 64-bit words as a ``uint64`` array."""
        n = int(n)
        if n < 0:
            raise ParameterError("n must be non-negative")
        steps = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + steps * _G
            out = _mix(z)
        self.counter += n
        return out

    def uniform01(self, n):
        """``n`` doubles in the open interval (0, 1)."""
        x = self.next_u64(n)
        return ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def permutation(self, n):
        """Deterministic random permutation of ``range(n)``."""
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def spawn(self, salt):
        """Independent child stream derived from this stream's seed and ``salt``."""
        child = RngStream(0)
        with np.errstate(over="ignore"):
            child.seed = int(_mix(np.uint64((self.seed + (int(salt) + 1) * GOLDEN_GAMMA) & _MASK64)))
        return child


def splitmix64_reference(seed, n):
    """Scalar pure-Python SplitMix64, kept as an independent oracle."""
    out = []
    state = seed & _MASK64
    for _ in range(n):
        state = (state + GOLDEN_GAMMA) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        out.append(z ^ (z >> 31))
    return out


@dataclass(frozen=True)
class Distribution:
    """A named distribution with its two parameters.

    ``kind`` is one of ``uniform`` (a, b), ``gaussian`` (mu, sigma),
    ``laplace`` (mu, b) or ``lognormal`` (mu, sigma).
    """

    kind: str
    p0: float = 0.0
    p1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "laplace", "lognormal"):
            raise ParameterError(f"unknown distribution {self.kind!r}")
        if not (np.isfinite(self.p0) and np.isfinite(self.p1)):
            raise ParameterError("distribution parameters must be finite")
        if self.kind == "uniform":
            if self.p1 < self.p0:
                raise ParameterError("uniform requires a <= b")
        elif self.p1 <= 0:
            raise ParameterError(f"{self.kind} scale parameter must be > 0, got {self.p1}")

    @classmethod
    def parse(cls, text):
        """Parse ``"laplace(0,1)"``-style strings."""
        text = text.strip().replace(" ", "")
        try:
            name, rest = text.split("(", 1)
            args = [float(a) for a in rest.rstrip(")").split(",")]
        except ValueError:
            raise ParameterError(f"cannot parse distribution {text!r}") from None
        if len(args) != 2:
            raise ParameterError(f"distribution {name!r} takes two parameters")
        return cls(name, *args)


def _gaussian(rng, n):
    pairs = (n + 1) // 2
    u = rng.uniform01(2 * pairs)
    r = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = 2.0 * np.pi * u[1::2]
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n]


def sample(dist, shape, rng):
    """Draw a float32 tensor of ``shape`` from ``dist``.

    ``dist`` is a :class:`Distribution` or a string such as ``"gaussian(0,1)"``.
    """
    if isinstance(dist, str):
        dist = Distribution.parse(dist)
    shape = (int(shape),) if np.ndim(shape) == 0 else tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ParameterError(f"shape entries must be positive, got {shape}")
    n = int(np.prod(shape))
    if dist.kind == "uniform":
        x = dist.p0 + (dist.p1 - dist.p0) * rng.uniform01(n)
    elif dist.kind == "gaussian":
        x = dist.p0 + dist.p1 * _gaussian(rng, n)
    elif dist.kind == "lognormal":
        x = np.exp(dist.p0 + dist.p1 * _gaussian(rng, n))
    else:
        c = rng.uniform01(n) - 0.5
        x = dist.p0 - dist.p1 * np.sign(c) * np.log1p(-2.0 * np.abs(c))
    return x.astype(np.float32).reshape(shape)
