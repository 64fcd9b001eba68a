"""
Counter-based Gaussian increments.

Each standard normal is a pure function of ``(seed, path_id, step,
component)``: the key is the 64-bit seed, the 128-bit counter packs the
fine step index, the component pair and the path id, and one
Philox4x32-10 block yields two 53-bit uniforms that are mapped through the
normal quantile function. Nothing is sequential, so any increment can be
regenerated in isolation, drivers can be split by component, and a coarse
grid can reuse the sums of fine increments (``substeps``) to couple runs at
different step sizes on the same Brownian path.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, DimensionError

SEED_ENV = "BALLDIFF_SEED"
DEFAULT_SEED = 20240917

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_S21 = np.uint64(21)
_TWO_M53 = 2.0 ** -53


def philox4x32(counter, key, rounds: int = 10):
    """Philox4x32 block function on broadcast arrays of 32-bit words.

    ``counter`` is a 4-tuple and ``key`` a 2-tuple of integer arrays (held
    in uint64, values < 2**32). Returns the four output words.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) for k in key)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _uniform53(hi, lo):
    bits = (hi << _S21) | (lo >> _S11)
    return (bits.astype(np.float64) + 0.5) * _TWO_M53


def _block_uniforms(seed: int, path_id, step, block):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    path_id = np.asarray(path_id, dtype=np.uint64)
    step = np.asarray(step, dtype=np.uint64)
    block = np.asarray(block, dtype=np.uint64)
    ctr = (
        step & _MASK32,
        ((step >> _S32) << np.uint64(16)) | block,
        path_id & _MASK32,
        path_id >> _S32,
    )
    key = (np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32))
    x0, x1, x2, x3 = philox4x32(ctr, key)
    return _uniform53(x0, x1), _uniform53(x2, x3)


def standard_normals(seed: int, path_id, step, component) -> np.ndarray:
    """N(0, 1) variates keyed by broadcast ``(path_id, step, component)``."""
    component = np.asarray(component, dtype=np.uint64)
    even, odd = _block_uniforms(seed, path_id, step, component >> np.uint64(1))
    return ndtri(np.where((component & np.uint64(1)).astype(bool), odd, even))


def _component_normals(seed, path_id, step, first: int, count: int) -> np.ndarray:
    # evaluates each Philox block once and keeps both of its variates
    b0, b1 = first // 2, (first + count - 1) // 2
    blocks = np.arange(b0, b1 + 1, dtype=np.uint64)
    even, odd = _block_uniforms(seed, path_id, step, blocks)
    u = np.stack([even, odd], axis=-1).reshape(even.shape[:-1] + (2 * blocks.size,))
    lo = first - 2 * b0
    return ndtri(u[..., lo : lo + count])


@dataclass(frozen=True)
class NoiseDriver:
    """Brownian increments over steps of length ``dt``.

    ``path_id`` may be an integer or an integer array (one driver feeding a
    whole ensemble). ``offset`` shifts the component index into the parent
    stream, which is how :func:`split_driver` carves out sub-streams.
    ``substeps = m`` makes each increment the sum of ``m`` fine increments
    of length ``dt / m`` from the same key space.
    """

    seed: int
    path_id: object = 0
    dim: int = 1
    dt: float = 1e-3
    offset: int = 0
    substeps: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise DimensionError("driver dimension must be positive")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be a positive integer")

    def increments(self, step: int) -> np.ndarray:
        """All components at ``step``; shape ``shape(path_id) + (dim,)``."""
        pid = np.asarray(self.path_id, dtype=np.uint64)[..., None, None]
        m = self.substeps
        fine = np.arange(step * m, step * m + m, dtype=np.uint64)[:, None]
        z = _component_normals(self.seed, pid, fine, self.offset, self.dim)
        if m == 1:
            out = z[..., 0, :]
        else:
            out = z.sum(axis=-2)
        return out * np.sqrt(self.dt / m)

    def refined(self, factor: int) -> "NoiseDriver":
        """Same Brownian path on a grid ``factor`` times finer."""
        if self.substeps % factor:
            raise ConfigurationError(f"cannot refine {self.substeps} substeps by {factor}")
        return replace(self, dt=self.dt / factor, substeps=self.substeps // factor)

    def with_paths(self, path_id) -> "NoiseDriver":
        return replace(self, path_id=path_id)


@dataclass(frozen=True)
class JoinedDriver:
    """Concatenation of drivers along the component axis."""

    parts: tuple

    def __post_init__(self):
        dts = {p.dt for p in self.parts}
        if len(dts) != 1:
            raise ConfigurationError("joined drivers must share dt")

    @property
    def dim(self) -> int:
        return sum(p.dim for p in self.parts)

    @property
    def dt(self) -> float:
        return self.parts[0].dt

    @property
    def path_id(self):
        return self.parts[0].path_id

    def increments(self, step: int) -> np.ndarray:
        return np.concatenate([p.increments(step) for p in self.parts], axis=-1)


def gaussian_increment(d: NoiseDriver, step: int, component: int) -> float:
    """Single N(0, dt) increment of component ``component`` at ``step``."""
    if not 0 <= component < d.dim:
        raise DimensionError(f"component {component} outside driver of dim {d.dim}")
    sub = replace(d, offset=d.offset + component, dim=1)
    v = sub.increments(step)[..., 0]
    return float(v) if v.ndim == 0 else v


def split_driver(d: NoiseDriver, first: int) -> tuple[NoiseDriver, NoiseDriver]:
    """Split components ``[0, first)`` and ``[first, dim)`` into two drivers."""
    if not 0 < first < d.dim:
        raise DimensionError(f"split point {first} must lie strictly inside (0, {d.dim})")
    return (
        replace(d, dim=first),
        replace(d, dim=d.dim - first, offset=d.offset + first),
    )


def derive_seed(seed: int, label: str) -> int:
    """Independent 64-bit seed for a named sub-stream of an experiment."""
    h = hashlib.blake2b(f"{int(seed)}:{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def resolve_seed(flag: int | None = None) -> int:
    """CLI flag wins over ``BALLDIFF_SEED``; fall back to the package default."""
    if flag is not None:
        return int(flag) & 0xFFFFFFFFFFFFFFFF
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env, 0) & 0xFFFFFFFFFFFFFFFF
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV}={env!r} is not an integer") from exc
    return DEFAULT_SEED
