"""
Points of the closed unit ball and the unit sphere, the ball volatility
matrix and the stationary density of the projected spherical motion.

Every function here accepts either the small value types defined below or
plain arrays whose last axis holds coordinates, so the same code serves a
single point and an ensemble of ``P`` points stacked as ``(P, n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, DomainError

#: slack allowed outside the closed ball before a point is rejected
BALL_EPS = 1e-12


def _coords(x) -> np.ndarray:
    if isinstance(x, (BallPoint, SpherePoint)):
        return x.coords
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class BallPoint:
    """A point of the closed unit ball in R^n.

    Points with norm in ``(1, 1 + BALL_EPS]`` are pulled radially onto the
    sphere; anything further out is rejected.
    """

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.size < 1:
            raise DimensionError("a ball point needs at least one coordinate")
        r = float(np.linalg.norm(c))
        if not math.isfinite(r) or r > 1.0 + BALL_EPS:
            raise DomainError(f"|x| = {r!r} lies outside the unit ball")
        if r > 1.0:
            c = c / r
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def n(self) -> int:
        return self.coords.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


@dataclass(frozen=True)
class SpherePoint:
    """A point of the unit sphere S^{d-1} in R^d, d >= 2 (renormalized on construction)."""

    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float).reshape(-1)
        if c.size < 2:
            raise DimensionError("a sphere point needs d >= 2 coordinates")
        r = float(np.linalg.norm(c))
        if r == 0.0 or not math.isfinite(r):
            raise DegenerateInputError("cannot place the zero vector on the sphere")
        c = c / r
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @property
    def d(self) -> int:
        return self.coords.size


@dataclass(frozen=True)
class DensityParams:
    """Dimension ``n`` of the ball and the (possibly fractional) codimension ``ell``."""

    n: int
    ell: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if not self.ell > 0:
            raise DomainError(f"ell must be positive, got {self.ell!r}")


def renormalize_sphere(v) -> SpherePoint:
    """Radial projection ``v / |v|``."""
    return SpherePoint(_coords(v))


def normalize_rows(v: np.ndarray) -> np.ndarray:
    """Batched ``v / |v|`` along the last axis; raises on any zero row."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(r == 0.0):
        raise DegenerateInputError("zero vector cannot be renormalized onto the sphere")
    return v / r


def _shrink_factor(r2: np.ndarray) -> np.ndarray:
    # (1 - sqrt(1 - r^2)) / r^2 rewritten without cancellation; equals 1/2 at r = 0
    return 1.0 / (1.0 + np.sqrt(np.clip(1.0 - r2, 0.0, None)))


def sigma(x) -> np.ndarray:
    r"""Volatility matrix of the projected process.

    .. math:: \sigma(x) = I - (1 - \sqrt{1-|x|^2})\, x x^\top / |x|^2,

    continuously extended by the identity at the origin. Batched inputs of
    shape ``(..., n)`` give ``(..., n, n)``.
    """
    c = _coords(x)
    n = c.shape[-1]
    r2 = np.sum(c * c, axis=-1)
    k = _shrink_factor(r2)
    outer = c[..., :, None] * c[..., None, :]
    return np.eye(n) - k[..., None, None] * outer


def sigma_apply(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``sigma(x) @ v`` for stacked rows without forming the matrices."""
    r2 = np.sum(x * x, axis=-1, keepdims=True)
    xv = np.sum(x * v, axis=-1, keepdims=True)
    return v - _shrink_factor(r2) * xv * x


def project_coords(z, n: int) -> BallPoint:
    """First ``n`` coordinates of a sphere point."""
    c = _coords(z)
    d = c.shape[-1]
    if not 1 <= n < d:
        raise DimensionError(f"need 1 <= n < d = {d}, got n = {n}")
    return BallPoint(c[..., :n])


def density_constant(p: DensityParams) -> float:
    """Normalizer Gamma((n+l)/2) / (pi^{n/2} Gamma(l/2)) of the stationary density."""
    n, ell = p.n, p.ell
    return math.exp(
        math.lgamma((n + ell) / 2.0) - math.lgamma(ell / 2.0) - 0.5 * n * math.log(math.pi)
    )


def invariant_density_h(x, p: DensityParams):
    """Stationary density of the projected process at ``x``.

    Zero outside the ball. For ``ell < 2`` the density diverges on the
    boundary sphere and ``inf`` is returned there. Returns a float for a
    single point and an array for stacked points.
    """
    c = _coords(x)
    if c.shape[-1] != p.n:
        raise DimensionError(f"point has {c.shape[-1]} coordinates, density is on B^{p.n}")
    r2 = np.sum(c * c, axis=-1)
    y = 1.0 - r2
    expo = (p.ell - 2.0) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        val = density_constant(p) * np.where(y > 0, np.abs(y) ** expo, 0.0)
    on_sphere = np.abs(y) <= BALL_EPS
    if expo < 0:
        val = np.where(on_sphere, np.inf, val)
    elif expo == 0:
        val = np.where(on_sphere, density_constant(p), val)
    val = np.where(y < -BALL_EPS, 0.0, val)
    return float(val) if np.ndim(val) == 0 else val


def sphere_area(n: int) -> float:
    """Surface measure of S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)
