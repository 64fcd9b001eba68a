"""
Euler-Maruyama steppers for the sphere, ball, Wright-Fisher, squared
Bessel, radial and squared-radius equations, plus the path engine.

All steppers are vectorized over leading axes: a state array of shape
``(P,) + state_shape`` advances ``P`` independent paths at once, with the
matching ``(P, noise_dim)`` block of Brownian increments. Square-root
coefficients use full truncation: the state is clamped into its domain
before the coefficients are evaluated and again after the step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import geometry
from .errors import BallDiffError, ConfigurationError, DimensionError, DomainError, SingularityError

R_FLOOR = 1e-8
GRID_STEP = 1e-3
ADMISSIBILITY_TOL = 1e-12


# ---------------------------------------------------------------- coefficients


class CoefficientFunction:
    """Polynomial coefficient on [0, 1] built from a descriptor string.

    Descriptors: ``const:<v>``, ``linear:<a>,<b>`` (a + b u) and
    ``poly:<c0>,<c1>,...``. The Lipschitz bound on [0, 1] is
    ``sum_k k |c_k|``.
    """

    def __init__(self, coeffs, spec: str | None = None):
        self.coeffs = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
        if self.coeffs.size == 0:
            self.coeffs = np.zeros(1)
        self.spec = spec or "poly:" + ",".join(repr(float(c)) for c in self.coeffs)

    @classmethod
    def parse(cls, spec: str) -> "CoefficientFunction":
        kind, _, rest = spec.partition(":")
        try:
            vals = [float(v) for v in rest.split(",")] if rest else []
        except ValueError as exc:
            raise ConfigurationError(f"bad coefficient descriptor {spec!r}") from exc
        if kind == "const" and len(vals) == 1:
            return cls(vals, spec)
        if kind == "linear" and len(vals) == 2:
            return cls(vals, spec)
        if kind == "poly" and vals:
            return cls(vals, spec)
        raise ConfigurationError(
            f"bad coefficient descriptor {spec!r}; use const:v, linear:a,b or poly:c0,c1,..."
        )

    def __call__(self, u):
        return np.polynomial.polynomial.polyval(u, self.coeffs)

    @property
    def lipschitz(self) -> float:
        k = np.arange(self.coeffs.size)
        return float(np.sum(k * np.abs(self.coeffs)))

    def minimum(self) -> float:
        """Exact minimum over [0, 1] (endpoints and interior critical points)."""
        cand = [0.0, 1.0]
        if self.coeffs.size > 2:
            crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(self.coeffs))
            cand += [float(z.real) for z in np.atleast_1d(crit) if abs(z.imag) < 1e-12 and 0 < z.real < 1]
        return float(min(self(np.array(cand))))

    def __repr__(self):
        return f"CoefficientFunction({self.spec!r})"


@dataclass(frozen=True)
class Coefficients:
    """Radial volatility ``gamma`` and drift rate ``g`` of the ball equation.

    Both are callables on [0, 1] that broadcast over arrays. The declared
    Lipschitz constants and lower bound ``gamma_min`` are spot-checked on a
    grid of mesh ``GRID_STEP``; the boundary condition
    ``g(1) / gamma(1)**2 >= (n - 1) / 2`` is enforced.
    """

    gamma: Callable
    g: Callable
    n: int
    lip_gamma: float
    lip_g: float
    gamma_min: float
    grid_max: float = field(init=False)
    grid_min: float = field(init=False)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        if not self.gamma_min > 0:
            raise ConfigurationError("gamma_min must be positive")
        grid = np.linspace(0.0, 1.0, int(round(1.0 / GRID_STEP)) + 1)
        gam = np.broadcast_to(np.asarray(self.gamma(grid), dtype=float), grid.shape)
        gg = np.broadcast_to(np.asarray(self.g(grid), dtype=float), grid.shape)
        if not (np.all(np.isfinite(gam)) and np.all(np.isfinite(gg))):
            raise ConfigurationError("coefficients must be finite on [0, 1]")
        if np.min(gam) < self.gamma_min * (1 - 1e-12):
            raise ConfigurationError(
                f"gamma dips to {np.min(gam):.6g} below the declared minimum {self.gamma_min:.6g}"
            )
        for name, vals, lip in (("gamma", gam, self.lip_gamma), ("g", gg, self.lip_g)):
            slope = np.max(np.abs(np.diff(vals))) / GRID_STEP
            if slope > lip * (1 + 1e-9) + 1e-9:
                raise ConfigurationError(
                    f"{name} has grid slope {slope:.6g} above its declared Lipschitz bound {lip:.6g}"
                )
        ratio = self.admissibility_ratio
        if ratio < (self.n - 1) / 2.0 - ADMISSIBILITY_TOL:
            raise ConfigurationError(
                f"g(1)/gamma(1)^2 = {ratio:.6g} violates g(1)/gamma(1)^2 >= (n-1)/2 = {(self.n - 1) / 2:.6g}"
            )
        # M and m: extremes of 2 g~/gamma~^2 - (n - 1) over the u-grid
        b = self.effective_beta(grid)
        object.__setattr__(self, "grid_max", float(np.max(b)))
        object.__setattr__(self, "grid_min", float(np.min(b)))

    @classmethod
    def from_specs(cls, gamma_spec: str, g_spec: str, n: int) -> "Coefficients":
        gam = CoefficientFunction.parse(gamma_spec)
        g = CoefficientFunction.parse(g_spec)
        gmin = gam.minimum()
        if not gmin > 0:
            raise ConfigurationError(f"gamma {gamma_spec!r} is not positive on [0, 1]")
        return cls(gam, g, n, gam.lipschitz, g.lipschitz, gmin)

    @classmethod
    def projected(cls, n: int, ell: float) -> "Coefficients":
        """gamma = 1 and g = (n - 1 + ell) / 2: first n coordinates of BM on S^{n+ell-1}."""
        return cls.from_specs("const:1", f"const:{(n - 1 + ell) / 2.0!r}", n)

    @property
    def admissibility_ratio(self) -> float:
        return float(self.g(1.0) / self.gamma(1.0) ** 2)

    @property
    def boundary_excess(self) -> float:
        """g(1)/gamma(1)^2 - (n-1)/2; pathwise uniqueness is known above sqrt(2) - 1."""
        return self.admissibility_ratio - (self.n - 1) / 2.0

    # functions of u = r^2
    def gamma_u(self, u):
        return self.gamma(np.sqrt(np.clip(u, 0.0, None)))

    def g_u(self, u):
        return self.g(np.sqrt(np.clip(u, 0.0, None)))

    def effective_beta(self, u):
        """2 g(sqrt u) / gamma(sqrt u)^2 - (n - 1)."""
        return 2.0 * self.g_u(u) / self.gamma_u(u) ** 2 - (self.n - 1)

    @property
    def M(self) -> float:
        return self.grid_max

    @property
    def m(self) -> float:
        return self.grid_min

    def time_changed_wf(self) -> "WfParams":
        """Squared radius on the clock int gamma^2(|X|) dt: WF with the drift swapped."""
        n = self.n

        def drift(u):
            return n * (1.0 - u) - self.effective_beta(u) * u

        return WfParams(float(n), float(self.effective_beta(1.0)), drift=drift)

    def describe(self) -> dict:
        return {
            "gamma": getattr(self.gamma, "spec", repr(self.gamma)),
            "g": getattr(self.g, "spec", repr(self.g)),
            "n": self.n,
        }


@dataclass(frozen=True)
class WfParams:
    """Wright-Fisher rates; ``drift`` overrides ``alpha (1 - u) - beta u`` when given."""

    alpha: float
    beta: float
    drift: Callable | None = None

    def __post_init__(self):
        if not self.alpha >= 0:
            raise DomainError(f"alpha must be non-negative, got {self.alpha!r}")

    def drift_at(self, u):
        if self.drift is not None:
            return self.drift(u)
        return self.alpha * (1.0 - u) - self.beta * u


# ---------------------------------------------------------------- one-step maps


def step_spherical_bm(z, dW, dt):
    """Ito-Stroock step on S^{d-1} followed by radial renormalization."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1]
    zw = np.sum(z * dW, axis=-1, keepdims=True)
    out = z + (dW - zw * z) - 0.5 * (d - 1) * dt * z
    return geometry.normalize_rows(out)


def _radial_exit(x, boundary: str):
    r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    out = r > 1.0
    if not np.any(out):
        return x
    safe = np.where(out, r, 1.0)
    if boundary == "project":
        return np.where(out, x / safe, x)
    if boundary == "reflect":
        return np.where(out, x * (np.clip(2.0 - safe, 0.0, 1.0) / safe), x)
    raise ConfigurationError(f"unknown boundary policy {boundary!r}")


def step_projected(x, dW, dt, c: Coefficients, boundary: str = "project"):
    """Step of dX = gamma(|X|) sigma(X) dB - g(|X|) X dt.

    States leaving the ball are mapped back radially: onto the sphere
    (``project``, the default) or mirrored across it (``reflect``).
    """
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    out = x + c.gamma(r) * geometry.sigma_apply(x, dW) - c.g(r) * x * dt
    return _radial_exit(out, boundary)


def step_wf(u, db, dt, p: WfParams):
    """Full-truncation Euler step of WF(alpha, beta), clamped to [0, 1]."""
    up = np.clip(u, 0.0, 1.0)
    out = up + 2.0 * np.sqrt(up * (1.0 - up)) * db + p.drift_at(up) * dt
    return np.clip(out, 0.0, 1.0)


def step_besq(v, db, dt, delta: float):
    """Full-truncation Euler step of BESQ^delta, clamped at 0."""
    vp = np.clip(v, 0.0, None)
    return np.clip(vp + 2.0 * np.sqrt(vp) * db + delta * dt, 0.0, None)


def step_radial(r, dtheta, dt, c: Coefficients):
    """Step of the radius R = |X|. Refuses r <= R_FLOOR, where the drift blows up."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= R_FLOOR):
        raise SingularityError(
            f"radius {float(np.min(r)):.3g} at or below {R_FLOOR:g}; the 1/r drift is singular, "
            "simulate U = |X|^2 with step_u and take square roots instead"
        )
    gam = c.gamma(r)
    drift = ((c.n - 1) * gam**2 - 2.0 * c.g(r) * r**2) / (2.0 * r)
    out = r + gam * np.sqrt(np.clip(1.0 - r * r, 0.0, None)) * dtheta + drift * dt
    return np.clip(out, R_FLOOR, 1.0)


def step_u(u, dtheta, dt, c: Coefficients):
    """Full-truncation step of the squared radius U = |X|^2, clamped to [0, 1]."""
    up = np.clip(u, 0.0, 1.0)
    gam = c.gamma_u(up)
    g = c.g_u(up)
    drift = c.n * gam**2 * (1.0 - up) - (2.0 * g - (c.n - 1) * gam**2) * up
    out = up + 2.0 * gam * np.sqrt(up * (1.0 - up)) * dtheta + drift * dt
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------- steppers


class _Scalar:
    noise_dim = 1
    state_shape: tuple = ()

    def killed(self, x):
        return np.zeros(np.shape(x), dtype=bool)

    def validate(self, x0):
        x0 = np.asarray(x0, dtype=float)
        lo, hi = self.domain
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise DomainError(f"{type(self).__name__} starts outside [{lo}, {hi}]")
        return x0


class SphericalBM:
    """Brownian motion on S^{d-1} (Stroock form)."""

    def __init__(self, d: int):
        if d < 2:
            raise DimensionError("sphere dimension d must be >= 2")
        self.d = self.noise_dim = d
        self.state_shape = (d,)

    def step(self, z, dW, dt):
        return step_spherical_bm(z, dW, dt)

    def killed(self, z):
        return np.zeros(np.shape(z)[:-1], dtype=bool)

    def validate(self, z0):
        z0 = np.asarray(z0, dtype=float)
        if z0.shape[-1] != self.d:
            raise DimensionError(f"start has {z0.shape[-1]} coordinates, expected {self.d}")
        return geometry.normalize_rows(z0)

    def config(self):
        return {"process": "sphere", "d": self.d}


class ProjectedDiffusion:
    """Ball-valued diffusion dX = gamma(|X|) sigma(X) dB - g(|X|) X dt."""

    def __init__(self, coeffs: Coefficients, boundary: str = "project"):
        if boundary not in ("project", "reflect"):
            raise ConfigurationError(f"unknown boundary policy {boundary!r}")
        self.c = coeffs
        self.boundary = boundary
        self.noise_dim = coeffs.n
        self.state_shape = (coeffs.n,)

    def step(self, x, dW, dt):
        return step_projected(x, dW, dt, self.c, self.boundary)

    def killed(self, x):
        return np.zeros(np.shape(x)[:-1], dtype=bool)

    def validate(self, x0):
        x0 = np.asarray(x0, dtype=float)
        if x0.shape[-1] != self.c.n:
            raise DimensionError(f"start has {x0.shape[-1]} coordinates, expected {self.c.n}")
        r = np.linalg.norm(x0, axis=-1)
        if np.any(r > 1 + geometry.BALL_EPS):
            raise DomainError("start lies outside the unit ball")
        return _radial_exit(x0, "project")

    def config(self):
        return {"process": "projected", "boundary": self.boundary, **self.c.describe()}


class WrightFisher(_Scalar):
    """WF(alpha, beta); with beta < 0 the path is killed on reaching 1 unless ``killing=False``."""

    domain = (0.0, 1.0)

    def __init__(self, params: WfParams, killing: bool | None = None):
        self.p = params
        self.killing = params.beta < 0 if killing is None else killing

    def step(self, u, db, dt):
        return step_wf(u, db[..., 0], dt, self.p)

    def killed(self, u):
        if self.killing:
            return np.asarray(u) >= 1.0
        return super().killed(u)

    def config(self):
        return {"process": "wf", "alpha": self.p.alpha, "beta": self.p.beta,
                "drift_override": self.p.drift is not None}


class SquaredBessel(_Scalar):
    """BESQ^delta; with delta < 0 the path is killed on reaching 0."""

    domain = (0.0, math.inf)

    def __init__(self, delta: float):
        self.delta = float(delta)

    def step(self, v, db, dt):
        return step_besq(v, db[..., 0], dt, self.delta)

    def killed(self, v):
        if self.delta < 0:
            return np.asarray(v) <= 0.0
        return super().killed(v)

    def config(self):
        return {"process": "besq", "delta": self.delta}


class RadialProcess(_Scalar):
    """R = |X| driven by its own scalar Brownian motion."""

    domain = (R_FLOOR, 1.0)

    def __init__(self, coeffs: Coefficients):
        self.c = coeffs

    def validate(self, r0):
        r0 = np.asarray(r0, dtype=float)
        if np.any(r0 <= R_FLOOR):
            raise SingularityError(f"radial start must exceed {R_FLOOR:g}; start U instead")
        return super().validate(r0)

    def step(self, r, dtheta, dt):
        return step_radial(r, dtheta[..., 0], dt, self.c)

    def config(self):
        return {"process": "radial", **self.c.describe()}


class SquaredRadius(_Scalar):
    """U = |X|^2 on the original clock."""

    domain = (0.0, 1.0)

    def __init__(self, coeffs: Coefficients):
        self.c = coeffs

    def step(self, u, dtheta, dt):
        return step_u(u, dtheta[..., 0], dt, self.c)

    def config(self):
        return {"process": "u", **self.c.describe()}


# ---------------------------------------------------------------- paths


@dataclass
class PathGrid:
    """States on the uniform grid ``t0 + k dt``; ``alive_until`` is the last index
    before (or at) the killing time, ``len(states) - 1`` for paths that survive."""

    t0: float
    dt: float
    states: np.ndarray
    seed: int | None = None
    path_id: int | None = None
    alive_until: int | None = None

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.shape[0] < 1:
            raise ConfigurationError("a path needs at least one state")
        if self.alive_until is None:
            self.alive_until = self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    def __len__(self):
        return self.states.shape[0]

    def alive(self) -> "PathGrid":
        """Restriction to the lifetime ``[0, alive_until]``."""
        k = self.alive_until + 1
        return PathGrid(self.t0, self.dt, self.states[:k], self.seed, self.path_id, self.alive_until)


def n_steps_for(T: float, dt: float) -> int:
    """Number of steps covering [0, T]; guards against T/dt landing just above an integer."""
    if not (T > 0 and dt > 0):
        raise ConfigurationError("T and dt must be positive")
    return max(1, math.ceil(T / dt - 1e-9))


def _tag_step(exc: BallDiffError, k: int) -> BallDiffError:
    exc.step = k
    exc.args = (f"step {k}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
    return exc


def iterate_ensemble(stepper, x0, n_steps: int, driver) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield ``(k, state, alive)`` for k = 0..n_steps.

    ``driver.path_id`` fixes the batch shape. Killed paths keep their last
    state and drop out of ``alive``.
    """
    x = stepper.validate(x0)
    batch = np.shape(driver.path_id)
    x = np.broadcast_to(x, batch + tuple(stepper.state_shape)).astype(float, copy=True)
    alive = ~np.asarray(stepper.killed(x))
    pad = (None,) * len(stepper.state_shape)
    yield 0, x, alive
    dt = driver.dt
    for k in range(1, n_steps + 1):
        dW = driver.increments(k - 1)
        try:
            new = stepper.step(x, dW, dt)
        except BallDiffError as exc:
            raise _tag_step(exc, k) from None
        if np.all(alive):
            x = new
        else:
            x = np.where(alive[(...,) + pad], new, x)
        alive = alive & ~np.asarray(stepper.killed(x))
        yield k, x, alive


def simulate_path(stepper, x0, T: float, dt: float, driver) -> PathGrid:
    """Single path on ``ceil(T/dt) + 1`` grid points."""
    if not math.isclose(driver.dt, dt, rel_tol=1e-12):
        raise ConfigurationError(f"driver dt {driver.dt} differs from requested dt {dt}")
    n = n_steps_for(T, dt)
    states = []
    alive_until = None
    for k, x, alive in iterate_ensemble(stepper, x0, n, driver):
        states.append(np.array(x))
        if alive_until is None and not bool(alive):
            alive_until = k
    return PathGrid(0.0, dt, np.stack(states), getattr(driver, "seed", None),
                    getattr(driver, "path_id", None), alive_until)


def simulate_ensemble(stepper, x0, T: float, dt: float, driver) -> tuple[np.ndarray, np.ndarray]:
    """Full ensemble history, shape ``(n_steps + 1, P) + state_shape``, and
    per-path ``alive_until`` indices. Memory grows with T/dt times P."""
    n = n_steps_for(T, dt)
    hist = []
    death = None
    for k, x, alive in iterate_ensemble(stepper, x0, n, driver):
        hist.append(x)
        if death is None:
            death = np.full(alive.shape, -1)
        death = np.where((death < 0) & ~alive, k, death)
    return np.stack(hist), np.where(death < 0, n, death)


def squared_radius(path: PathGrid) -> PathGrid:
    """Pointwise |X_t|^2 of a ball path, clipped into [0, 1]."""
    s = np.asarray(path.states)
    u = np.clip(np.sum(s * s, axis=-1), 0.0, 1.0)
    return PathGrid(path.t0, path.dt, u, path.seed, path.path_id, path.alive_until)
