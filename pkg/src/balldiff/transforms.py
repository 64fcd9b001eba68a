"""
Additive functionals of simulated paths and the clocks they define.

A :class:`TimeChange` is the trapezoidal running integral of a positive
weight along a path grid, started at ``s0``; its inverse is the monotone
piecewise-linear interpolant. On top of these sit the skew-product split
of a ball path into radius and a sphere-valued direction on the angular
clock, and the quotient X / (X + Y) of two squared Bessel paths on the
clock int 1 / (X + Y).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import geometry
from .errors import ConfigurationError, DegenerateInputError, DimensionError, HorizonError, SingularityError
from .processes import R_FLOOR, Coefficients, PathGrid


@dataclass(frozen=True)
class TimeChange:
    """Clock values on the original grid from ``s0`` on: values[0] = 0 at grid_times[0] = s0."""

    grid_times: np.ndarray
    values: np.ndarray
    s0: float

    @property
    def horizon(self) -> float:
        return float(self.values[-1])


def _start_index(path: PathGrid, s0: float) -> int:
    i0 = math.ceil((s0 - path.t0) / path.dt - 1e-9)
    if i0 < 0:
        raise HorizonError(f"s0 = {s0} precedes the path start {path.t0}")
    if i0 > len(path) - 1:
        raise HorizonError(f"s0 = {s0} lies beyond the path end")
    return i0


def integrate_time_change(path: PathGrid, weight: Callable, s0: float | None = None) -> TimeChange:
    """Trapezoidal running integral of ``weight(state)`` along the grid from ``s0``.

    ``s0`` is snapped up to the next grid knot. Non-finite weights raise
    :class:`SingularityError` naming the first offending index.
    """
    s0 = path.t0 if s0 is None else s0
    path = path.alive()
    i0 = _start_index(path, s0)
    w = np.asarray(weight(path.states[i0:]), dtype=float)
    w = np.broadcast_to(w, path.states[i0:].shape[:1])
    bad = ~np.isfinite(w)
    if np.any(bad):
        k = i0 + int(np.argmax(bad))
        raise SingularityError(f"time-change integrand is not finite at grid index {k}")
    if np.any(w <= 0):
        k = i0 + int(np.argmax(w <= 0))
        raise ConfigurationError(f"time-change weight must be positive; got {w[k - i0]!r} at index {k}")
    values = np.empty(w.size)
    values[0] = 0.0
    np.cumsum(0.5 * (w[1:] + w[:-1]) * path.dt, out=values[1:])
    times = path.t0 + path.dt * np.arange(i0, len(path))
    return TimeChange(times, values, float(times[0]))


def invert_time_change(tc: TimeChange, tau):
    """Right-continuous inverse ``T(tau)`` by linear interpolation between knots."""
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0) or np.any(tau_arr > tc.values[-1] * (1 + 1e-12)):
        raise HorizonError(
            f"clock time {float(np.max(tau_arr)):.6g} beyond computed horizon {tc.horizon:.6g}; extend the path"
        )
    v, t = tc.values, tc.grid_times
    if v.size == 1:
        out = np.full(tau_arr.shape, t[0])
    else:
        j = np.clip(np.searchsorted(v, tau_arr, side="right") - 1, 0, v.size - 2)
        frac = np.clip((tau_arr - v[j]) / (v[j + 1] - v[j]), 0.0, 1.0)
        out = t[j] + frac * (t[j + 1] - t[j])
    return float(out) if out.ndim == 0 else out


def interpolate_states(path: PathGrid, t) -> np.ndarray:
    """Piecewise-linear path value at arbitrary times inside the grid."""
    s = np.asarray(path.states)
    if len(path) == 1:
        return np.broadcast_to(s[0], np.shape(t) + s.shape[1:]).copy()
    pos = (np.asarray(t, dtype=float) - path.t0) / path.dt
    k = np.clip(np.floor(pos).astype(int), 0, len(path) - 2)
    frac = np.clip(pos - k, 0.0, 1.0)
    if s.ndim > 1:
        frac = frac[..., None]
    return s[k] + frac * (s[k + 1] - s[k])


def cell_width(path: PathGrid, start: int = 0) -> float:
    """Largest state-space jump between neighbouring knots."""
    s = np.asarray(path.states)[start:]
    d = np.diff(s, axis=0)
    if d.size == 0:
        return 0.0
    return float(np.max(np.linalg.norm(d.reshape(d.shape[0], -1), axis=-1)))


class SkewProduct(NamedTuple):
    radius: PathGrid
    direction: PathGrid
    clock: TimeChange


def skew_decompose(x_path: PathGrid, c: Coefficients, s0: float = 0.0) -> SkewProduct:
    """Split a ball path into ``|X|`` and the direction sampled on the angular clock.

    The clock is ``S(t) = int_s0^t gamma(R)^2 / R^2``; the direction
    ``X_T(tau) / R_T(tau)`` is sampled on a uniform grid in tau covering
    ``[0, S(T)]``. The cell is ``S(T) / ceil(S(T) / dt)``, shrunk further
    when ``gamma < R`` somewhere so that one tau-cell never spans more than
    one original cell.
    """
    x = np.asarray(x_path.states)
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError("skew-product decomposition needs n >= 2")
    r_states = np.linalg.norm(x, axis=-1)
    r_path = PathGrid(x_path.t0, x_path.dt, r_states, x_path.seed, x_path.path_id, x_path.alive_until)
    i0 = _start_index(x_path, s0)
    if i0 >= len(x_path) - 1:
        raise HorizonError("decomposition needs at least one grid cell after s0")
    if np.any(r_states[i0:] <= R_FLOOR):
        k = i0 + int(np.argmax(r_states[i0:] <= R_FLOOR))
        raise SingularityError(f"radius underflows {R_FLOOR:g} at grid index {k}; pick a later s0")

    def weight(r):
        return c.gamma(r) ** 2 / r**2

    tc = integrate_time_change(r_path, weight, x_path.t0 + i0 * x_path.dt)
    w_min = float(np.min(weight(r_states[i0:])))
    h = x_path.dt * min(1.0, w_min)
    cells = max(1, math.ceil(tc.horizon / h - 1e-9))
    taus = np.linspace(0.0, tc.horizon, cells + 1)
    t_of_tau = invert_time_change(tc, taus)
    v = geometry.normalize_rows(interpolate_states(x_path, t_of_tau))
    v_path = PathGrid(0.0, tc.horizon / cells, v, x_path.seed, x_path.path_id)
    return SkewProduct(r_path, v_path, tc)


def reconstruct(sp: SkewProduct) -> np.ndarray:
    """``R_t * V(S(t))`` on the original knots from s0 on."""
    i0 = len(sp.radius) - sp.clock.values.size
    v = interpolate_states(sp.direction, sp.clock.values)
    v = geometry.normalize_rows(v)
    return sp.radius.states[i0:, None] * v


def _quotient_inputs(x_path: PathGrid, y_path: PathGrid):
    if len(x_path) != len(y_path) or x_path.dt != y_path.dt or x_path.t0 != y_path.t0:
        raise ConfigurationError("quotient needs two paths on the same grid")
    x = np.asarray(x_path.states, dtype=float)
    y = np.asarray(y_path.states, dtype=float)
    if x[0] + y[0] <= 0:
        raise DegenerateInputError("x0 + y0 must be positive")
    end = min(x_path.alive_until, y_path.alive_until)
    total = PathGrid(x_path.t0, x_path.dt, x[: end + 1] + y[: end + 1])
    ratio = x[: end + 1] / total.states
    return total, ratio


def quotient_at(x_path: PathGrid, y_path: PathGrid, taus):
    """U = X/(X+Y) and X+Y at the original times zeta(tau) of the clock int 1/(X+Y)."""
    total, ratio = _quotient_inputs(x_path, y_path)
    rho = integrate_time_change(total, lambda v: 1.0 / v)
    t = invert_time_change(rho, taus)
    u_path = PathGrid(total.t0, total.dt, ratio)
    return interpolate_states(u_path, t), interpolate_states(total, t), rho


def warren_yor_quotient(x_path: PathGrid, y_path: PathGrid) -> PathGrid:
    """Quotient of two squared Bessel paths on the rho clock.

    Stops at the lifetime of either path (the first zero of a killed Y).
    The output grid is uniform in rho with cell ``rho_end / ceil(rho_end / dt)``.
    """
    total, ratio = _quotient_inputs(x_path, y_path)
    if len(total) == 1:
        return PathGrid(0.0, x_path.dt, ratio, x_path.seed, x_path.path_id)
    rho = integrate_time_change(total, lambda v: 1.0 / v)
    cells = max(1, math.ceil(rho.horizon / x_path.dt - 1e-9))
    taus = np.linspace(0.0, rho.horizon, cells + 1)
    u_path = PathGrid(total.t0, total.dt, ratio)
    u_hat = np.clip(interpolate_states(u_path, invert_time_change(rho, taus)), 0.0, 1.0)
    return PathGrid(0.0, rho.horizon / cells, u_hat, x_path.seed, x_path.path_id)


class QuotientSampler:
    """Streaming version of :func:`quotient_at` for an ensemble of ``P`` paths.

    Feed successive grid states of X and Y; once the running trapezoidal
    rho of a path crosses a target clock time the interpolated quotient and
    sum are stored. The bracketing rule matches the path version, so both
    agree to rounding. :meth:`compact` drops finished paths from the active
    set while results stay indexed by the original position.
    """

    def __init__(self, targets, n_paths: int, dt: float):
        self.targets = np.asarray(targets, dtype=float).reshape(-1)
        self.dt = dt
        self.u = np.full((n_paths, self.targets.size), np.nan)
        self.total = np.full((n_paths, self.targets.size), np.nan)
        self.index = np.arange(n_paths)
        self.rho = None

    def update(self, x, y, alive=None):
        """States of the active paths at the next grid knot."""
        tot = x + y
        if np.any(tot <= 0):
            raise SingularityError("X + Y reached 0; the rho clock is undefined")
        u = x / tot
        w = 1.0 / tot
        alive = np.ones(tot.shape, bool) if alive is None else np.asarray(alive)
        if self.rho is None:
            self.rho = np.zeros(tot.shape)
        else:
            new_rho = self.rho + 0.5 * (self._w + w) * self.dt
            lo, hi = self.rho[:, None], new_rho[:, None]
            tgt = self.targets[None, :]
            hit = (lo <= tgt) & (tgt < hi) & self._alive[:, None] & alive[:, None]
            hit &= np.isnan(self.u[self.index])
            if np.any(hit):
                rows, cols = np.nonzero(hit)
                frac = (tgt[0, cols] - lo[rows, 0]) / (hi[rows, 0] - lo[rows, 0])
                g = self.index[rows]
                self.u[g, cols] = self._u[rows] + frac * (u[rows] - self._u[rows])
                self.total[g, cols] = self._tot[rows] + frac * (tot[rows] - self._tot[rows])
            self.rho = new_rho
        self._u, self._tot, self._w, self._alive = u, tot, w, alive

    @property
    def active_done(self) -> np.ndarray:
        """Per active path: every target captured."""
        return ~np.any(np.isnan(self.u[self.index]), axis=-1)

    def compact(self, keep: np.ndarray):
        """Restrict the active set to ``keep`` (boolean over active paths)."""
        self.index = self.index[keep]
        self.rho = self.rho[keep]
        self._u, self._tot, self._w, self._alive = (
            a[keep] for a in (self._u, self._tot, self._w, self._alive)
        )
