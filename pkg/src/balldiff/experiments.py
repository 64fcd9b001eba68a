"""
Named experiments: each builds ensembles from a config, reduces them to
:class:`~balldiff.stats.TestReport` objects and optionally hands back path
traces for CSV export.

Ensembles are cut into fixed chunks of ``CHUNK`` path ids. Chunks run on a
thread pool and are merged in path order, so the ``--threads`` setting
never changes a result.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import geometry, stats, transforms
from .errors import ConfigurationError, DimensionError
from .noise import NoiseDriver, derive_seed, resolve_seed
from .processes import (
    Coefficients,
    R_FLOOR,
    PathGrid,
    ProjectedDiffusion,
    RadialProcess,
    SphericalBM,
    SquaredBessel,
    SquaredRadius,
    WfParams,
    WrightFisher,
    iterate_ensemble,
    n_steps_for,
    step_projected,
    step_wf,
)

CHUNK = 1000
QUOTIENT_CHUNK = 5000
THIN_SPACING = 0.5
HIT_LEVEL = 1e-4
EXPERIMENTS = (
    "simulate", "archimedes", "wf-radial", "invariant-density", "skew",
    "warren-yor", "boundary", "uniqueness", "spin",
)
PROCESSES = ("projected", "sphere", "wf", "besq", "radial", "u")


@dataclass
class ExperimentConfig:
    experiment: str
    n: int = 2
    ell: float = 2.0
    gamma_spec: str | None = None
    g_spec: str | None = None
    process: str = "projected"
    alpha: float = 2.0
    beta: float = 2.0
    delta: float = 2.0
    x0: tuple | None = None
    T: float = 1.0
    dt: float = 1e-3
    dt_list: tuple | None = None
    paths: int = 1
    seed: int = 0
    threads: int = 1
    burn_in: float | None = None
    samples_per_path: int = 1
    output_dir: str = "."
    dump_paths: bool = False

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("output_dir", "dump_paths", "threads"):
            d.pop(k)
        return d


DEFAULTS: dict[str, dict] = {
    "simulate": dict(T=1.0, dt=1e-3, paths=1),
    "archimedes": dict(n=1, ell=2.0, dt=1e-3, paths=5000),
    "invariant-density": dict(n=2, ell=1.5, dt=1e-3, paths=5000),
    "wf-radial": dict(n=2, ell=3.0, T=1.0, dt=1e-4, paths=5000),
    "skew": dict(n=2, gamma_spec="const:1", g_spec="const:2", T=1.0, dt=1e-4, paths=1000),
    "warren-yor": dict(alpha=2.0, beta=2.0, x0=(1.0, 1.0), T=0.5, dt=1e-3, paths=5000),
    "boundary": dict(n=2, ell=2.0, T=1.0, dt=1e-4, dt_list=(1e-3, 5e-4, 2.5e-4), paths=1000, beta=2.0),
    "uniqueness": dict(n=2, ell=2.0, T=0.5, dt_list=(1e-3, 5e-4, 2.5e-4), paths=200),
    "spin": dict(n=3, gamma_spec="const:1", g_spec="const:2.5", T=0.1, dt=1e-3, paths=5000),
}

DESCRIPTIONS = {
    "simulate": (
        "Path simulation",
        "Euler-Maruyama paths of one of the sphere, ball, Wright-Fisher, squared Bessel, "
        "radial or squared-radius equations; checks that every state stays in its domain.",
    ),
    "archimedes": (
        "Projection of spherical Brownian motion (stationary law)",
        "The first n coordinates of Brownian motion on S^(n+ell-1) have stationary density "
        "h(x) proportional to (1 - |x|^2)^((ell-2)/2) on the unit ball; for n = 1, ell = 2 this "
        "is the uniform law on [-1, 1] (Archimedes). Tested on the ball equation with gamma = 1, "
        "g = (n-1+ell)/2, and on the projected sphere motion when n + ell is an integer.",
    ),
    "invariant-density": (
        "Stationary radial law",
        "|X|^2 of the projected ball diffusion is stationary under Beta(n/2, ell/2); "
        "KS plus a chi-square histogram test, dropping a boundary bin where the density blows up.",
    ),
    "wf-radial": (
        "Squared radius is Wright-Fisher",
        "U = |X|^2 of the ball diffusion with gamma = 1, g = (n-1+ell)/2 is a WF(n, ell) "
        "diffusion; the law of U_T is compared with a direct WF(n, ell) simulation.",
    ),
    "skew": (
        "Skew-product decomposition",
        "X_t = R_t V(S(t)) with S(t) = int gamma(R)^2 / R^2; the radius is independent of "
        "the time-changed direction V. Checks reconstruction to grid resolution, the quadratic "
        "covariation gamma^2 (delta_ij - X^i X^j) and the correlation of R_T with V^1 at S(T).",
    ),
    "warren-yor": (
        "Squared Bessel quotient",
        "For BESQ(alpha) X and BESQ(beta) Y, X/(X+Y) on the clock rho = int 1/(X+Y) is a "
        "WF(alpha, beta) diffusion started at x0/(x0+y0), independent of X+Y.",
    ),
    "boundary": (
        "Boundary attainment",
        "For n >= 2 the process U = |X|^2 never hits 0; it never hits 1 when "
        "g/gamma^2 >= (n-1)/2 + 1 near the boundary. WF(alpha, beta) never hits 0 for alpha >= 2. "
        "Also the comparison WF(n, M) <= U <= WF(n, m) on the clock int gamma^2.",
    ),
    "uniqueness": (
        "Pathwise uniqueness surrogate",
        "Two solutions driven by the same Brownian motion from the same start coincide when "
        "g(1)/gamma(1)^2 - (n-1)/2 exceeds sqrt(2) - 1 = 0.4142. Two discretizations differing "
        "only in their boundary policy must merge as dt shrinks; diagnostic functional "
        "W = |X - X~|^2 + (Y^p - Y~^p)^2 with p = 1 - sqrt(2)/4.",
    ),
    "spin": (
        "Rapid spinning",
        "Started at the origin, the angular clock S_s(t) diverges as s -> 0, so the direction "
        "X_t/|X_t| is uniform on S^(n-1) for every t > 0.",
    ),
}


@dataclass
class ExperimentResult:
    reports: list
    traces: list = field(default_factory=list)  # PathGrid objects for CSV export
    notes: list = field(default_factory=list)


# ---------------------------------------------------------------- config handling


def make_config(experiment: str, **overrides) -> ExperimentConfig:
    """Config with the experiment's defaults; ``None`` overrides are ignored."""
    if experiment not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    vals = dict(DEFAULTS[experiment])
    vals.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in vals:
        vals["seed"] = resolve_seed(None)
    if "threads" not in vals:
        vals["threads"] = os.cpu_count() or 1
    cfg = ExperimentConfig(experiment, **vals)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    if cfg.paths < 1:
        raise ConfigurationError("paths must be >= 1")
    if cfg.threads < 1:
        raise ConfigurationError("threads must be >= 1")
    if not (cfg.dt > 0 and cfg.T > 0):
        raise ConfigurationError("T and dt must be positive")
    if not cfg.dt < cfg.T:
        raise ConfigurationError(f"dt = {cfg.dt} must be smaller than T = {cfg.T}")
    if int(cfg.n) != cfg.n or cfg.n < 1:
        raise ConfigurationError("n must be a positive integer")
    if not cfg.ell > 0:
        raise ConfigurationError("ell must be positive")
    if cfg.dt_list is not None and (len(cfg.dt_list) < 2 or any(not 0 < d < cfg.T for d in cfg.dt_list)):
        raise ConfigurationError("dt-list needs at least two step sizes in (0, T)")
    if cfg.process not in PROCESSES:
        raise ConfigurationError(f"unknown process {cfg.process!r}; choose from {', '.join(PROCESSES)}")
    if cfg.samples_per_path < 1:
        raise ConfigurationError("samples per path must be >= 1")
    if cfg.alpha < 0:
        raise ConfigurationError("alpha must be non-negative")
    # coefficient admissibility before any simulation
    if cfg.experiment in ("simulate", "skew", "boundary", "spin", "uniqueness"):
        coefficients(cfg)


def coefficients(cfg: ExperimentConfig) -> Coefficients:
    if cfg.gamma_spec is None and cfg.g_spec is None:
        return Coefficients.projected(cfg.n, cfg.ell)
    gamma = cfg.gamma_spec or "const:1"
    g = cfg.g_spec or f"const:{(cfg.n - 1 + cfg.ell) / 2.0!r}"
    return Coefficients.from_specs(gamma, g, cfg.n)


def _x0_vector(cfg: ExperimentConfig, n: int, default) -> np.ndarray:
    if cfg.x0 is None:
        return np.asarray(default, dtype=float)
    x = np.asarray(cfg.x0, dtype=float)
    if x.size == 1 and n > 1:
        raise DimensionError(f"x0 needs {n} coordinates")
    if x.size != n:
        raise DimensionError(f"x0 has {x.size} coordinates, expected {n}")
    return x


def _scalar_x0(cfg: ExperimentConfig, default: float) -> float:
    if cfg.x0 is None:
        return float(default)
    if len(cfg.x0) != 1:
        raise DimensionError("this experiment takes a scalar x0")
    return float(cfg.x0[0])


def _kw(cfg: ExperimentConfig) -> dict:
    return {"config_digest": stats.config_digest(cfg.as_dict()), "seed": cfg.seed}


# ---------------------------------------------------------------- ensemble plumbing


def map_chunks(fn: Callable, n_paths: int, threads: int = 1, chunk: int = CHUNK) -> list:
    """``fn(path_ids)`` over fixed chunks, results in path order."""
    bounds = [(a, min(a + chunk, n_paths)) for a in range(0, n_paths, chunk)]
    if threads <= 1 or len(bounds) == 1:
        return [fn(np.arange(a, b)) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(np.arange(*ab)), bounds))


def coupled_drivers(seed: int, path_ids, dim: int, dt_list) -> list:
    """One driver per step size, all reading the same Brownian path.

    Works when every dt is an integer multiple of the smallest one;
    otherwise each dt gets a plain driver (no coupling).
    """
    fine = min(dt_list)
    out = []
    for dt in dt_list:
        m = dt / fine
        if abs(m - round(m)) < 1e-9:
            out.append(NoiseDriver(seed, path_ids, dim, dt, substeps=int(round(m))))
        else:
            out.append(NoiseDriver(seed, path_ids, dim, dt))
    return out


def final_states(stepper, x0, T: float, driver, observe: Callable | None = None):
    """Run an ensemble to ``T``; returns the final state and alive mask."""
    n = n_steps_for(T, driver.dt)
    x = alive = None
    for k, x, alive in iterate_ensemble(stepper, x0, n, driver):
        if observe is not None:
            observe(k, x, alive)
    return x, alive


def stationary_samples(stepper, x0, burn_in: float, dt: float, seed: int, n_paths: int,
                       per_path: int, threads: int) -> np.ndarray:
    """States at ``burn_in + j * THIN_SPACING``, ``j < per_path``, for every path."""
    first = n_steps_for(burn_in, dt)
    gap = n_steps_for(THIN_SPACING, dt)
    marks = {first + j * gap: j for j in range(per_path)}
    total = first + (per_path - 1) * gap

    def work(ids):
        drv = NoiseDriver(seed, ids, stepper.noise_dim, dt)
        out = np.empty((per_path, ids.size) + tuple(stepper.state_shape))
        for k, x, _ in iterate_ensemble(stepper, x0, total, drv):
            if k in marks:
                out[marks[k]] = x
        return out

    parts = map_chunks(work, n_paths, threads)
    s = np.concatenate(parts, axis=1)
    return s.reshape((-1,) + tuple(stepper.state_shape))


def _burn_in(cfg: ExperimentConfig, c: Coefficients) -> float:
    if cfg.burn_in is not None:
        return cfg.burn_in
    lam = c.g.minimum() if hasattr(c.g, "minimum") else float(np.min(c.g(np.linspace(0, 1, 1001))))
    if not lam > 0:
        raise ConfigurationError("burn-in 5/min(g) needs g > 0; pass an explicit burn-in")
    return 5.0 / lam


# ---------------------------------------------------------------- individual checks


def radial_angular_probs(n: int, ell: float, radial_bins: int = 5, angular_bins: int = 4):
    """Equal-probability U = |x|^2 edges under Beta(n/2, ell/2) and cell masses."""
    edges = [0.0] + [stats.beta_quantile(i / radial_bins, n / 2.0, ell / 2.0) for i in range(1, radial_bins)] + [1.0]
    radial = np.diff([stats.regularized_incomplete_beta(n / 2.0, ell / 2.0, e) for e in edges])
    return np.asarray(edges), np.outer(radial, np.full(angular_bins, 1.0 / angular_bins))


def radial_angular_counts(x: np.ndarray, edges: np.ndarray, angular_bins: int = 4) -> np.ndarray:
    u = np.clip(np.sum(x * x, axis=-1), 0.0, 1.0)
    r_idx = np.clip(np.searchsorted(edges, u, side="right") - 1, 0, edges.size - 2)
    ang = np.arctan2(x[:, 1], x[:, 0]) % (2 * math.pi)
    a_idx = np.minimum((ang / (2 * math.pi / angular_bins)).astype(int), angular_bins - 1)
    counts = np.zeros((edges.size - 1, angular_bins))
    np.add.at(counts, (r_idx, a_idx), 1.0)
    return counts


def density_check(x: np.ndarray, n: int, ell: float, name: str, **kw) -> stats.TestReport:
    """Stationary-law test of ball samples: KS for n = 1, radial x angular chi-square for n >= 2."""
    if n == 1:
        a = ell / 2.0
        return stats.ks_one_sample(x[:, 0], lambda v: stats.beta_cdf((v + 1.0) / 2.0, a, a), name, **kw)
    edges, probs = radial_angular_probs(n, ell)
    counts = radial_angular_counts(x, edges)
    if ell < 2:
        # density diverges on the sphere: condition on the inner radial shells
        counts, probs = counts[:-1], probs[:-1]
    return stats.chi_square_counts(counts, probs, name, **kw)


def covariation_errors(coeffs: Coefficients, x0, T: float, dt: float, seed: int, n_paths: int) -> np.ndarray:
    """Per-path relative Frobenius gap between realized and predicted covariation."""
    n = coeffs.n
    ids = np.arange(n_paths)
    drv = NoiseDriver(seed, ids, n, dt)
    stepper = ProjectedDiffusion(coeffs)
    realized = np.zeros((n_paths, n, n))
    predicted = np.zeros((n_paths, n, n))
    prev = None
    eye = np.eye(n)
    for _, x, _ in iterate_ensemble(stepper, x0, n_steps_for(T, dt), drv):
        if prev is not None:
            d = x - prev
            realized += d[:, :, None] * d[:, None, :]
            r = np.linalg.norm(prev, axis=-1)
            predicted += (coeffs.gamma(r) ** 2)[:, None, None] * (eye - prev[:, :, None] * prev[:, None, :]) * dt
        prev = x
    err = np.linalg.norm(realized - predicted, axis=(1, 2))
    return err / np.linalg.norm(predicted, axis=(1, 2))


def skew_checks(coeffs: Coefficients, x0, T: float, dt: float, seed: int, n_paths: int, threads: int,
                recon_paths: int = 10, kw=None):
    """Reconstruction on a few paths plus radius/direction correlations on all of them.

    ``V(S(T)) = X_T / R_T`` exactly, so that correlation is read from final
    states; the decomposed subset confirms the identity. ``S(T)`` is itself
    a functional of R, so a second correlation reads V at the fixed clock
    time ``tau0 = gamma_min^2 T / 2 <= S(T)``, captured while streaming.
    """
    kw = kw or {}
    stepper = ProjectedDiffusion(coeffs)
    n_steps = n_steps_for(T, dt)
    recon = min(recon_paths, n_paths)
    tau0 = 0.5 * coeffs.gamma_min**2 * T

    def weight(x):
        r = np.maximum(np.linalg.norm(x, axis=-1), R_FLOOR)
        return coeffs.gamma(r) ** 2 / r**2

    def work(ids):
        drv = NoiseDriver(seed, ids, coeffs.n, dt)
        keep = ids < recon
        hist = []
        x = prev = w_prev = None
        clock = np.zeros(ids.size)
        v_tau = np.full((ids.size, coeffs.n), np.nan)
        for _, x, _ in iterate_ensemble(stepper, x0, n_steps, drv):
            if keep.any():
                hist.append(x[keep].copy())
            w = weight(x)
            if prev is not None:
                new = clock + 0.5 * (w + w_prev) * dt
                hit = (clock <= tau0) & (tau0 < new) & np.isnan(v_tau[:, 0])
                if hit.any():
                    f = ((tau0 - clock[hit]) / (new[hit] - clock[hit]))[:, None]
                    v_tau[hit] = prev[hit] + f * (x[hit] - prev[hit])
                clock = new
            prev, w_prev = x.copy(), w
        return x, (np.stack(hist) if hist else None), v_tau

    parts = map_chunks(work, n_paths, threads)
    xT = np.concatenate([p[0] for p in parts])
    v_tau = np.concatenate([p[2] for p in parts])
    hist = parts[0][1]
    ratios, end_gaps, traces = [], [], []
    for i in range(recon):
        path = PathGrid(0.0, dt, hist[:, i], seed, i)
        sp = transforms.skew_decompose(path, coeffs)
        err = np.max(np.linalg.norm(path.states - transforms.reconstruct(sp), axis=-1))
        cell = transforms.cell_width(path)
        ratios.append(err / cell if cell > 0 else 0.0)
        end_gaps.append(float(np.linalg.norm(sp.direction.states[-1] - xT[i] / np.linalg.norm(xT[i]))))
        traces.append(path)
    r_T = np.linalg.norm(xT, axis=-1)
    corr = stats.correlation(r_T, xT[:, 0] / r_T)
    ok = np.isfinite(v_tau[:, 0])
    corr_fixed = stats.correlation(r_T[ok], geometry.normalize_rows(v_tau[ok])[:, 0])
    bound = 4.0 / math.sqrt(n_paths)
    reports = [
        stats.threshold_report("skew_reconstruction_cells", max(ratios), 2.0, recon, **kw),
        stats.threshold_report("skew_independence_corr", abs(corr), bound, n_paths, **kw),
        stats.threshold_report("skew_independence_fixed_clock", abs(corr_fixed), 4.0 / math.sqrt(ok.sum()),
                               int(ok.sum()), **kw),
    ]
    reports[0].details["direction_end_gap"] = max(end_gaps)
    reports[1].details["corr"] = corr
    reports[2].details.update(corr=corr_fixed, tau0=tau0)
    return reports, traces


def quotient_samples(alpha: float, beta: float, x0: float, y0: float, targets, dt: float, seed: int,
                     n_paths: int, threads: int, t_max: float | None = None):
    """Warren-Yor quotient and sum at the rho-times ``targets`` (NaN where never reached)."""
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    t_max = t_max if t_max is not None else 400.0 * float(np.max(targets)) + 10.0
    n_max = n_steps_for(t_max, dt)

    def work(ids):
        # components 0 and 1 drive X and Y (what split_driver would hand out)
        drv = NoiseDriver(seed, ids, 2, dt)
        samp = transforms.QuotientSampler(targets, ids.size, dt)
        x = np.full(ids.size, x0, dtype=float)
        y = np.full(ids.size, y0, dtype=float)
        alive = np.ones(ids.size, bool)
        samp.update(x, y, alive)
        ix, iy = SquaredBessel(alpha), SquaredBessel(beta)
        for k in range(n_max):
            db = drv.with_paths(ids[samp.index]).increments(k)
            x = np.where(alive, ix.step(x, db[:, :1], dt), x)
            y = np.where(alive, iy.step(y, db[:, 1:], dt), y)
            alive &= ~(ix.killed(x) | iy.killed(y))
            samp.update(x, y, alive)
            keep = ~samp.active_done & alive
            if not keep.all():
                samp.compact(keep)
                x, y, alive = x[keep], y[keep], alive[keep]
            if samp.index.size == 0:
                break
        return samp.u, samp.total

    # the slowest path sets the cost of a chunk, so use few large ones
    parts = map_chunks(work, n_paths, threads, chunk=QUOTIENT_CHUNK)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def wf_final(params: WfParams, u0: float, T: float, dt: float, seed: int, n_paths: int, threads: int,
             killing=None) -> np.ndarray:
    wf = WrightFisher(params, killing)

    def work(ids):
        x, alive = final_states(wf, u0, T, NoiseDriver(seed, ids, 1, dt))
        return np.where(alive, x, np.nan)

    return np.concatenate(map_chunks(work, n_paths, threads))


def hitting_fractions(stepper, x0, T: float, dt_list, seed: int, n_paths: int, threads: int,
                      level: float, direction: str) -> list:
    """Fraction of paths crossing ``level`` on [0, T] for each dt with coupled noise."""
    def work(ids):
        out = []
        for drv in coupled_drivers(seed, ids, 1, dt_list):
            fp = stats.FirstPassage(level, direction, ids.size)
            final_states(stepper, x0, T, drv, lambda k, x, a: fp.update(k * drv.dt, x, a))
            out.append(np.isfinite(fp.first))
        return np.array(out)

    hits = np.concatenate(map_chunks(work, n_paths, threads), axis=1)
    return [float(np.mean(h)) for h in hits]


def trend_statistic(values) -> float:
    """Largest successive increase; <= 0 means the sequence never goes up."""
    v = np.asarray(values, dtype=float)
    return float(np.max(np.diff(v)))


def sandwich_violation(coeffs: Coefficients, u0: float, T: float, dt: float, seed: int, n_paths: int,
                       threads: int) -> float:
    """Largest excursion of the time-changed U outside [WF(n, M) - 2dt, WF(n, m) + 2dt].

    All three run on the clock ``int gamma^2`` with the same increments; the
    middle one is the squared-radius equation there (WF with swapped drift).
    """
    n = coeffs.n
    mid = coeffs.time_changed_wf()
    low = WfParams(float(n), coeffs.M)
    high = WfParams(float(n), coeffs.m)
    steps = n_steps_for(T, dt)

    def work(ids):
        drv = NoiseDriver(seed, ids, 1, dt)
        u = np.full(ids.size, u0)
        a, b = u.copy(), u.copy()
        worst = -math.inf
        for k in range(steps):
            db = drv.increments(k)[..., 0]
            u, a, b = step_wf(u, db, dt, mid), step_wf(a, db, dt, low), step_wf(b, db, dt, high)
            worst = max(worst, float(np.max(a - u)) - 2 * dt, float(np.max(u - b)) - 2 * dt)
        return worst

    return max(map_chunks(work, n_paths, threads))


def coalescence_runs(coeffs: Coefficients, x0, T: float, dt_list, seed: int, n_paths: int, threads: int):
    """Per dt: ensemble mean of sup_t |X - X~| and max_t of the mean W functional.

    ``X`` projects Euler exits back onto the sphere and ``X~`` mirrors them;
    both read the same coupled Brownian increments.
    """
    def work(ids):
        sups, ws = [], []
        for drv in coupled_drivers(seed, ids, coeffs.n, dt_list):
            x = np.broadcast_to(np.asarray(x0, float), (ids.size, coeffs.n)).copy()
            xt = x.copy()
            sup = np.zeros(ids.size)
            wsum = []
            for k in range(n_steps_for(T, drv.dt)):
                dW = drv.increments(k)
                x = step_projected(x, dW, drv.dt, coeffs, "project")
                xt = step_projected(xt, dW, drv.dt, coeffs, "reflect")
                sup = np.maximum(sup, np.linalg.norm(x - xt, axis=-1))
                wsum.append(np.sum(stats.coalescence_functional(x, xt)))
            sups.append(sup)
            ws.append(np.array(wsum))
        return sups, ws

    parts = map_chunks(work, n_paths, threads)
    mean_sup = [float(np.mean(np.concatenate([p[0][j] for p in parts]))) for j in range(len(dt_list))]
    max_w = [float(np.max(sum(p[1][j] for p in parts)) / n_paths) for j in range(len(dt_list))]
    return mean_sup, max_w


def spin_clock_growth(coeffs: Coefficients, T: float, dt: float, seed: int, levels: int = 6):
    """S_s(T) for s = 2^k dt, k = levels..1 along one path started at the origin."""
    stepper = ProjectedDiffusion(coeffs)
    drv = NoiseDriver(seed, 0, coeffs.n, dt)
    states = [x.copy() for _, x, _ in iterate_ensemble(stepper, np.zeros(coeffs.n), n_steps_for(T, dt), drv)]
    path = PathGrid(0.0, dt, np.linalg.norm(np.stack(states), axis=-1))
    clocks = []
    for k in range(levels, 0, -1):
        tc = transforms.integrate_time_change(path, lambda r: coeffs.gamma(r) ** 2 / r**2, s0=2**k * dt)
        clocks.append(tc.horizon)
    return clocks


# ---------------------------------------------------------------- experiments


def run_simulate(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    if cfg.process == "sphere":
        d = cfg.n + cfg.ell
        if d != int(d):
            raise ConfigurationError("sphere process needs an integer n + ell")
        d = int(d)
        stepper = SphericalBM(d)
        x0 = _x0_vector(cfg, d, np.eye(d)[0])
    elif cfg.process == "projected":
        stepper = ProjectedDiffusion(coefficients(cfg))
        x0 = _x0_vector(cfg, cfg.n, np.zeros(cfg.n))
    elif cfg.process == "wf":
        stepper = WrightFisher(WfParams(cfg.alpha, cfg.beta))
        dflt = cfg.alpha / (cfg.alpha + cfg.beta) if cfg.alpha + cfg.beta > 0 else 0.5
        x0 = _scalar_x0(cfg, dflt)
    elif cfg.process == "besq":
        stepper = SquaredBessel(cfg.delta)
        x0 = _scalar_x0(cfg, 1.0)
    elif cfg.process == "radial":
        stepper = RadialProcess(coefficients(cfg))
        x0 = _scalar_x0(cfg, 0.5)
    else:
        stepper = SquaredRadius(coefficients(cfg))
        x0 = _scalar_x0(cfg, 0.5)

    n_steps = n_steps_for(cfg.T, cfg.dt)

    def work(ids):
        drv = NoiseDriver(cfg.seed, ids, stepper.noise_dim, cfg.dt)
        hist, death = [], np.full(ids.size, -1)
        for k, x, alive in iterate_ensemble(stepper, x0, n_steps, drv):
            hist.append(x.copy())
            death = np.where((death < 0) & ~alive, k, death)
        return np.stack(hist), np.where(death < 0, n_steps, death)

    parts = map_chunks(work, cfg.paths, cfg.threads)
    hist = np.concatenate([p[0] for p in parts], axis=1)
    death = np.concatenate([p[1] for p in parts])
    traces = [PathGrid(0.0, cfg.dt, hist[:, i], cfg.seed, i, int(death[i])) for i in range(cfg.paths)]

    if cfg.process == "sphere":
        excess = float(np.max(np.abs(np.linalg.norm(hist, axis=-1) - 1.0)))
        tol = 1e-12
    elif cfg.process == "projected":
        excess = float(np.max(np.linalg.norm(hist, axis=-1) - 1.0))
        tol = 1e-12
    else:
        lo, hi = stepper.domain
        excess = float(max(np.max(lo - hist), np.max(hist - hi)))
        tol = 0.0
    report = stats.threshold_report(f"simulate_{cfg.process}_domain", excess, tol, cfg.paths, **kw)
    notes = []
    if cfg.process == "projected":
        touched = int(np.sum(np.any(np.linalg.norm(hist, axis=-1) >= 1.0 - 1e-12, axis=0)))
        if touched:
            notes.append(f"{touched} path(s) touched the sphere; exits were projected radially")
    return ExperimentResult([report], traces, notes)


def run_archimedes(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    c = Coefficients.projected(cfg.n, cfg.ell)
    burn = _burn_in(cfg, c)
    x = stationary_samples(ProjectedDiffusion(c), np.zeros(cfg.n), burn, cfg.dt, cfg.seed, cfg.paths,
                           cfg.samples_per_path, cfg.threads)
    reports = [density_check(x, cfg.n, cfg.ell, "archimedes_ball", **kw)]
    d = cfg.n + cfg.ell
    if d == int(d):
        d = int(d)
        z = stationary_samples(SphericalBM(d), np.eye(d)[-1], burn, cfg.dt, derive_seed(cfg.seed, "sphere"),
                               cfg.paths, cfg.samples_per_path, cfg.threads)
        reports.append(density_check(z[:, : cfg.n], cfg.n, cfg.ell, "archimedes_sphere_projection", **kw))
    return ExperimentResult(reports, notes=[f"burn-in {burn:g}, thinning {THIN_SPACING:g}"])


def run_invariant_density(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    c = Coefficients.projected(cfg.n, cfg.ell)
    burn = _burn_in(cfg, c)
    x = stationary_samples(ProjectedDiffusion(c), np.zeros(cfg.n), burn, cfg.dt, cfg.seed, cfg.paths,
                           cfg.samples_per_path, cfg.threads)
    u = np.clip(np.sum(x * x, axis=-1), 0.0, 1.0)
    a, b = cfg.n / 2.0, cfg.ell / 2.0
    reports = [
        stats.ks_one_sample(u, lambda v: stats.beta_cdf(v, a, b), "invariant_radial_ks", **kw),
        stats.chi_square_density_test(u, lambda v: stats.beta_pdf(v, a, b), (0.0, 1.0), 20,
                                      "invariant_radial_chi2", **kw),
    ]
    return ExperimentResult(reports, notes=[f"burn-in {burn:g}, thinning {THIN_SPACING:g}"])


def run_wf_radial(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    c = Coefficients.projected(cfg.n, cfg.ell)
    x0 = _x0_vector(cfg, cfg.n, np.eye(cfg.n)[0] * 0.5)
    u0 = float(np.sum(x0 * x0))
    stepper = ProjectedDiffusion(c)

    def work(ids):
        x, _ = final_states(stepper, x0, cfg.T, NoiseDriver(cfg.seed, ids, cfg.n, cfg.dt))
        return np.sum(x * x, axis=-1)

    u_ball = np.concatenate(map_chunks(work, cfg.paths, cfg.threads))
    u_wf = wf_final(WfParams(float(cfg.n), cfg.ell), u0, cfg.T, cfg.dt, derive_seed(cfg.seed, "wf"),
                    cfg.paths, cfg.threads)
    return ExperimentResult([stats.ks_two_sample(u_ball, u_wf, "wf_radial_ks", **kw)])


def run_skew(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    c = coefficients(cfg)
    if c.n < 2:
        raise ConfigurationError("the skew product needs n >= 2")
    x0 = _x0_vector(cfg, c.n, np.eye(c.n)[0] * 0.5)
    if np.linalg.norm(x0) == 0:
        raise ConfigurationError("skew experiment starts at s = 0 and so needs x0 != 0")
    reports, traces = skew_checks(c, x0, cfg.T, cfg.dt, cfg.seed, cfg.paths, cfg.threads, kw=kw)
    n_cov = min(cfg.paths, 50)
    errs = covariation_errors(c, x0, cfg.T, cfg.dt, derive_seed(cfg.seed, "covariation"), n_cov)
    reports.append(stats.threshold_report("skew_covariation_rel_error", float(np.max(errs)),
                                          5.0 * math.sqrt(cfg.dt), n_cov, **kw))
    return ExperimentResult(reports, traces)


def run_warren_yor(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    if cfg.x0 is None or len(cfg.x0) != 2:
        raise DimensionError("warren-yor takes x0 as 'x0,y0'")
    x0, y0 = map(float, cfg.x0)
    if x0 < 0 or y0 < 0:
        raise ConfigurationError("BESQ starts must be non-negative")
    if x0 + y0 <= 0:
        raise ConfigurationError("x0 + y0 must be positive")
    tau_corr = min(0.3, cfg.T)
    u, tot = quotient_samples(cfg.alpha, cfg.beta, x0, y0, [cfg.T, tau_corr], cfg.dt, cfg.seed, cfg.paths,
                              cfg.threads)
    got = np.isfinite(u[:, 0])
    direct = wf_final(WfParams(cfg.alpha, cfg.beta), x0 / (x0 + y0), cfg.T, cfg.dt,
                      derive_seed(cfg.seed, "wf"), cfg.paths, cfg.threads)
    direct = direct[np.isfinite(direct)]
    reports = [stats.ks_two_sample(u[got, 0], direct, "warren_yor_ks", **kw)]
    ok = np.isfinite(u[:, 1])
    corr = stats.correlation(u[ok, 1], tot[ok, 1])
    reports.append(stats.threshold_report("warren_yor_sum_independence", abs(corr), 4.0 / math.sqrt(ok.sum()),
                                          int(ok.sum()), **kw))
    notes = []
    if not got.all():
        notes.append(f"{int((~got).sum())} path(s) died or never reached rho = {cfg.T:g}")
    return ExperimentResult(reports, notes=notes)


def run_boundary(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    n = cfg.n
    u0 = _scalar_x0(cfg, 0.5)
    dts = tuple(cfg.dt_list)
    finest = min(dts)
    reports, notes = [], []

    c0 = coefficients(cfg)
    f0 = hitting_fractions(SquaredRadius(c0), u0, cfg.T, dts, cfg.seed, cfg.paths, cfg.threads, HIT_LEVEL, "below")
    reports.append(stats.threshold_report("boundary_zero_trend", trend_statistic(f0), 0.0, cfg.paths, **kw))
    reports.append(stats.threshold_report("boundary_zero_fraction", f0[int(np.argmin(dts))], 0.01, cfg.paths, **kw))
    notes.append("hit 0 fractions " + ", ".join(f"dt={d:g}: {f:.4f}" for d, f in zip(dts, f0)))

    c1 = Coefficients.from_specs("const:1", f"const:{(n + 3) / 2.0!r}", n)
    f1 = hitting_fractions(SquaredRadius(c1), u0, cfg.T, dts, derive_seed(cfg.seed, "top"), cfg.paths,
                           cfg.threads, 1.0 - HIT_LEVEL, "above")
    reports.append(stats.threshold_report("boundary_one_trend", trend_statistic(f1), 0.0, cfg.paths, **kw))
    reports.append(stats.threshold_report("boundary_one_fraction", f1[int(np.argmin(dts))], 0.01, cfg.paths, **kw))
    notes.append("hit 1 fractions " + ", ".join(f"dt={d:g}: {f:.4f}" for d, f in zip(dts, f1)))

    if cfg.gamma_spec is None and cfg.g_spec is None:
        cs = Coefficients.from_specs("linear:1,0.5", "linear:1,1", n)
    else:
        cs = c0
    n_sand = min(cfg.paths, 100)
    viol = sandwich_violation(cs, u0, cfg.T, finest, derive_seed(cfg.seed, "sandwich"), n_sand, cfg.threads)
    reports.append(stats.threshold_report("boundary_sandwich_violation", viol, 0.0, n_sand, **kw))
    notes.append(f"sandwich constants M = {cs.M:.6g}, m = {cs.m:.6g}")

    fr = []
    for a in (1.0, 2.0):
        wf = WrightFisher(WfParams(a, cfg.beta))
        fr.append(hitting_fractions(wf, 0.1, cfg.T, (cfg.dt,), derive_seed(cfg.seed, f"alpha{a}"),
                                    cfg.paths, cfg.threads, HIT_LEVEL, "below")[0])
    ratio = fr[1] / fr[0] if fr[0] > 0 else 0.0
    reports.append(stats.threshold_report("wf_threshold_drop", ratio, 0.1, cfg.paths, **kw))
    notes.append(f"WF(1,{cfg.beta:g}) hits {fr[0]:.4f}, WF(2,{cfg.beta:g}) hits {fr[1]:.4f}")
    return ExperimentResult(reports, notes=notes)


def run_uniqueness(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    c = coefficients(cfg)
    x0 = _x0_vector(cfg, c.n, np.eye(c.n)[0])
    dts = tuple(cfg.dt_list)
    sups, ws = coalescence_runs(c, x0, cfg.T, dts, cfg.seed, cfg.paths, cfg.threads)
    order = np.argsort(dts)[::-1]
    sups_o = [sups[i] for i in order]
    reports = [
        stats.threshold_report("uniqueness_sup_trend", trend_statistic(sups_o), 0.0, cfg.paths, **kw),
        stats.threshold_report("uniqueness_sup_finest", sups_o[-1], 0.05, cfg.paths, **kw),
        stats.threshold_report("uniqueness_w_diagnostic", max(w / (10.0 * d) for w, d in zip(ws, dts)), 1.0,
                               cfg.paths, **kw),
    ]
    notes = [f"dt={dts[i]:g}: mean sup|X-X~| = {sups[i]:.5g}, max mean W = {ws[i]:.3g}" for i in order]
    notes.append(f"boundary excess g(1)/gamma(1)^2 - (n-1)/2 = {c.boundary_excess:.4g} "
                 f"(uniqueness known above {math.sqrt(2) - 1:.4f})")
    return ExperimentResult(reports, notes=notes)


def run_spin(cfg: ExperimentConfig) -> ExperimentResult:
    kw = _kw(cfg)
    c = coefficients(cfg)
    if c.n < 2:
        raise ConfigurationError("spin needs n >= 2")
    stepper = ProjectedDiffusion(c)

    def work(ids):
        x, _ = final_states(stepper, np.zeros(c.n), cfg.T, NoiseDriver(cfg.seed, ids, c.n, cfg.dt))
        return x

    x = np.concatenate(map_chunks(work, cfg.paths, cfg.threads))
    reports = [stats.sphere_uniformity_test(geometry.normalize_rows(x), "spin_direction_uniformity", **kw)]
    clocks = spin_clock_growth(c, cfg.T, cfg.dt, derive_seed(cfg.seed, "clock"))
    reports.append(stats.threshold_report("spin_clock_growth", trend_statistic(clocks[::-1]), 0.0, 1, **kw))
    notes = ["S_s(T) for s = 2^k dt, k = 6..1: " + ", ".join(f"{v:.4g}" for v in clocks)]
    return ExperimentResult(reports, notes=notes)


RUNNERS = {
    "simulate": run_simulate,
    "archimedes": run_archimedes,
    "invariant-density": run_invariant_density,
    "wf-radial": run_wf_radial,
    "skew": run_skew,
    "warren-yor": run_warren_yor,
    "boundary": run_boundary,
    "uniqueness": run_uniqueness,
    "spin": run_spin,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    validate_config(cfg)
    if cfg.threads < 1:
        cfg = replace(cfg, threads=1)
    return RUNNERS[cfg.experiment](cfg)
