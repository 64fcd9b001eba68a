"""
Special functions and goodness-of-fit machinery that turn simulated
ensembles into pass/fail reports.

Conventions: a report carrying a p-value passes when ``p_value >=
threshold`` (the significance level); a report without one passes when
``statistic <= threshold``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate
from scipy.stats import chi2

from .errors import AccuracyError, ConfigurationError, DomainError
from .processes import PathGrid

SIGNIFICANCE = 0.01
CF_TOL = 1e-14
CF_MAX_ITER = 300
_FPMIN = 1e-300


# ---------------------------------------------------------------- special functions


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _FPMIN else _FPMIN)
        c = 1.0 + aa / c
        c = c if abs(c) > _FPMIN else _FPMIN
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < CF_TOL:
            return h
    raise AccuracyError(
        f"incomplete beta continued fraction did not converge in {CF_MAX_ITER} terms (a={a}, b={b}, x={x})"
    )


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b), the Beta(a, b) distribution function at ``x``."""
    if not (a > 0 and b > 0):
        raise DomainError(f"incomplete beta needs a, b > 0; got a={a!r}, b={b!r}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"incomplete beta needs x in [0, 1]; got {x!r}")
    if x == 0.0 or x == 1.0:
        return float(x)
    if x > (a + 1.0) / (a + b + 2.0):
        return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    return math.exp(log_front) * _beta_cf(a, b, x) / a


def beta_cdf(x, a: float, b: float):
    """Vectorized ``regularized_incomplete_beta`` with clipping into [0, 1]."""
    arr = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    out = np.array([regularized_incomplete_beta(a, b, float(v)) for v in arr.ravel()]).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def beta_pdf(x, a: float, b: float):
    x = np.asarray(x, dtype=float)
    logb = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    with np.errstate(divide="ignore"):
        return np.exp((a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - logb)


def beta_quantile(q: float, a: float, b: float) -> float:
    """Inverse of :func:`beta_cdf` by bisection (monotone, 60 halvings)."""
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if regularized_incomplete_beta(a, b, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def coordinate_marginal_cdf(x, d: int):
    """CDF of one coordinate of a uniform point on S^{d-1}: (1+x)/2 ~ Beta((d-1)/2, (d-1)/2)."""
    k = (d - 1) / 2.0
    return beta_cdf((np.asarray(x, dtype=float) + 1.0) / 2.0, k, k)


def normal_cdf(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.vectorize(math.erfc)(-x / math.sqrt(2.0))


# ---------------------------------------------------------------- reports


def config_digest(config: dict) -> str:
    """Stable short hash of a JSON-serializable config (keys sorted, no timestamp)."""
    cfg = {k: v for k, v in config.items() if k != "timestamp"}
    blob = json.dumps(cfg, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TestReport:
    """Outcome of one statistical or numerical check."""

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    p_value: float | None
    threshold: float
    passed: bool
    sample_size: int
    config_digest: str = ""
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "statistic": _finite_or_none(self.statistic),
            "p_value": _finite_or_none(self.p_value),
            "threshold": _finite_or_none(self.threshold),
            "pass": bool(self.passed),
            "sample_size": int(self.sample_size),
            "config_digest": self.config_digest,
            "seed": self.seed,
        }

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        if self.p_value is not None:
            tail = f"p={self.p_value:.4g} (need >= {self.threshold:g})"
        else:
            tail = f"stat={self.statistic:.6g} (need <= {self.threshold:.6g})"
        return f"{verdict}  {self.name}: {tail}  N={self.sample_size}"


def _finite_or_none(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def p_report(name, statistic, p_value, n, significance=SIGNIFICANCE, **kw) -> TestReport:
    return TestReport(name, float(statistic), float(p_value), significance, bool(p_value >= significance), int(n), **kw)


def threshold_report(name, statistic, threshold, n, **kw) -> TestReport:
    return TestReport(name, float(statistic), None, float(threshold), bool(statistic <= threshold), int(n), **kw)


class Summary(NamedTuple):
    count: int
    passed: bool
    failures: tuple
    digest: str


def merge_reports(reports: Sequence[TestReport]) -> Summary:
    """Order-independent conjunction of reports."""
    rows = sorted((r.to_json() for r in reports), key=lambda d: json.dumps(d, sort_keys=True))
    blob = json.dumps(rows, sort_keys=True, separators=(",", ":"))
    failures = tuple(sorted(r["name"] for r in rows if not r["pass"]))
    return Summary(len(rows), not failures, failures, hashlib.sha256(blob.encode()).hexdigest())


# ---------------------------------------------------------------- Kolmogorov-Smirnov


def kolmogorov_sf(lam: float) -> float:
    """P(K > lam) for the Kolmogorov limit law.

    Two terms of the alternating series for ``lam >= 1.18``; below that the
    Jacobi-theta form, which converges fast where the alternating series does not.
    """
    if lam < 0.1:  # 1 - sf < 1e-200 here
        return 1.0
    if lam < 1.18:
        s = sum(math.exp(-((2 * k - 1) ** 2) * math.pi**2 / (8 * lam * lam)) for k in (1, 2, 3))
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * s))
    return min(1.0, max(0.0, 2.0 * (math.exp(-2 * lam * lam) - math.exp(-8 * lam * lam))))


def ks_statistic(sample, cdf: Callable) -> float:
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_one_sample(sample, cdf: Callable, name: str = "ks_one_sample",
                  significance: float = SIGNIFICANCE, **kw) -> TestReport:
    """One-sample KS test with the asymptotic p-value at sqrt(N) D."""
    x = np.asarray(sample, dtype=float).ravel()
    if x.size == 0:
        raise DomainError("KS test needs a nonempty sample")
    d = ks_statistic(x, cdf)
    return p_report(name, d, kolmogorov_sf(math.sqrt(x.size) * d), x.size, significance, **kw)


def ks_two_sample_statistic(a, b) -> float:
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    allv = np.concatenate([a, b])
    fa = np.searchsorted(a, allv, side="right") / a.size
    fb = np.searchsorted(b, allv, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b, name: str = "ks_two_sample", significance: float = SIGNIFICANCE, **kw) -> TestReport:
    """Two-sample KS test with effective size Na Nb / (Na + Nb)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("two-sample KS test needs two nonempty samples")
    d = ks_two_sample_statistic(a, b)
    n_eff = a.size * b.size / (a.size + b.size)
    return p_report(name, d, kolmogorov_sf(math.sqrt(n_eff) * d), a.size + b.size, significance, **kw)


# ---------------------------------------------------------------- chi-square


def _merge_small(expected: np.ndarray, observed: np.ndarray, minimum: float = 5.0):
    groups_e, groups_o = [], []
    acc_e = acc_o = 0.0
    for e, o in zip(expected, observed):
        acc_e += e
        acc_o += o
        if acc_e >= minimum:
            groups_e.append(acc_e)
            groups_o.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0 or acc_o > 0:
        if groups_e:
            groups_e[-1] += acc_e
            groups_o[-1] += acc_o
        else:
            groups_e.append(acc_e)
            groups_o.append(acc_o)
    return np.array(groups_e), np.array(groups_o)


def chi_square_counts(observed, probs, name: str = "chi_square", significance: float = SIGNIFICANCE,
                      **kw) -> TestReport:
    """Pearson test of bin counts against bin probabilities (renormalized to sum 1).

    Bins expecting fewer than 5 counts are merged with their neighbours.
    """
    obs = np.asarray(observed, dtype=float).ravel()
    p = np.asarray(probs, dtype=float).ravel()
    if obs.shape != p.shape or np.any(p < 0) or p.sum() <= 0:
        raise ConfigurationError("bin probabilities must be non-negative and match the counts")
    n = obs.sum()
    exp_counts, obs = _merge_small(n * p / p.sum(), obs)
    if exp_counts.size < 2:
        raise ConfigurationError("fewer than two usable bins after merging")
    stat = float(np.sum((obs - exp_counts) ** 2 / exp_counts))
    dof = exp_counts.size - 1
    crit = float(chi2.isf(significance, dof))
    details = {"dof": dof, "bins_used": int(exp_counts.size), "p_value": float(chi2.sf(stat, dof))}
    details.update(kw.pop("details", {}))
    return TestReport(name, stat, None, crit, stat <= crit, int(n), details=details, **kw)


def chi_square_density_test(sample, density: Callable, support: tuple[float, float], bins: int = 20,
                            name: str = "chi_square_density", significance: float = SIGNIFICANCE,
                            **kw) -> TestReport:
    """Equal-width histogram of ``sample`` on ``support`` against a density.

    A boundary bin is dropped when the density diverges at that endpoint;
    the test then runs conditionally on the retained bins.
    """
    if bins < 5:
        raise ConfigurationError("need at least 5 bins")
    lo, hi = map(float, support)
    if not hi > lo:
        raise ConfigurationError("support must be a nonempty interval")
    x = np.asarray(sample, dtype=float).ravel()
    edges = np.linspace(lo, hi, bins + 1)
    keep = np.ones(bins, bool)
    excluded = []
    for idx, end in ((0, lo), (bins - 1, hi)):
        with np.errstate(all="ignore"):
            val = float(np.asarray(density(np.array([end])), dtype=float).ravel()[0])
        if not math.isfinite(val):
            keep[idx] = False
            excluded.append(idx)
    masses = np.array([integrate.quad(lambda t: float(np.asarray(density(np.array([t]))).ravel()[0]),
                                      edges[i], edges[i + 1], limit=200)[0] for i in range(bins)])
    counts = np.histogram(x, bins=edges)[0].astype(float)
    details = {"excluded_bins": excluded}
    return chi_square_counts(counts[keep], masses[keep], name, significance, details=details, **kw)


# ---------------------------------------------------------------- sphere uniformity


def sphere_uniformity_test(points, name: str = "sphere_uniformity", significance: float = SIGNIFICANCE,
                           **kw) -> TestReport:
    """Coordinate-marginal KS tests of points assumed uniform on S^{d-1}.

    Each coordinate is tested against the law of one coordinate of a
    uniform point; the overall p-value is the Bonferroni-adjusted minimum.
    A necessary condition for uniformity, not a characterization.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 100:
        raise DomainError("sphere uniformity test needs at least 100 points of shape (N, d)")
    if np.max(np.abs(np.linalg.norm(pts, axis=1) - 1.0)) > 1e-9:
        raise DomainError("sphere uniformity test needs unit vectors")
    d = pts.shape[1]
    stats_, pvals = [], []
    for j in range(d):
        r = ks_one_sample(pts[:, j], lambda x: coordinate_marginal_cdf(x, d))
        stats_.append(r.statistic)
        pvals.append(r.p_value)
    adj = min(1.0, d * min(pvals))
    rep = p_report(name, max(stats_), adj, pts.shape[0], significance, **kw)
    rep.details.update({"coordinate_p_values": pvals, "coordinate_D": stats_})
    return rep


# ---------------------------------------------------------------- path diagnostics


COALESCENCE_P = 1.0 - math.sqrt(2.0) / 4.0


def coalescence_functional(x, x_tilde, p: float = COALESCENCE_P) -> np.ndarray:
    """|X - X~|^2 + (Y^p - Y~^p)^2 with Y = 1 - |X|^2, pointwise along two paths."""
    if isinstance(x, PathGrid) or isinstance(x_tilde, PathGrid):
        if not (isinstance(x, PathGrid) and isinstance(x_tilde, PathGrid)):
            raise ConfigurationError("pass two PathGrids or two arrays")
        if len(x) != len(x_tilde) or x.dt != x_tilde.dt or x.t0 != x_tilde.t0:
            raise ConfigurationError("paths live on different grids")
        x, x_tilde = x.states, x_tilde.states
    x = np.asarray(x, dtype=float)
    xt = np.asarray(x_tilde, dtype=float)
    if x.shape != xt.shape:
        raise ConfigurationError(f"grid mismatch: {x.shape} vs {xt.shape}")
    if not 0.5 < p < 1.0:
        raise DomainError("p must lie in (1/2, 1)")
    y = np.clip(1.0 - np.sum(x * x, axis=-1), 0.0, None)
    yt = np.clip(1.0 - np.sum(xt * xt, axis=-1), 0.0, None)
    return np.sum((x - xt) ** 2, axis=-1) + (y**p - yt**p) ** 2


class HittingStats(NamedTuple):
    fraction: float
    mean_time: float


class FirstPassage:
    """Streaming first-crossing tracker for an ensemble of scalar paths."""

    def __init__(self, level: float, direction: str, n_paths: int):
        if direction not in ("below", "above"):
            raise ConfigurationError("direction must be 'below' or 'above'")
        self.level = level
        self.direction = direction
        self.first = np.full(n_paths, np.nan)

    def update(self, t: float, state, alive=None):
        s = np.asarray(state, dtype=float)
        crossed = s < self.level if self.direction == "below" else s > self.level
        if alive is not None:
            crossed &= np.asarray(alive)
        self.first = np.where(np.isnan(self.first) & crossed, t, self.first)

    def result(self) -> HittingStats:
        hit = ~np.isnan(self.first)
        frac = float(np.mean(hit)) if self.first.size else 0.0
        mean_t = math.fsum(self.first[hit]) / hit.sum() if hit.any() else math.nan
        return HittingStats(frac, mean_t)


def hitting_statistics(paths, level: float, direction: str = "below") -> HittingStats:
    """Fraction of paths that cross ``level`` and their mean first crossing time.

    ``paths`` is a sequence of scalar :class:`PathGrid`; only the lifetime
    ``[0, alive_until]`` of each path counts.
    """
    paths = list(paths)
    if not paths:
        raise DomainError("need at least one path")
    fp = FirstPassage(level, direction, len(paths))
    first = []
    for i, p in enumerate(paths):
        s = np.asarray(p.states, dtype=float)[: p.alive_until + 1]
        crossed = s < level if direction == "below" else s > level
        first.append(p.t0 + p.dt * int(np.argmax(crossed)) if crossed.any() else math.nan)
    fp.first = np.array(first)
    return fp.result()


def correlation(a, b) -> float:
    """Pearson correlation; 0 when either sample is constant."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    return float(np.dot(da, db)) / den if den > 0 else 0.0
