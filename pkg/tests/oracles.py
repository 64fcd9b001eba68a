"""Independent reference values computed without the simulation code."""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate
from scipy.integrate import solve_ivp
from scipy.sparse import lil_matrix


def wf_hit_below(alpha: float, beta: float, x0: float, level: float = 1e-4, T: float = 1.0,
                 m: int = 800) -> float:
    """P(min_{t<=T} U_t <= level) for WF(alpha, beta) from x0.

    Backward Kolmogorov equation u_t = 2x(1-x) u_xx + (alpha(1-x) - beta x) u_x on
    [level, 1], u = 1 at the level, upwind outflow at 1; method of lines with BDF
    on a grid graded towards the level.
    """
    s = np.linspace(0.0, 1.0, m)
    x = level + (1.0 - level) * np.expm1(8.0 * s) / math.expm1(8.0)
    a = 2.0 * x * (1.0 - x)
    b = alpha * (1.0 - x) - beta * x
    L = lil_matrix((m, m))
    for i in range(1, m - 1):
        hm, hp = x[i] - x[i - 1], x[i + 1] - x[i]
        L[i, i - 1] = a[i] * 2 / (hm * (hm + hp)) - b[i] * hp / (hm * (hm + hp))
        L[i, i + 1] = a[i] * 2 / (hp * (hm + hp)) + b[i] * hm / (hp * (hm + hp))
        L[i, i] = -a[i] * 2 / (hm * hp) + b[i] * (hp - hm) / (hm * hp)
    h = x[-1] - x[-2]
    L[m - 1, m - 1] = b[-1] / h
    L[m - 1, m - 2] = -b[-1] / h
    L = L.tocsr()
    u0 = np.zeros(m)
    u0[0] = 1.0
    sol = solve_ivp(lambda t, u: L @ u, (0.0, T), u0, method="BDF", t_eval=[T], rtol=1e-8, atol=1e-10,
                    jac=L)
    return float(np.interp(x0, x, sol.y[:, -1]))


def radial_shell_mass(n: int, ell: float, u_lo: float, u_hi: float) -> float:
    """Mass of {u_lo <= |x|^2 <= u_hi} under the stationary ball density, by quadrature."""
    const = math.gamma((n + ell) / 2) / (math.pi ** (n / 2) * math.gamma(ell / 2))
    area = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    f = lambda r: area * r ** (n - 1) * const * (1 - r * r) ** ((ell - 2) / 2)
    return integrate.quad(f, math.sqrt(u_lo), math.sqrt(u_hi), limit=200)[0]
