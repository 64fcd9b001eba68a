import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from balldiff import geometry as geo
from balldiff.errors import DegenerateInputError, DimensionError, DomainError


def random_ball(rng, n, size):
    z = rng.standard_normal((size, n))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.random((size, 1)) ** (1.0 / n)


ball_vectors = st.integers(1, 5).flatmap(
    lambda n: st.lists(st.floats(-1, 1, allow_nan=False), min_size=n, max_size=n)
).map(np.array).filter(lambda v: np.linalg.norm(v) <= 1.0)


# ---- sigma


def test_sigma_at_origin_is_identity():
    assert np.array_equal(geo.sigma(np.zeros(2)), np.eye(2))


def test_sigma_on_sphere():
    np.testing.assert_allclose(geo.sigma(np.array([1.0, 0.0])), np.diag([0.0, 1.0]), atol=1e-15)


def test_sigma_hand_value():
    s = geo.sigma(geo.BallPoint([0.6, 0.0]))
    np.testing.assert_allclose(s, np.diag([0.8, 1.0]), atol=1e-15)
    np.testing.assert_allclose(s @ s, np.diag([0.64, 1.0]), atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_sigma_squares_to_projector_batch(n):
    x = random_ball(np.random.default_rng(n), n, 10**5)
    s = geo.sigma(x)
    target = np.eye(n) - x[:, :, None] * x[:, None, :]
    assert np.max(np.abs(s @ np.swapaxes(s, -1, -2) - target)) < 1e-12


@given(ball_vectors)
def test_sigma_symmetric_and_root(x):
    s = geo.sigma(x)
    assert np.array_equal(s, s.T)
    assert np.max(np.abs(s @ s - (np.eye(x.size) - np.outer(x, x)))) < 1e-12


@given(ball_vectors.filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_sigma_eigenvalues(x):
    ev = np.sort(np.linalg.eigvalsh(geo.sigma(x)))
    expect = np.sort([math.sqrt(max(0.0, 1 - x @ x))] + [1.0] * (x.size - 1))
    np.testing.assert_allclose(ev, expect, atol=1e-10)


@given(st.integers(1, 5), st.floats(1e-6, 0.0999))
def test_sigma_continuous_at_origin(n, r):
    x = np.zeros(n)
    x[0] = r
    assert np.linalg.norm(geo.sigma(x) - np.eye(n), 2) < r * r


@given(ball_vectors, st.integers(0, 2**31))
def test_sigma_apply_matches_matrix(x, seed):
    v = np.random.default_rng(seed).standard_normal(x.size)
    np.testing.assert_allclose(geo.sigma_apply(x[None], v[None])[0], geo.sigma(x) @ v, atol=1e-14)


# ---- points and projections


def test_ball_point_tolerance():
    p = geo.BallPoint([1.0 + 5e-13, 0.0])
    assert p.norm == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        geo.BallPoint([1.0 + 1e-9, 0.0])


def test_sphere_point_renormalizes_and_rejects():
    assert abs(np.linalg.norm(geo.SpherePoint([3.0, 4.0]).coords) - 1) <= 1e-12
    with pytest.raises(DegenerateInputError):
        geo.SpherePoint([0.0, 0.0])
    with pytest.raises(DimensionError):
        geo.SpherePoint([1.0])


@pytest.mark.parametrize(
    "z, n, expect",
    [((0, 0, 1), 1, [0.0]), ((1, 0, 0), 2, [1.0, 0.0]), ((0.6, 0.8, 0.0), 2, [0.6, 0.8])],
)
def test_project_coords(z, n, expect):
    p = geo.project_coords(geo.SpherePoint(z), n)
    np.testing.assert_allclose(p.coords, expect, atol=1e-15)
    assert p.norm <= 1.0


@pytest.mark.parametrize("n", [0, 3, 4])
def test_project_coords_range(n):
    with pytest.raises(DimensionError):
        geo.project_coords(geo.SpherePoint([1, 0, 0]), n)


def test_renormalize_sphere():
    np.testing.assert_allclose(geo.renormalize_sphere([2, 0, 0]).coords, [1, 0, 0])
    np.testing.assert_allclose(geo.renormalize_sphere([1, 1, 0, 0]).coords, [2**-0.5, 2**-0.5, 0, 0])
    with pytest.raises(DegenerateInputError):
        geo.renormalize_sphere([0, 0, 0])


def test_normalize_rows_zero_row():
    with pytest.raises(DegenerateInputError):
        geo.normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


# ---- density


def test_density_examples():
    assert geo.invariant_density_h(geo.BallPoint([0.3]), geo.DensityParams(1, 2)) == pytest.approx(0.5, abs=1e-15)
    for x in ([0.0, 0.0], [0.3, -0.5], [0.0, 0.99]):
        assert geo.invariant_density_h(x, geo.DensityParams(2, 2)) == pytest.approx(1 / math.pi, abs=1e-15)
    assert geo.invariant_density_h([1.2, 0.0, 0.0], geo.DensityParams(3, 1.5)) == 0.0


def test_density_boundary_sentinels():
    assert geo.invariant_density_h([1.0, 0.0], geo.DensityParams(2, 1.0)) == math.inf
    assert geo.invariant_density_h([1.0, 0.0], geo.DensityParams(2, 3.0)) == 0.0
    assert geo.invariant_density_h([0.0, 1.0], geo.DensityParams(2, 2.0)) == pytest.approx(1 / math.pi)


def test_density_constant_against_gamma_function():
    for n, ell in [(1, 2), (2, 3), (3, 0.5), (5, 7.25)]:
        direct = math.gamma((n + ell) / 2) / (math.pi ** (n / 2) * math.gamma(ell / 2))
        assert geo.density_constant(geo.DensityParams(n, ell)) == pytest.approx(direct, rel=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
@pytest.mark.parametrize("ell", [0.5, 1.0, 2.0, 3.5])
def test_density_integrates_to_one(n, ell):
    p = geo.DensityParams(n, ell)
    e = np.eye(n)[0]
    shell = geo.sphere_area(n) if n > 1 else 2.0
    expo = (ell - 2) / 2
    # the boundary factor (1 - r)^expo goes into the quadrature weight

    def f(r):
        r = min(r, 1 - 1e-12)
        return shell * r ** (n - 1) * geo.invariant_density_h(r * e, p) / (1 - r) ** expo

    total = integrate.quad(f, 0, 1, weight="alg", wvar=(0, expo), limit=200)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


def test_sphere_area():
    assert geo.sphere_area(2) == pytest.approx(2 * math.pi)
    assert geo.sphere_area(3) == pytest.approx(4 * math.pi)


def test_density_params_validation():
    with pytest.raises(DomainError):
        geo.DensityParams(0, 1.0)
    with pytest.raises(DomainError):
        geo.DensityParams(2, 0.0)


@settings(max_examples=50)
@given(st.lists(st.floats(-0.7, 0.7), min_size=3, max_size=3))
def test_density_radial(x):
    p = geo.DensityParams(3, 2.5)
    x = np.array(x)
    y = np.array([np.linalg.norm(x), 0, 0])
    assert geo.invariant_density_h(x, p) == pytest.approx(geo.invariant_density_h(y, p), rel=1e-12)
