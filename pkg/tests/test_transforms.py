import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from balldiff import transforms as tf
from balldiff.errors import ConfigurationError, DegenerateInputError, DimensionError, HorizonError, SingularityError
from balldiff.experiments import spin_clock_growth
from balldiff.noise import NoiseDriver
from balldiff.processes import Coefficients, PathGrid, ProjectedDiffusion, SquaredBessel, simulate_path


def ball_path(seed=1, T=0.5, dt=1e-3, x0=(0.5, 0.0), coeffs=None):
    c = coeffs or Coefficients.from_specs("const:1", "const:2", 2)
    return simulate_path(ProjectedDiffusion(c), np.array(x0), T, dt, NoiseDriver(seed, 0, len(x0), dt)), c


# ---- time change


def test_constant_radius_clock():
    r, dt = 0.4, 0.01
    path = PathGrid(0.0, dt, np.full(101, r))
    tc = tf.integrate_time_change(path, lambda v: 1.0 / v**2, s0=0.2)
    assert tc.grid_times[0] == pytest.approx(0.2) and tc.values[0] == 0.0
    np.testing.assert_allclose(tc.values, (tc.grid_times - 0.2) / r**2, atol=1e-12)


def test_identity_clock():
    path = PathGrid(1.0, 0.5, np.arange(7.0) + 1)
    tc = tf.integrate_time_change(path, lambda v: np.ones_like(v))
    np.testing.assert_allclose(tc.values, tc.grid_times - 1.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_weight_names_index():
    path = PathGrid(0.0, 0.1, np.array([1.0, 0.5, 0.0, 0.5]))
    with pytest.raises(SingularityError, match="index 2"):
        tf.integrate_time_change(path, lambda v: 1.0 / v)


def test_nonpositive_weight_rejected():
    with pytest.raises(ConfigurationError):
        tf.integrate_time_change(PathGrid(0.0, 0.1, np.ones(4)), lambda v: 0 * v)


def test_start_outside_grid():
    path = PathGrid(0.0, 0.1, np.ones(4))
    with pytest.raises(HorizonError):
        tf.integrate_time_change(path, lambda v: v, s0=1.0)
    with pytest.raises(HorizonError):
        tf.integrate_time_change(path, lambda v: v, s0=-0.5)


def test_inverse_examples():
    path = PathGrid(0.0, 0.1, np.ones(11))
    tc = tf.integrate_time_change(path, lambda v: 3.0 * v, s0=0.3)
    assert tf.invert_time_change(tc, 0.0) == pytest.approx(0.3)
    tau = np.array([0.05, 0.6, 2.1])
    np.testing.assert_allclose(tf.invert_time_change(tc, tau), 0.3 + tau * 0.1 / (3.0 * 0.1))
    with pytest.raises(HorizonError):
        tf.invert_time_change(tc, tc.horizon * 1.01)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0.0, 0.3))
def test_round_trip_within_a_cell(seed, s0):
    path, c = ball_path(seed, T=0.4)
    r = PathGrid(0.0, path.dt, np.linalg.norm(path.states, axis=-1))
    tc = tf.integrate_time_change(r, lambda v: c.gamma(v) ** 2 / v**2, s0)
    assert np.all(np.diff(tc.values) > 0)
    back = tf.invert_time_change(tc, tc.values)
    assert np.max(np.abs(back - tc.grid_times)) <= path.dt


def test_clock_diverges_near_origin():
    c = Coefficients.projected(2, 2.0)
    clocks = spin_clock_growth(c, 1.0, 1e-4, 5, levels=6)
    assert np.all(np.diff(clocks) > 0)


# ---- skew product


def test_skew_constant_path():
    path = PathGrid(0.0, 0.01, np.tile([0.5, 0.0], (51, 1)))
    c = Coefficients.from_specs("const:1", "const:2", 2)
    sp = tf.skew_decompose(path, c)
    np.testing.assert_allclose(sp.radius.states, 0.5)
    np.testing.assert_allclose(sp.direction.states, np.tile([1.0, 0.0], (len(sp.direction), 1)))
    assert sp.clock.horizon == pytest.approx(0.5 / 0.25)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_skew_reconstruction(seed):
    c = Coefficients.from_specs("linear:1,0.5", "const:3", 2)
    path, _ = ball_path(seed, T=1.0, dt=1e-3, coeffs=c)
    sp = tf.skew_decompose(path, c)
    assert np.allclose(np.linalg.norm(sp.direction.states, axis=-1), 1.0, atol=1e-12)
    err = np.max(np.linalg.norm(path.states - tf.reconstruct(sp), axis=-1))
    assert err <= 2 * tf.cell_width(path)
    end = path.states[-1] / np.linalg.norm(path.states[-1])
    np.testing.assert_allclose(sp.direction.states[-1], end, atol=1e-12)
    cells = len(sp.direction) - 1
    assert sp.direction.dt == pytest.approx(sp.clock.horizon / cells)


def test_skew_with_positive_s0():
    path, c = ball_path(4, x0=(0.0, 0.0), T=0.5)
    sp = tf.skew_decompose(path, c, s0=0.1)
    i0 = len(path) - sp.clock.values.size
    assert i0 == 100
    err = np.max(np.linalg.norm(path.states[i0:] - tf.reconstruct(sp), axis=-1))
    assert err <= 2 * tf.cell_width(path, i0)


def test_skew_errors():
    c = Coefficients.from_specs("const:1", "const:2", 2)
    with pytest.raises(SingularityError):
        tf.skew_decompose(PathGrid(0.0, 0.1, np.zeros((5, 2))), c)
    with pytest.raises(DimensionError):
        tf.skew_decompose(PathGrid(0.0, 0.1, np.full((5, 1), 0.5)), Coefficients.projected(1, 2.0))
    with pytest.raises(HorizonError):
        tf.skew_decompose(PathGrid(0.0, 0.1, np.full((5, 2), 0.5)), c, s0=0.4)


# ---- quotient


def besq_pair(seed=3, a=2.0, b=2.0, x0=1.0, y0=1.0, T=2.0, dt=1e-3):
    dx = NoiseDriver(seed, 0, 2, dt)
    from balldiff.noise import split_driver

    d1, d2 = split_driver(dx, 1)
    return (
        simulate_path(SquaredBessel(a), x0, T, dt, d1),
        simulate_path(SquaredBessel(b), y0, T, dt, d2),
    )


def test_quotient_start_and_range():
    x, y = besq_pair()
    q = tf.warren_yor_quotient(x, y)
    assert q.states[0] == 0.5
    assert np.all((q.states >= 0) & (q.states <= 1))
    assert q.dt == pytest.approx(q.dt) and q.t0 == 0.0


def test_quotient_stops_at_lifetime():
    x = simulate_path(SquaredBessel(2.0), 1.0, 0.1, 1e-3, NoiseDriver(1, 0, 1, 1e-3))
    y = simulate_path(SquaredBessel(-1.0), 0.0, 0.1, 1e-3, NoiseDriver(1, 1, 1, 1e-3))
    assert y.alive_until == 0
    q = tf.warren_yor_quotient(x, y)
    assert len(q) == 1 and q.states[0] == 1.0


def test_quotient_degenerate_start():
    z = PathGrid(0.0, 1e-3, np.zeros(5))
    with pytest.raises(DegenerateInputError):
        tf.warren_yor_quotient(z, z)


def test_quotient_grid_mismatch():
    a = PathGrid(0.0, 1e-3, np.ones(5))
    b = PathGrid(0.0, 2e-3, np.ones(5))
    with pytest.raises(ConfigurationError):
        tf.warren_yor_quotient(a, b)


def test_streaming_sampler_matches_path_version():
    targets = [0.05, 0.1, 0.2]
    xs, ys = [], []
    for s in range(4):
        x, y = besq_pair(seed=s, T=1.5)
        xs.append(x)
        ys.append(y)
    samp = tf.QuotientSampler(targets, 4, 1e-3)
    for k in range(len(xs[0])):
        samp.update(np.array([p.states[k] for p in xs]), np.array([p.states[k] for p in ys]))
    for i in range(4):
        u, tot, _ = tf.quotient_at(xs[i], ys[i], targets)
        np.testing.assert_allclose(samp.u[i], u, atol=1e-9)
        np.testing.assert_allclose(samp.total[i], tot, atol=1e-9)


def test_compaction_keeps_original_indices():
    samp = tf.QuotientSampler([0.01], 3, 0.05)
    samp.update(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    samp.compact(np.array([True, False, True]))
    samp.update(np.array([1.0, 3.0]), np.array([1.0, 3.0]))
    # rho after one cell: 0.025 for the first path, 0.05/6 for the last
    assert samp.u[0, 0] == pytest.approx(0.5)
    assert np.isnan(samp.u[1, 0]) and np.isnan(samp.u[2, 0])
    samp.update(np.array([1.0, 3.0]), np.array([1.0, 1.0]))
    assert samp.u[2, 0] == pytest.approx(0.5 + (0.01 - 0.05 / 6) / (0.05 * (1 / 6 + 1 / 4) / 2) * 0.25)
    assert np.isnan(samp.u[1, 0])


def test_interpolate_states():
    path = PathGrid(0.0, 0.5, np.array([[0.0, 0.0], [1.0, 2.0]]))
    np.testing.assert_allclose(tf.interpolate_states(path, 0.25), [0.5, 1.0])
    single = PathGrid(0.0, 0.5, np.array([[3.0, 4.0]]))
    np.testing.assert_allclose(tf.interpolate_states(single, [0.0, 0.0]), [[3.0, 4.0]] * 2)
