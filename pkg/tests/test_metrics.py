import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from orbkoop.datagen import cr3bp_duration
from orbkoop.dynamics import (
    UNITS_CANONICAL,
    UNITS_CR3BP,
    Cr3bpParams,
    Trajectory,
    cr3bp_derivative,
    make_cr3bp_ic,
    propagate,
)
from orbkoop.errors import ShapeError, SingularityError
from orbkoop.koopman import KoopmanModel, lift, predict
from orbkoop.metrics import (
    circular_invariants,
    jacobi_constant,
    jacobi_series,
    orbit_average,
    relative_variation,
    rollout_errors,
    write_metric_csv,
)
from orbkoop.neuralnet import Network, init_lecun

EM = Cr3bpParams.earth_moon()


def analytic_circle(r=1.3, n=400, periods=1.0):
    w = r**-1.5
    t = np.linspace(0, periods * 2 * math.pi / w, n)
    s = np.stack([r * np.cos(w * t), r * np.sin(w * t),
                  -r * w * np.sin(w * t), r * w * np.cos(w * t)], axis=1)
    return Trajectory(t, s, UNITS_CANONICAL, {})


def rotation_model(dt, N=0):
    """Exact linear model of uniform circular motion with unit rate."""
    c, s = math.cos(dt), math.sin(dt)
    R = np.array([[c, -s], [s, c]])
    A = np.zeros((4, 4))
    A[:2, :2] = R
    A[2:, 2:] = R
    K = np.zeros((4 + N, 4 + N))
    K[:4, :4] = A
    if N:
        net = init_lecun([4, 5, N], 0)
        K[4:, 4:] = np.eye(N)
    else:
        net = Network([np.zeros((0, 4))], [np.zeros(0)])
    return KoopmanModel(net, K, 4, N, UNITS_CANONICAL, dt)


def unit_circle(n_steps, dt):
    t = dt * np.arange(n_steps + 1)
    s = np.stack([np.cos(t), np.sin(t), -np.sin(t), np.cos(t)], axis=1)
    return Trajectory(t, s, UNITS_CANONICAL, {})


class TestAveragesAndVariation:
    @settings(max_examples=40, deadline=None)
    @given(c=st.floats(-1e6, 1e6).filter(lambda v: abs(v) > 1e-6), n=st.integers(1, 50))
    def test_constant_series_has_zero_variation(self, c, n):
        assert np.all(relative_variation(np.full(n, c)) == 0.0)

    def test_average(self):
        assert orbit_average([1.0, 2.0, 6.0]) == 3.0

    def test_zero_average_is_an_error(self):
        with pytest.raises(ZeroDivisionError):
            relative_variation([1.0, -1.0])
        with pytest.raises(ValueError):
            orbit_average([])

    def test_example(self):
        np.testing.assert_allclose(relative_variation([1.0, 3.0]), [-0.5, 0.5])


class TestCircularInvariants:
    def test_analytic_orbit(self):
        rep = circular_invariants(analytic_circle())
        m = rep.max_abs
        assert m["xi_r"] < 1e-14 and m["xi_v"] < 1e-14 and m["xi_lz"] < 1e-14
        assert m["r_dot_v"] < 1e-14
        assert rep.mean_r == pytest.approx(1.3, rel=1e-14)
        assert rep.mean_lz == pytest.approx(math.sqrt(1.3), rel=1e-14)

    def test_lz_single_point(self):
        rep = circular_invariants(np.array([[2.0, 0.0, 0.0, 0.7], [2.0, 0.0, 0.0, 0.7]]))
        assert rep.mean_lz == pytest.approx(1.4)

    def test_rows_and_shape(self):
        rep = circular_invariants(analytic_circle(n=5))
        assert len(list(rep.rows())) == 5
        with pytest.raises(ShapeError):
            circular_invariants(np.zeros((3, 6)))


class TestRolloutErrors:
    def test_perfect_model_has_zero_errors(self):
        dt = 2 * math.pi / 100
        err = rollout_errors(rotation_model(dt), unit_circle(300, dt))
        assert err.local.shape == (300, 4)
        assert np.max(np.abs(err.local)) < 1e-12
        assert np.max(np.abs(err.global_)) < 1e-12
        assert err.mean_radius == pytest.approx(1.0)

    def test_global_error_two_forms_agree(self):
        # E_n = Phi(x_n) - K lift(xhat_{n-1}) equals Phi(x_n) - lift(xhat_n) in the state rows
        rng = np.random.default_rng(0)
        dt = 2 * math.pi / 100
        model = rotation_model(dt, N=3)
        model.K[:4, 4:] = 1e-3 * rng.normal(size=(4, 3))
        model.K[4:] += 1e-3 * rng.normal(size=(3, 7))
        ref = unit_circle(60, dt)
        err = rollout_errors(model, ref)
        pred = predict(model, ref.states[0], 60).states
        direct = ref.states[1:] - pred[1:]
        np.testing.assert_allclose(err.global_[:, :4], direct, rtol=1e-12, atol=1e-14)
        # lifted rows use K applied to the re-lifted prediction
        phi_true = lift(model, ref.states.T)
        expected_rows = phi_true[4:, 1:] - (model.K @ lift(model, pred[:-1].T))[4:]
        np.testing.assert_allclose(err.global_[:, 4:], expected_rows.T, rtol=1e-12, atol=1e-14)

    def test_local_error_uses_true_previous_state(self):
        dt = 2 * math.pi / 100
        model = rotation_model(dt)
        model.K[0, 0] += 1e-4
        ref = unit_circle(10, dt)
        err = rollout_errors(model, ref)
        expected = -1e-4 * ref.states[:-1, 0]
        np.testing.assert_allclose(err.local[:, 0], expected, rtol=1e-9, atol=1e-16)
        assert err.max_global_pos_percent >= err.max_local_pos_percent

    def test_dt_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            rollout_errors(rotation_model(0.1), unit_circle(5, 0.2))

    def test_dimension_mismatch_rejected(self):
        ref = Trajectory(np.arange(3.0), np.zeros((3, 6)), UNITS_CR3BP, {})
        with pytest.raises(ShapeError):
            rollout_errors(rotation_model(1.0), ref)


class TestJacobi:
    def test_value_at_known_point(self):
        # L1 at rest: C = x^2 + 2(1-mu)/r1 + 2 mu/r2
        mu = EM.mu_frac
        x = 0.8369151287720266
        expected = x**2 + 2 * (1 - mu) / (x + mu) + 2 * mu / (1 - mu - x)
        assert jacobi_constant([x, 0, 0, 0, 0, 0], EM) == pytest.approx(expected, rel=1e-15)
        assert jacobi_constant([x, 0, 0, 0, 0, 0], mu) == jacobi_constant([x, 0, 0, 0, 0, 0], EM)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-2, 2)))
    def test_planar_reflection_symmetry(self, s):
        mu = EM.mu_frac
        r1 = math.dist(s[:3], (-mu, 0, 0))
        r2 = math.dist(s[:3], (1 - mu, 0, 0))
        if min(r1, r2) < 1e-3:
            return
        mirrored = s.copy()
        mirrored[[1, 4]] *= -1
        assert jacobi_constant(mirrored, EM) == pytest.approx(jacobi_constant(s, EM), rel=1e-13)

    def test_conserved_along_propagation(self):
        ic = make_cr3bp_ic(EM, 1.02)
        dt = cr3bp_duration(90.0, EM) / 1000
        traj = propagate(ic, cr3bp_derivative(EM.mu_frac), dt, 999, UNITS_CR3BP)
        rep = jacobi_series(traj, EM)
        assert rep.drift < 1e-6

    def test_constant_series_flat(self):
        s = np.tile([0.85, 0.01, 0, 0.01, -0.2, 0], (20, 1))
        traj = Trajectory(np.arange(20.0), s, UNITS_CR3BP, {})
        rep = jacobi_series(traj, EM, reference=traj)
        assert rep.drift == 0.0
        assert rep.max_relative_error == 0.0
        assert np.all(rep.series == rep.series[0])

    def test_relative_error_against_reference(self):
        a = Trajectory(np.arange(2.0), np.array([[0.8, 0, 0, 0, 0.1, 0]] * 2), UNITS_CR3BP, {})
        b = Trajectory(np.arange(2.0), np.array([[0.8, 0, 0, 0, 0.2, 0]] * 2), UNITS_CR3BP, {})
        rep = jacobi_series(a, EM, reference=b)
        ca, cb = jacobi_constant(a.states[0], EM), jacobi_constant(b.states[0], EM)
        assert rep.max_relative_error == pytest.approx(abs(ca - cb) / abs(cb), rel=1e-14)
        assert jacobi_series(a, EM).relative_error is None

    def test_singular_at_primary(self):
        with pytest.raises(SingularityError):
            jacobi_constant([-0.25, 0, 0, 0, 0, 0], 0.25)


def test_metric_csv(tmp_path):
    p = write_metric_csv(tmp_path / "m.csv", ["t", "a"], [[0.0, 1.0], [0.1, 1 / 3]])
    lines = p.read_text().splitlines()
    assert lines[0] == "t,a"
    assert float(lines[2].split(",")[1]) == 1 / 3
    with pytest.raises(ShapeError):
        write_metric_csv(tmp_path / "x.csv", ["a", "b"], [[1.0], [1.0, 2.0]])
