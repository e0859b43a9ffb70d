import numpy as np
import pytest

from qpland.errors import ConfigError, SamplingError
from qpland.integrators import rollout
from qpland.systems import (exact_decomposition_bistable3d, exact_u_limitcycle2d,
                            gl_energy, gl_exact_quasipotential, gl_stable_states,
                            make_system, rhs_bistable3d, rhs_yeast3d, sample_initial)

YEAST_TEST_PARAMS = {
    "j1": 0.5, "j2": 0.5, "j3": 0.5, "k1": 0.3, "k2": 0.3, "k3": 0.3,
    "ki": 1.0, "ks": 1.0, "ka1": 0.5, "ka2": 0.5, "a0": 0.01,
}


class TestBistable3d:
    def test_equilibria(self):
        assert np.array_equal(rhs_bistable3d(np.zeros(3)), np.zeros(3))
        assert np.array_equal(rhs_bistable3d(np.array([1.0, 0, 0])), np.zeros(3))
        assert np.array_equal(rhs_bistable3d(np.array([-1.0, 0, 0])), np.zeros(3))

    def test_plug_in_arithmetic(self):
        out = rhs_bistable3d(np.array([0.5, 0.2, -0.1]))
        assert np.allclose(out, [0.65, -0.95, -0.65], rtol=0, atol=1e-15)

    def test_exact_decomposition_orthogonal(self, rng):
        pts = rng.uniform(-2, 2, (1000, 3))
        grad_v, g = exact_decomposition_bistable3d(pts)
        assert np.abs((grad_v * g).sum(axis=1)).max() <= 1e-12

    def test_exact_decomposition_reconstructs_rhs(self, rng):
        pts = rng.uniform(-2, 2, (200, 3))
        grad_v, g = exact_decomposition_bistable3d(pts)
        assert np.array_equal(g - grad_v, rhs_bistable3d(pts))

    def test_decomposition_vanishes_at_attractor(self):
        grad_v, g = exact_decomposition_bistable3d(np.array([1.0, 0.0, 0.0]))
        assert np.array_equal(grad_v, np.zeros(3))
        assert np.array_equal(g, np.zeros(3))

    def test_samples_lie_in_box(self):
        system = make_system("bistable3d")
        pts = sample_initial(system, seed=3, n=500)
        assert (pts[:, 0] >= -2).all() and (pts[:, 0] <= 2).all()
        assert (np.abs(pts[:, 1:]) <= 1.5).all()


class TestLimitCycle2d:
    def test_center_is_equilibrium_with_quarter_potential(self):
        system = make_system("limitcycle2d")
        center = np.array([1.0, 2.5])
        assert np.array_equal(system.field(center), np.zeros(2))
        assert exact_u_limitcycle2d(center) == 0.25

    def test_u_vanishes_on_ellipse(self, rng):
        a, b = 1.0, 2.5
        phi = rng.uniform(0, 2 * np.pi, 200)
        u = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        q_dir = u[:, 0] ** 2 + u[:, 0] * u[:, 1] + u[:, 1] ** 2
        pts = np.array([a, b]) + np.sqrt(0.5 / q_dir)[:, None] * u
        assert np.abs(exact_u_limitcycle2d(pts)).max() <= 1e-25

    def test_rotation_orthogonal_to_grad_u(self, rng):
        system = make_system("limitcycle2d")
        pts = rng.uniform([-0.5, 1.0], [2.5, 4.0], (500, 2))
        grad_v, g = system.exact_grad_v(pts), system.exact_g(pts)
        assert np.abs((grad_v * g).sum(axis=1)).max() <= 1e-12
        assert np.array_equal(g - grad_v, system.field(pts))


class TestYeast3d:
    def test_missing_parameter_named(self):
        incomplete = {k: v for k, v in YEAST_TEST_PARAMS.items() if k != "ks"}
        with pytest.raises(ConfigError) as exc:
            make_system("yeast3d", incomplete)
        assert any("ks" in p for p in exc.value.problems)

    def test_all_missing_parameters_listed_at_once(self):
        with pytest.raises(ConfigError) as exc:
            make_system("yeast3d", {})
        assert len(exc.value.problems) == 11

    def test_axis_reduction_at_x_y_zero(self):
        p = YEAST_TEST_PARAMS
        z = 1.7
        out = rhs_yeast3d(np.array([0.0, 0.0, z]), p)
        assert out[0] == p["a0"]
        assert out[1] == 0.0
        assert out[2] == pytest.approx(p["ks"] * z**2 / (p["j3"] ** 2 + z**2) - p["k3"] * z, abs=1e-15)

    def test_sampler_respects_rejection_predicate(self):
        system = make_system("yeast3d", YEAST_TEST_PARAMS)
        pts = sample_initial(system, seed=11, n=300)
        assert pts.shape == (300, 3)
        assert (pts >= 0).all() and (pts <= 5).all()
        assert np.abs(system.field(pts)).max(axis=1).max() < 5.0

    def test_sampler_rejection_overflow_raises(self):
        # impossible predicate: huge a0 makes ||f||_inf >= 5 everywhere
        bad = dict(YEAST_TEST_PARAMS, a0=100.0)
        system = make_system("yeast3d", bad)
        with pytest.raises(SamplingError):
            system.sample(np.random.default_rng(0), 10, _max_draws=2000)


class TestGinzburgLandau:
    def test_energy_at_zero_state(self):
        system = make_system("ginzburg_landau", {"I": 51, "delta": 0.1})
        assert system.dim == 50
        assert system.energy(np.zeros(50)) == pytest.approx(127.5, abs=1e-10)

    def test_field_is_negative_energy_gradient(self, rng):
        system = make_system("ginzburg_landau", {"I": 13, "delta": 0.1})
        u = rng.uniform(-1, 1, system.dim)
        fd = np.empty(system.dim)
        for i in range(system.dim):
            e = np.zeros(system.dim)
            e[i] = 1e-6
            fd[i] = (system.energy(u + e) - system.energy(u - e)) / 2e-6
        f = system.field(u)
        assert np.abs(f + fd).max() / np.abs(fd).max() <= 1e-6

    def test_two_minima_exist_and_are_symmetric(self):
        system = make_system("ginzburg_landau", {"I": 21, "delta": 0.1})
        u_minus, u_plus = gl_stable_states(system, dt=1e-3, tol=1e-8)
        assert np.abs(system.field(u_minus)).max() <= 1e-8
        assert np.abs(system.field(u_plus)).max() <= 1e-8
        assert u_plus.max() > 0.5 and u_minus.min() < -0.5
        assert np.abs(u_plus + u_minus).max() < 1e-6  # u -> -u symmetry
        exact_u = gl_exact_quasipotential(system, u_minus)
        assert exact_u(u_minus) == 0.0
        assert abs(exact_u(u_plus)) < 1e-6

    def test_sampler_normalization_is_exact(self):
        system = make_system("ginzburg_landau", {"I": 21, "delta": 0.1})
        rng = np.random.default_rng(5)
        pts = system.sample(rng, 100)
        # reproduce the amplitude draws to compare against the peak
        rng2 = np.random.default_rng(5)
        rng2.uniform(-1.0, 1.0, size=(100, 4))
        amps = rng2.uniform(0.0, 1.5, size=(100, 1))[:, 0]
        assert np.array_equal(np.abs(pts).max(axis=1), amps)

    def test_energy_batched(self, rng):
        vals = gl_energy(rng.uniform(-1, 1, (7, 20)), 21, 0.1)
        assert vals.shape == (7,)


class TestBrusselator:
    def test_dimension_for_default_grid(self):
        system = make_system("brusselator")
        assert system.params["I"] == 19
        assert system.dim == 40

    def test_stable_state_zero_field(self):
        system = make_system("brusselator", {"I": 9})
        assert np.abs(system.field(system.extras["stable_state"])).max() == 0.0

    def test_constant_state_reduces_to_reaction_terms(self):
        system = make_system("brusselator", {"I": 7, "alpha": 0.2, "A": 0.4})
        c1, c2 = 1.3, 0.6
        x = np.concatenate([np.full(8, c1), np.full(8, c2)])
        f = system.field(x)
        du = (1.0 + c1 * c1 * c2 - 1.4 * c1) / 0.2
        dv = 0.4 * c1 - c1 * c1 * c2
        assert np.allclose(f[:8], du, rtol=0, atol=1e-14)
        assert np.allclose(f[8:], dv, rtol=0, atol=1e-14)

    def test_sampler_ranges(self):
        system = make_system("brusselator", {"I": 9})
        pts = sample_initial(system, seed=9, n=400)
        m = 10
        u, v = pts[:, :m], pts[:, m:]
        assert (u >= 0.5 - 1e-12).all() and (u <= 1.5 + 1e-12).all()
        assert (v >= -1e-12).all() and (v <= 1.0 + 1e-12).all()

    def test_relaxes_to_stable_state(self):
        system = make_system("brusselator", {"I": 9})
        x0 = sample_initial(system, seed=2)
        out = rollout(system.field, x0, 1e-4, 40000)
        assert np.abs(out[-1] - system.extras["stable_state"]).max() < 1e-4


class TestMakeSystem:
    def test_unknown_system_rejected(self):
        with pytest.raises(ConfigError):
            make_system("pendulum")

    def test_unknown_parameter_rejected(self):
        with pytest.raises(ConfigError):
            make_system("bistable3d", {"gamma": 1.0})
        with pytest.raises(ConfigError):
            make_system("ginzburg_landau", {"depth": 3})
