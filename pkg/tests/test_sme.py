import numpy as np
import pytest
from scipy.integrate import solve_ivp

from sme_lab import sme
from sme_lab.ensemble import SimSpec, run_ensemble
from sme_lab.objectives import CustomObjective, builtin_objective


def flat(d=2):
    return CustomObjective(d, [lambda x: np.zeros_like(x)], lipschitz_bounds=[0.0], quadratic=True)


class TestPsdSqrt:
    def test_identity_and_scalar(self):
        np.testing.assert_array_equal(sme.psd_sqrt(np.eye(3)), np.eye(3))
        assert sme.psd_sqrt(4.0) == 2.0

    def test_reconstruction(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            A = rng.normal(size=(5, 5))
            S = A @ A.T
            R = sme.psd_sqrt(S)
            assert np.abs(R @ R - S).max() <= 1e-10
            np.testing.assert_allclose(R, R.T, atol=1e-12)

    def test_negative_eigenvalues_clipped(self):
        S = np.diag([4.0, -1e-3])
        np.testing.assert_allclose(sme.psd_sqrt(S), np.diag([2.0, 0.0]))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            sme.psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_stacks(self):
        S = np.stack([np.eye(2) * 9, np.eye(2) * 4])
        np.testing.assert_allclose(sme.psd_sqrt(S), np.stack([np.eye(2) * 3, np.eye(2) * 2]))


class TestInit:
    def test_linear_quad1d(self):
        s = sme.init_linear(builtin_objective("quad1d"), [1.0], 0.9, 0.01)
        assert s.M[0, 0] == 1.0 and s.P[0, 0] == 0.0 and s.t == 0.0
        assert s.Sigma[0, 0, 0] == pytest.approx(4.0)

    def test_single_component_has_no_noise(self):
        s = sme.init_linear(builtin_objective("scaled-quad", a=1.0), [0.3], 0.9, 0.01)
        assert s.Sigma[0, 0, 0] == 0.0

    def test_doublewell_matches_component_covariance(self):
        obj = builtin_objective("doublewell")
        s = sme.init_linear(obj, [0.1], 0.95, 0.01)
        np.testing.assert_allclose(s.Sigma[0], obj.component_covariance([0.1]))
        n = sme.init_nonlinear(obj, [0.1], 0.95, 0.01)
        np.testing.assert_array_equal(n.Sigma, s.Sigma)

    def test_nonlinear_y0(self):
        obj = builtin_objective("quad1d")
        assert sme.init_nonlinear(obj, [1.0], 0.9, 0.01).Y[0, 0] == pytest.approx(-0.63246, abs=1e-5)
        assert sme.init_nonlinear(obj, [0.0], 0.9, 0.01).Y[0, 0] == 0.0

    @pytest.mark.parametrize("mu,eta", [(0.0, 0.01), (1.0, 0.01), (0.9, 0.0), (-0.1, 0.01)])
    def test_parameter_range(self, mu, eta):
        with pytest.raises(ValueError):
            sme.init_linear(builtin_objective("quad1d"), [1.0], mu, eta)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sme.init_linear(builtin_objective("quad1d"), [1.0, 2.0], 0.9, 0.01)


class TestErrors:
    def test_nonlinear_rejects_mu_zero(self):
        obj = builtin_objective("quad1d")
        state = sme.NonlinearSmeState(np.ones((1, 1)), np.zeros((1, 1)), np.full((1, 1, 1), 4.0))
        with pytest.raises(ValueError, match="SME-SGD"):
            sme.step_nonlinear(state, obj, sme.IntegratorConfig(0.0, 0.01), np.random.default_rng(0))

    def test_linear_evolve_needs_affine_gradient(self):
        obj = builtin_objective("doublewell")
        state = sme.init_linear(obj, [0.1], 0.95, 0.01)
        with pytest.raises(ValueError):
            sme.step_linear(state, obj, sme.IntegratorConfig(0.95, 0.01), np.random.default_rng(0))
        sme.step_linear(state, obj, sme.IntegratorConfig(0.95, 0.01, sigma_mode="freeze"),
                        np.random.default_rng(0))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            sme.IntegratorConfig(0.9, 0.01, sigma_mode="wobble")
        with pytest.raises(ValueError):
            sme.IntegratorConfig(0.9, 0.01, sigma_mode="const")
        with pytest.raises(ValueError):
            sme.IntegratorConfig(0.9, 0.01, substeps=0)
        with pytest.raises(ValueError):
            sme.IntegratorConfig(0.9, 0.01, dt=-1.0)

    def test_non_finite_state(self):
        obj = builtin_objective("quad1d")
        cfg = sme.IntegratorConfig(0.9, 0.01, dt=1e3)
        state = sme.init_nonlinear(obj, [1.0], 0.9, 0.01)
        with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
            for _ in range(200):
                state = sme.step_nonlinear(state, obj, cfg, np.random.default_rng(1))


def xy_oracle(obj, x0, mu, eta, T):
    c = np.sqrt((1 - mu) / eta)
    y0 = -np.sqrt(eta / (1 - mu)) * obj.grad_full([x0])[0]

    def rhs(_, z):
        return [z[1], -obj.grad_full([z[0]])[0] - c * z[1]]

    return solve_ivp(rhs, (0, T), [x0, y0], rtol=1e-12, atol=1e-12).y[0, -1]


def noiseless_end(obj, x0, mu, eta, T, substeps):
    cfg = sme.with_zero_noise(sme.IntegratorConfig(mu, eta, dt=T / 20, substeps=substeps))
    state = sme.init_nonlinear(obj, [x0], mu, eta)
    _, state = sme.integrate("sme-asgd", state, obj, cfg, 20, np.random.default_rng(0))
    return state.X[0, 0]


class TestDeterministicLimit:
    def test_nonlinear_matches_ode_solver(self):
        obj = builtin_objective("doublewell")
        exact = xy_oracle(obj, 0.1, 0.95, 0.01, 1.0)
        assert abs(noiseless_end(obj, 0.1, 0.95, 0.01, 1.0, 200) - exact) <= 1e-4

    def test_euler_first_order(self):
        obj = builtin_objective("doublewell")
        exact = xy_oracle(obj, 0.1, 0.95, 0.01, 1.0)
        e1 = abs(noiseless_end(obj, 0.1, 0.95, 0.01, 1.0, 8) - exact)
        e2 = abs(noiseless_end(obj, 0.1, 0.95, 0.01, 1.0, 16) - exact)
        assert 1.7 <= e1 / e2 <= 2.3

    def test_linear_damped_oscillator_energy(self):
        # mu = 0.9, eta = 0.01 is overdamped for f = x^2 (c^2 = 10 > 8)
        obj = builtin_objective("scaled-quad", a=2.0)
        cfg = sme.with_zero_noise(sme.IntegratorConfig(0.9, 0.01, substeps=4))
        state = sme.init_linear(obj, [1.0], 0.9, 0.01)
        state.P[:] = -1.0
        rec, _ = sme.integrate("sme-asgd-linear", state, obj, cfg, 2000, np.random.default_rng(0))
        M = rec[:, 0, 0]
        dt = sme.asgd_dt(0.9, 0.01)
        P = np.diff(M) / dt
        energy = M[:-1] ** 2 + 0.5 * P ** 2
        assert np.all(np.diff(energy) <= 1e-12)

    def test_msgd_overdamped_descent(self):
        obj = builtin_objective("scaled-quad", a=1.0)
        cfg = sme.with_zero_noise(sme.IntegratorConfig(0.0, 1e-4, dt=1e-3))
        state = sme.init_msgd_sme(obj, [1.0])
        rec, _ = sme.integrate("sme-msgd", state, obj, cfg, 500, np.random.default_rng(0))
        assert np.all(np.diff(np.abs(rec[:, 0, 0])) <= 0)

    def test_sme_sgd_modified_gradient_flow(self):
        # f = x^2: drift 2x + (eta/2) 2 (2x) = 2x (1 + eta), so x(t) = exp(-2 (1 + eta) t)
        obj = builtin_objective("scaled-quad", a=2.0)
        eta = 0.01
        cfg = sme.IntegratorConfig(0.0, eta, substeps=50)
        state = sme.init_sme_sgd(obj, [1.0])
        rec, _ = sme.integrate("sme-sgd", state, obj, cfg, 100, np.random.default_rng(0))
        assert rec[-1, 0, 0] == pytest.approx(np.exp(-2 * (1 + eta) * 1.0), rel=1e-3)

    def test_sme_sgd_drift_analytic_and_finite_difference_hvp(self):
        custom = CustomObjective(1, [lambda x: 4 * x ** 3], lipschitz_bounds=None)
        builtin = builtin_objective("sep-quartic-nd", coeffs=[8.0])
        x = np.array([[0.7]])
        np.testing.assert_allclose(sme.sme_sgd_drift(builtin, x, 0.1),
                                   builtin.grad_full(x) + 0.05 * builtin.hvp(x, builtin.grad_full(x)))
        g = 4 * 0.7 ** 3
        np.testing.assert_allclose(sme.sme_sgd_drift(custom, x, 0.1)[0, 0], g + 0.05 * 12 * 0.49 * g,
                                   rtol=1e-6)


class TestNoise:
    def test_brownian_increment_covariance(self):
        obj = flat(2)
        cfg = sme.IntegratorConfig(0.9, 0.01, sigma_mode="const", Sigma_const=1.0)
        paths = 10**6
        state = sme.NonlinearSmeState(np.zeros((paths, 2)), np.zeros((paths, 2)), np.zeros((paths, 2, 2)))
        new = sme.step_nonlinear(state, obj, cfg, np.random.default_rng(3))
        scale = 0.01 ** 0.75 / 0.1 ** 0.25
        dB = new.X / scale
        h = sme.asgd_dt(0.9, 0.01)
        cov = dB.T @ dB / paths
        np.testing.assert_allclose(cov, h * np.eye(2), atol=5 * h * np.sqrt(2 / paths))

    def test_sigma_stays_symmetric(self):
        obj = builtin_objective("sep-quad-nd", dim=4, seed=1)
        cfg = sme.IntegratorConfig(0.9, 0.01)
        state = sme.init_nonlinear(obj, np.full(4, 0.5), 0.9, 0.01, paths=8)
        rng = np.random.default_rng(4)
        for _ in range(200):
            state = sme.step_nonlinear(state, obj, cfg, rng)
            S = state.Sigma
            assert np.abs(S - np.swapaxes(S, -1, -2)).max() <= 1e-10
            assert np.linalg.eigvalsh(S).min() >= -1e-10
        assert state.clip_events >= 0

    def test_linear_sigma_stays_psd(self):
        obj = builtin_objective("quad1d")
        cfg = sme.IntegratorConfig(0.9, 0.01)
        state = sme.init_linear(obj, [1.0], 0.9, 0.01, paths=16)
        rng = np.random.default_rng(5)
        for _ in range(500):
            state = sme.step_linear(state, obj, cfg, rng)
            assert np.all(state.Sigma >= 0)

    def test_control_factor_shrinks_noise(self):
        obj = flat(1)
        base = sme.IntegratorConfig(0.9, 0.01, sigma_mode="const", Sigma_const=1.0)
        ctl = sme.IntegratorConfig(0.9, 0.01, sigma_mode="const", Sigma_const=1.0, batch_u=lambda t: 3.0)
        s = sme.NonlinearSmeState(np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((4, 1, 1)))
        a = sme.step_nonlinear(s, obj, base, np.random.default_rng(6)).X
        b = sme.step_nonlinear(s, obj, ctl, np.random.default_rng(6)).X
        np.testing.assert_allclose(b, a / 2)
        bad = sme.IntegratorConfig(0.9, 0.01, batch_u=lambda t: -1.0, sigma_mode="const", Sigma_const=1.0)
        with pytest.raises(ValueError):
            sme.step_nonlinear(s, obj, bad, np.random.default_rng(6))

    def test_determinism(self):
        obj = builtin_objective("doublewell")
        cfg = sme.IntegratorConfig(0.95, 0.01)
        runs = []
        for _ in range(2):
            st = sme.init_nonlinear(obj, [0.1], 0.95, 0.01, paths=5)
            rec, _ = sme.integrate("sme-asgd", st, obj, cfg, 100, np.random.default_rng(7))
            runs.append(rec.tobytes())
        assert runs[0] == runs[1]


def moments_agree(a, b, k=3.0):
    se_m = np.sqrt(a.stderr ** 2 + b.stderr ** 2)
    se_s = np.sqrt(a.second_moment_stderr ** 2 + b.second_moment_stderr ** 2)
    return (np.all(np.abs(a.mean - b.mean) <= k * se_m)
            and np.all(np.abs(a.second_moment - b.second_moment) <= k * se_s))


def test_linear_form_maps_onto_nonlinear_form_pathwise():
    # X = M + P / c and Y = -grad f(M) / c; with a shared noise stream and frozen
    # sigma both Euler schemes produce the same paths
    obj = builtin_objective("quad1d")
    cfg = sme.IntegratorConfig(0.9, 0.01, sigma_mode="freeze")
    lin = sme.init_linear(obj, [1.0], 0.9, 0.01, paths=6)
    non = sme.init_nonlinear(obj, [1.0], 0.9, 0.01, paths=6)
    r1, r2 = np.random.default_rng(8), np.random.default_rng(8)
    c = cfg.friction
    for _ in range(1000):
        lin = sme.step_linear(lin, obj, cfg, r1)
        non = sme.step_nonlinear(non, obj, cfg, r2)
    assert np.abs(lin.M + lin.P / c - non.X).max() <= 1e-12
    assert np.abs(-obj.grad_full(lin.M) / c - non.Y).max() <= 1e-12


def mapped_moments(method, seed, paths=5000, steps=1000, every=100):
    obj = builtin_objective("quad1d")
    cfg = sme.IntegratorConfig(0.9, 0.01)
    init = sme.init_linear if method == "linear" else sme.init_nonlinear
    state = init(obj, [1.0], 0.9, 0.01, paths=paths)
    rng = np.random.default_rng(seed)
    out = []
    for k in range(1, steps + 1):
        if method == "linear":
            state = sme.step_linear(state, obj, cfg, rng)
            x = state.M + state.P / cfg.friction
        else:
            state = sme.step_nonlinear(state, obj, cfg, rng)
            x = state.X
        if k % every == 0:
            x = x[:, 0]
            out.append((x.mean(), x.std() / np.sqrt(paths), (x**2).mean(), (x**2).std() / np.sqrt(paths)))
    return np.array(out)


@pytest.mark.slow
def test_linear_and_nonlinear_forms_agree_in_distribution():
    a, b = mapped_moments("linear", 11), mapped_moments("nonlinear", 12)
    assert len(a) == 10
    for col in (0, 2):
        se = np.hypot(a[:, col + 1], b[:, col + 1])
        assert np.all(np.abs(a[:, col] - b[:, col]) <= 3 * se)


@pytest.mark.slow
def test_frozen_and_evolving_sigma_agree_on_quad1d():
    obj = builtin_objective("quad1d")
    common = dict(objective=obj, x0=(1.0,), steps=1000, mu=0.9, eta=0.01, checkpoint_every=100)
    ev = run_ensemble(SimSpec("sme-asgd-linear", **common), 5000, 13)
    fr = run_ensemble(SimSpec("sme-asgd-linear", sigma_mode="freeze", **common), 5000, 14)
    assert moments_agree(ev, fr)


@pytest.mark.slow
def test_sme_sgd_mean_decays_without_oscillation_at_high_momentum():
    obj = builtin_objective("quad1d")
    st = run_ensemble(SimSpec("sme-sgd", obj, (1.0,), 1000, mu=0.97, eta=0.01), 5000, 15)
    m = st.mean[:, 0]
    assert np.all(np.diff(m) <= 3 * np.sqrt(2) * st.stderr[1:, 0])
    assert np.all(m > -3 * st.stderr[:, 0])
