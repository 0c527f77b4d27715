import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sme_lab.objectives import (CATALOG, CustomObjective, builtin_objective, curvature,
                                load_coefficients, minimizers_1d)

ONE_D = ("quad1d", "quartic1d", "doublewell", "linquad")


def make(name, dim=7, seed=3):
    if name in ("sep-quad-nd", "sep-quartic-nd"):
        return builtin_objective(name, dim=dim, seed=seed)
    if name == "scaled-quad":
        return builtin_objective(name, a=1.7, shift=0.4)
    return builtin_objective(name)


# component indices are zero-based: component 0 is f_1, component 1 is f_2
def test_quad1d_component_gradients():
    obj = builtin_objective("quad1d")
    assert obj.grad_component(0, [1.0])[0] == 0.0
    assert obj.grad_component(1, [1.0])[0] == 4.0


def test_doublewell_component_stationary_point():
    obj = builtin_objective("doublewell")
    assert obj.grad_component(0, [1.0])[0] == pytest.approx(0.0, abs=1e-15)
    x = 0.3
    assert obj.grad_component(0, [x])[0] == pytest.approx(4 * (x - 1) * np.exp(-(x - 1) ** 2))


def test_grad_component_errors():
    obj = builtin_objective("quad1d")
    with pytest.raises(IndexError):
        obj.grad_component(2, [0.0])
    with pytest.raises(IndexError):
        obj.grad_component(-1, [0.0])
    with pytest.raises(ValueError):
        obj.grad_component(0, [np.nan])
    with pytest.raises(ValueError):
        obj.grad_full([np.inf])


def test_grad_full_examples():
    obj = builtin_objective("quad1d")
    assert obj.grad_full([0.0])[0] == 0.0
    assert obj.grad_full([1.0])[0] == 2.0
    lin = builtin_objective("linquad")
    c = -0.5 + np.arange(1, 101) / 200
    assert lin.grad_full([c.mean()])[0] == pytest.approx(0.0, abs=1e-15)


def test_component_covariance_examples():
    obj = builtin_objective("quad1d")
    for x in (-3.0, 0.0, 1.0, 2.5):
        assert obj.component_covariance([x])[0, 0] == pytest.approx(4.0)
    single = builtin_objective("scaled-quad", a=2.0)
    assert single.component_covariance([0.7])[0, 0] == 0.0
    lin = builtin_objective("linquad")
    c = -0.5 + np.arange(1, 101) / 200
    # brute force over the 100 components
    g = np.array([lin.grad_component(i, [0.3])[0] for i in range(100)])
    assert lin.component_covariance([0.3])[0, 0] == pytest.approx(np.mean((g - g.mean()) ** 2))
    assert lin.component_covariance([0.3])[0, 0] == pytest.approx(c.var())


def test_linquad_coefficients():
    lin = builtin_objective("linquad")
    assert lin.shifts[0] == pytest.approx(-0.495)
    assert lin.shifts[-1] == pytest.approx(0.0)
    assert lin.n == 100


def test_nd_coefficients_seeded_and_recorded():
    obj = builtin_objective("sep-quad-nd", dim=100, seed=11)
    c = 2 * obj.weights
    assert c.shape == (100,)
    assert np.all((c >= 0) & (c <= 5))
    again = builtin_objective("sep-quad-nd", coeffs=obj.params["coeffs"])
    np.testing.assert_array_equal(again.weights, obj.weights)
    assert obj.params["seed"] == 11


def test_scaled_quad_gradient_is_identity_at_a1():
    obj = builtin_objective("scaled-quad", a=1.0)
    xs = np.linspace(-2, 2, 9)[:, None]
    np.testing.assert_allclose(obj.grad_full(xs), xs)


def test_unknown_and_malformed():
    with pytest.raises(ValueError):
        builtin_objective("rosenbrock")
    with pytest.raises(ValueError):
        builtin_objective("sep-quad-nd")
    with pytest.raises(ValueError):
        builtin_objective("scaled-quad", a=-1.0)
    with pytest.raises(ValueError):
        builtin_objective("sep-quad-nd", dim=3, coeffs=[1.0, 2.0])


@pytest.mark.parametrize("name", CATALOG)
def test_mean_property(name):
    obj = make(name)
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(1000, obj.dim))
    comps = obj.component_grads(x)
    np.testing.assert_allclose(obj.grad_full(x), comps.mean(axis=-2), rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("name", CATALOG)
def test_covariance_is_psd(name):
    obj = make(name)
    x = np.random.default_rng(1).uniform(-2, 2, size=(50, obj.dim))
    S = obj.component_covariance(x)
    np.testing.assert_allclose(S, np.swapaxes(S, -1, -2), atol=1e-14)
    ev = np.linalg.eigvalsh(S)
    assert np.all(ev.min(axis=-1) >= -1e-12 * np.maximum(ev.max(axis=-1), 1.0))


@pytest.mark.parametrize("name", CATALOG)
def test_gradients_match_finite_differences(name):
    obj = make(name, dim=4)
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.uniform(-1.5, 1.5, size=obj.dim)
        i = int(rng.integers(obj.n))
        g = obj.grad_component(i, x)
        fd = np.empty(obj.dim)
        for j in range(obj.dim):
            e = np.zeros(obj.dim)
            h = 1e-5 * (1 + abs(x[j]))
            e[j] = h
            fd[j] = (obj.loss_component(i, x + e) - obj.loss_component(i, x - e)) / (2 * h)
        scale = max(np.abs(g).max(), 1.0)
        assert np.abs(fd - g).max() / scale <= 1e-6


@pytest.mark.parametrize("name", ("quad1d", "doublewell", "linquad", "sep-quad-nd"))
def test_lipschitz_bounds_hold(name):
    obj = make(name, dim=5)
    assert obj.lipschitz_bounds is not None
    rng = np.random.default_rng(4)
    for _ in range(200):
        x, y = rng.uniform(-3, 3, size=(2, obj.dim))
        for i in range(min(obj.n, 5)):
            lhs = np.linalg.norm(obj.grad_component(i, x) - obj.grad_component(i, y))
            assert lhs <= obj.lipschitz_bounds[i] * np.linalg.norm(x - y) * (1 + 1e-12)


def test_quartic_has_no_global_lipschitz_bound():
    assert builtin_objective("quartic1d").lipschitz_bounds is None


def test_hvp_analytic_matches_finite_difference():
    obj = builtin_objective("sep-quartic-nd", dim=6, seed=5)
    rng = np.random.default_rng(6)
    x, v = rng.normal(size=(2, 6))
    h = 1e-6
    fd = (obj.grad_full(x + h * v) - obj.grad_full(x - h * v)) / (2 * h)
    np.testing.assert_allclose(obj.hvp(x, v), fd, rtol=1e-6)


def test_custom_objective_generic_paths():
    obj = CustomObjective(2, [lambda x: 2 * (x - 1), lambda x: 2 * (x + 1)],
                          lipschitz_bounds=[2, 2], losses=[lambda x: ((x - 1) ** 2).sum(),
                                                           lambda x: ((x + 1) ** 2).sum()],
                          quadratic=True)
    x = np.array([0.3, -0.2])
    np.testing.assert_allclose(obj.grad_full(x), 2 * x)
    np.testing.assert_allclose(obj.hessian(x), 2 * np.eye(2), atol=1e-8)
    np.testing.assert_allclose(obj.component_covariance(x), 4 * np.ones((2, 2)))
    assert obj.loss(x) == pytest.approx(((x - 1) ** 2).sum() / 2 + ((x + 1) ** 2).sum() / 2)
    with pytest.raises(ValueError):
        CustomObjective(1, [lambda x: x], lipschitz_bounds=[1, 2])


def test_doublewell_minimizers():
    mins = minimizers_1d(builtin_objective("doublewell"))
    np.testing.assert_allclose(mins, [-0.9575, 0.9575], atol=1e-4)


def test_curvature_helper():
    assert curvature(builtin_objective("quad1d")) == pytest.approx(2.0)
    assert curvature(builtin_objective("linquad")) == pytest.approx(1.0)
    assert curvature(builtin_objective("doublewell")) is None


def test_load_coefficients(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("1.5\n# comment\n\n2.0\n0.25  # trailing\n")
    np.testing.assert_array_equal(load_coefficients(p), [1.5, 2.0, 0.25])
    (tmp_path / "empty.txt").write_text("# nothing\n")
    with pytest.raises(ValueError):
        load_coefficients(tmp_path / "empty.txt")


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-10, 10), name=st.sampled_from(ONE_D))
def test_full_gradient_is_component_mean_property(x, name):
    obj = builtin_objective(name)
    mean = np.mean([obj.grad_component(i, [x])[0] for i in range(obj.n)])
    assert obj.grad_full([x])[0] == pytest.approx(mean, rel=1e-12, abs=1e-12)
