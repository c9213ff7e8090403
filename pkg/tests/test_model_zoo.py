import numpy as np
import pytest

from susceptlab.model_zoo import Perturbation, make_monomial_gaussian, perturbation_density, sample_data
from oracles import gauss_hermite, lift_extended

ZOO = [((1,), (0,)), ((2,), (0,)), ((3,), (1,)), ((1, 2), (0, 0)), ((1, 2), (0, 2)), ((1, 1, 1), (0, 1, 0))]


def test_k1_loss_and_lift():
    m = make_monomial_gaussian((1,))
    w = np.array([[0.3], [0.8]])
    assert np.allclose(m.K.evaluate_w(w), 0.5 * w[:, 0] ** 2)
    assert np.allclose(m.f.evaluate(1.7, w), 0.5 * w[:, 0] ** 2 - 1.7 * w[:, 0])


def test_k2_vanishes_at_origin():
    m = make_monomial_gaussian((2,))
    assert m.K.evaluate_w(np.array([0.0])) == 0.0


def test_2d_loss():
    m = make_monomial_gaussian((1, 2))
    w = np.array([0.6, 0.7])
    assert m.K.evaluate_w(w) == pytest.approx(0.5 * 0.6**2 * 0.7**4, rel=1e-15)


@pytest.mark.parametrize("kw", [dict(k=(0,)), dict(k=(1,), domain=[(1.0, 1.0)]), dict(k=(1,), domain=[(2.0, 1.0)]),
                                dict(k=(1,), h=(-1,)), dict(k=(1,), loss_scale=0.0)])
def test_invalid_models_rejected(kw):
    with pytest.raises(ValueError):
        make_monomial_gaussian(**kw)


def test_sampling_is_deterministic():
    m = make_monomial_gaussian((1,))
    a, b = sample_data(m, 5, seed=3), sample_data(m, 5, seed=3)
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, sample_data(m, 5, seed=4).points)
    with pytest.raises(ValueError):
        sample_data(m, 0, seed=3)


def test_sample_moments():
    m = make_monomial_gaussian((1,))
    d = sample_data(m, 100_000, seed=11)
    assert abs(d.moment(1)) < 4 / np.sqrt(d.n)
    assert d.moment(4) == pytest.approx(3.0, rel=0.10)


def test_dataset_is_read_only():
    d = sample_data(make_monomial_gaussian((1,)), 4, seed=0)
    with pytest.raises(ValueError):
        d.points[0] = 1.0


def test_hermite_values():
    assert perturbation_density(Perturbation(1), 2.0) == 2.0
    assert perturbation_density(Perturbation(2), 1.0) == 0.0
    assert Perturbation(2, 3.0)(2.0) == pytest.approx(9.0)
    assert gauss_hermite(lambda x: perturbation_density(Perturbation(3), x) ** 2) == pytest.approx(6.0, rel=1e-12)
    with pytest.raises(ValueError):
        Perturbation(0)


@pytest.mark.parametrize("m_index", range(1, 7))
def test_hermite_zero_mean(m_index):
    assert abs(gauss_hermite(lambda x: perturbation_density(Perturbation(m_index), x))) <= 1e-12


def test_power_coefficients_reproduce_density(rng):
    for idx in range(1, 7):
        xi = Perturbation(idx, 1.5)
        x = rng.normal(size=9)
        assert np.allclose(np.polynomial.polynomial.polyval(x, xi.power_coefficients), xi(x), atol=1e-9)


@pytest.mark.parametrize("k,h", ZOO)
def test_population_loss_matches_x_quadrature(k, h, rng):
    m = make_monomial_gaussian(k, h)
    w = rng.uniform(m.lower, m.upper, size=(100, m.dim))
    closed = m.K.evaluate_w(w)
    for wi, ki in zip(w, closed):
        gh = gauss_hermite(lambda x: lift_extended(m.f, x, wi))
        assert gh == pytest.approx(ki, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("k,h", ZOO)
def test_loss_zero_set_is_coordinate_hyperplanes(k, h):
    m = make_monomial_gaussian(k, h)
    axes = [np.linspace(0, 1, 11)] * m.dim
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    on_axes = np.any(grid == 0.0, axis=1)
    assert np.array_equal(m.K.evaluate_w(grid) == 0.0, on_axes)
    assert np.all(m.K.evaluate_w(grid) >= 0.0)


def test_prior_is_normalized():
    from scipy import integrate
    m = make_monomial_gaussian((1, 2), (1, 2), domain=[(-1.0, 2.0), (0.0, 1.0)])
    total = integrate.dblquad(lambda b, a: np.exp(m.log_prior(np.array([a, b]))), -1, 2, 0, 1)[0]
    assert total == pytest.approx(1.0, rel=1e-8)


def test_log_prior_derivative_matches_fd():
    m = make_monomial_gaussian((1,), (3,))
    lp = lambda t: float(m.log_prior(np.array([t])))
    assert m.log_prior_derivative(0, 1, 0.4) == pytest.approx((lp(0.4 + 1e-6) - lp(0.4 - 1e-6)) / 2e-6, rel=1e-6)
    assert m.log_prior_derivative(0, 2, 0.4) == pytest.approx(-3 / 0.16)
    assert make_monomial_gaussian((1,)).log_prior_derivative(0, 2, 0.4) == 0.0
