import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from susceptlab.lift import Lift, gaussian_moment
from oracles import gauss_hermite


def random_lift(rng, dim=2, n_terms=5, max_x=3, max_w=4):
    terms = {}
    for _ in range(n_terms):
        key = (int(rng.integers(0, max_x + 1)), tuple(int(v) for v in rng.integers(0, max_w + 1, dim)))
        terms[key] = float(rng.normal())
    return Lift(dim, terms)


def test_gaussian_moments_match_quadrature():
    for r in range(9):
        assert gaussian_moment(r) == pytest.approx(gauss_hermite(lambda x: x**r), abs=1e-12)


def test_algebra_matches_pointwise(rng):
    a, b = random_lift(rng), random_lift(rng)
    x = rng.normal(size=7)
    w = rng.uniform(-1, 1, size=(7, 2))
    assert np.allclose((a + b).evaluate(x, w), a.evaluate(x, w) + b.evaluate(x, w))
    assert np.allclose((a * b).evaluate(x, w), a.evaluate(x, w) * b.evaluate(x, w))
    assert np.allclose((a - 2.0).evaluate(x, w), a.evaluate(x, w) - 2.0)
    assert np.allclose((a**3).evaluate(x, w), a.evaluate(x, w) ** 3)


def test_population_matches_gauss_hermite(rng):
    lift = random_lift(rng, max_x=6)
    w = rng.uniform(-1, 1, size=(5, 2))
    pop = lift.population().evaluate_w(w)
    for wi, pi in zip(w, pop):
        assert pi == pytest.approx(gauss_hermite(lambda x: lift.evaluate(x, np.broadcast_to(wi, (x.size, 2)))),
                                   rel=1e-12, abs=1e-12)


def test_empirical_is_dataset_average(rng):
    lift = random_lift(rng)
    data = rng.normal(size=11)
    w = np.array([0.3, -0.7])
    direct = np.mean([lift.evaluate(x, w) for x in data])
    assert lift.empirical(data).evaluate_w(w) == pytest.approx(direct, rel=1e-12)


def test_restrict_substitutes_coordinates(rng):
    lift = random_lift(rng)
    w = np.array([[0.2, 0.9]])
    assert lift.restrict({1: 0.9}).evaluate(1.5, np.array([[0.2, 123.0]])) == pytest.approx(lift.evaluate(1.5, w))


def test_x_coefficients_reassemble(rng):
    lift = random_lift(rng)
    total = Lift(2, {})
    for r, c in lift.x_coefficients().items():
        total = total + c * Lift.x_power(2, r)
    assert total == lift


def test_deterministic_evaluation_rejects_x_dependence():
    with pytest.raises(ValueError):
        Lift.x_power(1).evaluate_w(np.array([0.5]))


def test_min_w_exponent():
    lift = Lift.monomial(2, (2, 3)) + Lift.monomial(2, (1, 4), 1)
    assert lift.min_w_exponent() == (1, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 1), st.integers(1, 3))
def test_derivative_matches_finite_differences(seed, i, order):
    rng = np.random.default_rng(seed)
    lift = random_lift(rng)
    x = float(rng.normal())
    w = rng.uniform(-1, 1, 2)
    e = np.zeros(2)
    e[i] = 1.0
    step = 1e-3
    f = lambda t: lift.evaluate(x, w + t * e)
    if order == 1:
        fd = (f(step) - f(-step)) / (2 * step)
    elif order == 2:
        fd = (f(step) - 2 * f(0) + f(-step)) / step**2
    else:
        fd = (f(2 * step) - 2 * f(step) + 2 * f(-step) - f(-2 * step)) / (2 * step**3)
    exact = lift.deriv(i, order).evaluate(x, w)
    assert exact == pytest.approx(fd, abs=1e-4 * max(1.0, abs(exact)))


def test_derivative_of_constant_is_zero():
    assert Lift.constant(2, 3.0).deriv(0).is_zero
    assert Lift.monomial(1, (2,)).deriv(0, 3).is_zero
    assert math.isclose(Lift.monomial(1, (3,)).deriv(0, 3).evaluate_w(np.array([0.4])), 6.0)
