import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import special

from susceptlab.asymptotics import (SCALING_COLUMNS, fit_scaling, fluctuation_expansion, fluctuation_function,
                                    moment_curve, scaling_law, scaling_row, write_scaling_csv)
from susceptlab.model_zoo import make_monomial_gaussian, sample_data
from susceptlab.posterior import QuadratureBackend

NBETAS = [10.0**e for e in range(2, 7)]


def test_law_examples():
    law = scaling_law((1,), (0,), (1,))
    assert (law.rlct, law.lambda_l, law.tau) == (Fraction(1, 2), Fraction(1), Fraction(1, 2))
    assert law.C == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)
    zero = scaling_law((3,), (1,), (0,))
    assert zero.tau == 0 and zero.C == pytest.approx(1.0)
    two = scaling_law((1, 1), (0, 0), (0, 0))
    assert two.rlct == Fraction(1, 2) and two.m == 2 and two.log_power == 0


@pytest.mark.parametrize("k,h", [(1, 0), (2, 0), (3, 1), (2, 3)])
def test_sigma_is_one_when_insertion_matches_loss(k, h):
    assert scaling_law((k,), (h,), (2 * k,)).tau == 1


def test_multiplicity_and_log_power():
    law = scaling_law((1, 1), (0, 0), (1, 0))
    assert law.lambda_l == Fraction(1, 2) and law.m_l == 1 and law.log_power == -1
    with pytest.raises(ValueError):
        scaling_law((1,), (0,), (1, 1))
    with pytest.raises(ValueError):
        scaling_law((0,), (0,), (1,))


def test_loss_scale_constant():
    assert scaling_law((2,), (1,), (1,), loss_scale=0.5).C == pytest.approx(
        0.5 ** (-0.25) * special.gamma(0.75) / special.gamma(0.5), rel=1e-14)


def test_fit_exact_synthetic():
    fit = fit_scaling([(nb, 2 * nb**-0.5) for nb in NBETAS])
    assert fit.slope_hat == pytest.approx(-0.5, abs=1e-10)
    assert fit.C_hat == pytest.approx(2.0, rel=1e-10)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_removes_log_factor():
    law = scaling_law((1, 1), (0, 0), (1, 0))
    fit = fit_scaling([(nb, 3 * nb**-0.5 * math.log(nb) ** -1) for nb in NBETAS], law)
    assert fit.slope_hat == pytest.approx(-0.5, abs=1e-10) and fit.C_hat == pytest.approx(3.0, rel=1e-10)


def test_fit_constant_and_errors():
    assert fit_scaling([(nb, 0.7) for nb in NBETAS]).slope_hat == 0.0
    with pytest.raises(ValueError):
        fit_scaling([(nb, -1.0) for nb in NBETAS])
    with pytest.raises(ValueError):
        fit_scaling([(nb, 1.0) for nb in NBETAS[:4]])
    with pytest.raises(ValueError):
        fit_scaling([(10.0 + i, 1.0) for i in range(6)])


def test_quadrature_moments_follow_the_law():
    m = make_monomial_gaussian((1,))
    law = scaling_law((1,), (0,), (1,), m.loss_scale)
    fit = fit_scaling(moment_curve(lambda nb: QuadratureBackend.population(m, nb), (1,), NBETAS), law)
    assert abs(fit.slope_hat + 0.5) <= 0.02
    assert fit.C_hat == pytest.approx(law.C, rel=0.05)


def test_empirical_moments_share_the_slope():
    m = make_monomial_gaussian((1,))
    ns = [10**e for e in range(2, 7)]
    curve = []
    for n in ns:
        nb = n / math.log(n)
        data = sample_data(m, n, seed=n)
        curve.append((nb, QuadratureBackend.empirical(m, data, nb).expect(lambda p: p[:, 0])))
    fit = fit_scaling(curve)
    assert abs(fit.slope_hat + float(scaling_law((1,), (0,), (1,)).tau)) <= 0.1


def series_oracle(alpha, a, beta, terms=200):
    """``sum_j (a sqrt(beta))^j / j! Gamma(alpha + j / 2)``, summed in log space."""
    b = a * math.sqrt(beta)
    if b == 0:
        return math.gamma(alpha)
    total = 0.0
    for j in range(terms):
        mag = j * math.log(abs(b)) - special.gammaln(j + 1) + special.gammaln(alpha + j / 2)
        total += math.copysign(1.0, b) ** j * math.exp(mag)
    return total


@pytest.mark.parametrize("alpha", [0.25, 0.5, 1.0, 2.0, 3.7])
def test_fluctuation_function_values(alpha):
    assert fluctuation_function(alpha, 0.0, 0.01) == pytest.approx(math.gamma(alpha), rel=1e-12)
    for a in (-2.0, -0.5, 1.0, 2.0):
        for beta in (1e-4, 1e-2, 0.5):
            assert fluctuation_function(alpha, a, beta) == pytest.approx(series_oracle(alpha, a, beta), rel=1e-11)


def test_fluctuation_function_flags():
    val, err, ok = fluctuation_function(1.0, 0.0, 0.1, full_output=True)
    assert val == pytest.approx(1.0, rel=1e-13) and ok and err < 1e-10
    with pytest.raises(ValueError):
        fluctuation_function(0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        fluctuation_function(1.0, 1.0, -0.1)


def test_fluctuation_expansion_residual_is_order_beta():
    betas = np.logspace(-4, -2, 9)
    for alpha in (0.25, 1.0, 2.0):
        res = [abs(fluctuation_function(alpha, 1.5, b) - fluctuation_expansion(alpha, 1.5, b)) for b in betas]
        slope = np.polyfit(np.log(betas), np.log(res), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.05)


def test_scaling_csv(tmp_path):
    law = scaling_law((2,), (1,), (1,))
    row = scaling_row(law, fit_scaling([(nb, nb**-0.25) for nb in NBETAS]))
    path = tmp_path / "s.csv"
    write_scaling_csv(path, [row])
    lines = path.read_text().splitlines()
    assert lines[0] == "k,h,l,lambda_l,tau,m_l,slope_hat,C_hat,C_theory,r2"
    assert lines[0].split(",") == list(SCALING_COLUMNS)
    assert lines[1].startswith("2,1,1,3/4,1/4,1,")
