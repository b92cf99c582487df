"""
Special-function kernel tests
Closed forms, round trips, symmetry and the two-t-sum density oracles
"""
import math

import numpy as np
import pytest
from scipy import integrate

from rankselect.config import QuadratureSettings
from rankselect.errors import DomainError
from rankselect.extreme_values import gamma_nu
from rankselect.numerics import integrate_interval, integrate_line
from rankselect.special_functions import (
    GAUSSIAN,
    StudentKernel,
    chi2_cdf,
    digamma,
    frechet_cdf,
    frechet_quantile,
    gauss_hypergeometric,
    gumbel_cdf,
    gumbel_quantile,
    ln_gamma,
    normal_cdf,
    normal_pdf,
    normal_quantile,
    student_t_cdf,
    student_t_pdf,
    student_t_quantile,
    trigamma,
    two_t_sum_pdf,
)

EULER_GAMMA = 0.5772156649015329
TAIL_SETTINGS = QuadratureSettings(abs_tol=1e-300, rel_tol=1e-10)
PROBABILITIES = np.linspace(0.001, 0.999, 100)


# ============================================================================
# GAMMA FAMILY
# ============================================================================

def test_ln_gamma_known_values():
    """Test 1: ln_gamma at 1, 1/2 and 5"""
    assert ln_gamma(1.0) == pytest.approx(0.0, abs=1e-13)
    assert ln_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), abs=1e-13)
    assert ln_gamma(5.0) == pytest.approx(math.log(24.0), abs=1e-13)


def test_digamma_closed_forms_and_recurrence():
    """Test 2: digamma closed forms and psi(x+1) - psi(x) = 1/x"""
    assert digamma(1.0) == pytest.approx(-EULER_GAMMA, abs=1e-12)
    assert digamma(0.5) == pytest.approx(-EULER_GAMMA - 2.0 * math.log(2.0), abs=1e-12)
    for x in (0.3, 2.0, 17.0):
        assert digamma(x + 1.0) - digamma(x) == pytest.approx(1.0 / x, abs=1e-12)


def test_trigamma_closed_forms_and_recurrence():
    """Test 3: trigamma closed forms and recurrence"""
    assert trigamma(1.0) == pytest.approx(math.pi ** 2 / 6.0, abs=1e-12)
    assert trigamma(0.5) == pytest.approx(math.pi ** 2 / 2.0, abs=1e-12)
    assert trigamma(4.0) == pytest.approx(trigamma(3.0) - 1.0 / 9.0, abs=1e-12)


@pytest.mark.parametrize("func", [ln_gamma, digamma, trigamma])
@pytest.mark.parametrize("x", [0.0, -1.5])
def test_gamma_family_rejects_nonpositive(func, x):
    with pytest.raises(DomainError):
        func(x)


# ============================================================================
# GAUSSIAN AND STUDENT-T
# ============================================================================

def test_normal_basics():
    """Test 4: symmetry, quantile and log value agreement"""
    assert normal_cdf(0.0).value == pytest.approx(0.5, abs=1e-15)
    assert normal_quantile(0.95) == pytest.approx(1.6448536269514722, abs=1e-12)
    assert normal_cdf(-2.7).value + normal_cdf(2.7).value == pytest.approx(1.0, abs=1e-15)

    evaluation = normal_cdf(-5.0)
    assert math.exp(evaluation.log_value) == pytest.approx(evaluation.value, rel=1e-12)
    assert normal_pdf(0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), rel=1e-14)
    assert normal_pdf(1.3) == pytest.approx(normal_pdf(-1.3), rel=1e-15)


def test_normal_quantile_round_trip():
    for p in PROBABILITIES:
        assert normal_cdf(normal_quantile(p)).value == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_quantiles_reject_bad_probability(p):
    with pytest.raises(DomainError):
        normal_quantile(p)
    with pytest.raises(DomainError):
        gumbel_quantile(p)
    with pytest.raises(DomainError):
        frechet_quantile(p, 2.0)


def test_student_t_known_values():
    """Test 5: symmetry, Cauchy case and the Gaussian limit"""
    for nu in (1.0, 2.5, 30.0):
        assert student_t_cdf(0.0, nu).value == pytest.approx(0.5, abs=1e-15)
    assert student_t_cdf(1.0, 1.0).value == pytest.approx(0.75, abs=1e-12)
    assert student_t_cdf(1.3, 1e8).value == pytest.approx(normal_cdf(1.3).value, abs=1e-6)


def test_student_t_round_trip_and_monotone():
    for nu in (1.0, 4.0, 17.5):
        values = [student_t_cdf(student_t_quantile(p, nu), nu).value for p in PROBABILITIES]
        assert values == pytest.approx(list(PROBABILITIES), abs=1e-10)
        assert all(b >= a for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("nu", [1.0, 2.0, 5.0, 30.0])
def test_student_t_pdf_integrates_to_one(nu):
    value, _ = integrate_line(lambda t: student_t_pdf(t, nu), [0.0])
    assert value == pytest.approx(1.0, abs=1e-9)


def test_student_t_rejects_bad_nu():
    with pytest.raises(DomainError):
        student_t_cdf(0.3, 0.0)
    with pytest.raises(DomainError):
        StudentKernel(-1.0)


def test_kernel_log_cdf_far_tail():
    """Test 6: log-domain c.d.f. stays finite where the c.d.f. underflows"""
    kernel = StudentKernel(3.0)
    deep = float(kernel.log_cdf(-1e120))
    assert math.isfinite(deep)
    assert deep < -700

    moderate = float(kernel.log_cdf(-50.0))
    assert moderate == pytest.approx(math.log(float(kernel.cdf(-50.0))), rel=1e-10)
    assert float(kernel.log_cdf(50.0)) == pytest.approx(math.log1p(-float(kernel.cdf(-50.0))), rel=1e-10)


def test_kernel_vectorized_matches_scalar():
    xs = np.array([-3.0, -0.5, 0.0, 1.2, 8.0])
    kernel = StudentKernel(6.0)
    for x, log_value in zip(xs, kernel.log_cdf(xs)):
        assert log_value == pytest.approx(float(kernel.log_cdf(x)), rel=1e-14)
    assert GAUSSIAN.isf(0.025) == pytest.approx(1.959963984540054, abs=1e-12)


# ============================================================================
# HYPERGEOMETRIC AND TWO-T SUM
# ============================================================================

def test_hypergeometric_values():
    """Test 7: series, log closed form and Gauss' theorem at z = 1"""
    assert gauss_hypergeometric(0.3, 1.7, 2.2, 0.0) == 1.0
    assert gauss_hypergeometric(1.0, 1.0, 2.0, 0.5) == pytest.approx(2.0 * math.log(2.0), rel=1e-10)
    assert gauss_hypergeometric(1.0, 1.0, 2.0, 0.95) == pytest.approx(-math.log(0.05) / 0.95, rel=1e-10)

    nu = 3.0
    expected = math.exp(ln_gamma(nu / 2 + 1) + ln_gamma(nu / 2) - ln_gamma(0.5) - ln_gamma(nu + 0.5))
    value = gauss_hypergeometric((nu + 1) / 2, (1 - nu) / 2, nu / 2 + 1, 1.0)
    assert value == pytest.approx(expected, rel=1e-10)


def test_hypergeometric_domain():
    with pytest.raises(DomainError):
        gauss_hypergeometric(1.0, 1.0, -2.0, 0.5)
    with pytest.raises(DomainError):
        gauss_hypergeometric(1.0, 1.0, 1.5, 1.0)
    with pytest.raises(DomainError):
        gauss_hypergeometric(1.0, 1.0, 2.0, 1.2)


def test_two_t_sum_cauchy_case():
    """Test 8: two standard Cauchy variables sum to a Cauchy with scale 2"""
    assert two_t_sum_pdf(0.0, 1.0) == pytest.approx(1.0 / (2.0 * math.pi), rel=1e-12)
    for t in (0.7, 3.0, 40.0):
        assert two_t_sum_pdf(t, 1.0) == pytest.approx(2.0 / (math.pi * (4.0 + t * t)), rel=1e-10)


def test_two_t_sum_symmetric_and_normalized():
    for t in (0.1, 2.5, 17.0, 400.0):
        assert two_t_sum_pdf(t, 3.0) == two_t_sum_pdf(-t, 3.0)
    value, _ = integrate_line(lambda t: two_t_sum_pdf(t, 3.0), [0.0, -5.0, 5.0])
    assert value == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("nu", [1.0, 3.0, 8.0])
def test_two_t_sum_matches_self_convolution(nu):
    for t in np.linspace(-10.0, 10.0, 9):
        oracle, _ = integrate.quad(lambda s: student_t_pdf(s, nu) * student_t_pdf(t - s, nu),
                                   -np.inf, np.inf, epsabs=1e-12, epsrel=1e-12, limit=400)
        assert two_t_sum_pdf(float(t), nu) == pytest.approx(oracle, abs=1e-6)


def test_two_t_sum_density_tail_doubles():
    assert two_t_sum_pdf(200.0, 5.0) / (2.0 * student_t_pdf(200.0, 5.0)) == pytest.approx(1.0, abs=0.02)


@pytest.mark.parametrize("nu", [2.0, 5.0])
def test_two_t_sum_tail_law(nu):
    """Test 9: 1 - G~(t) ~ 2 gamma_nu^nu t^-nu"""
    t = 1e3
    tail, _ = integrate_interval(lambda x: two_t_sum_pdf(x, nu), t, math.inf, TAIL_SETTINGS)
    assert tail / (2.0 * gamma_nu(nu) ** nu * t ** -nu) == pytest.approx(1.0, abs=0.03)


def test_two_t_sum_rejects_infinite_nu():
    with pytest.raises(DomainError):
        two_t_sum_pdf(0.0, math.inf)


# ============================================================================
# EXTREME VALUE LAWS AND CHI-SQUARE
# ============================================================================

def test_frechet():
    """Test 10: Frechet quantile values and round trip"""
    for nu in (0.5, 2.0, 7.0):
        assert frechet_quantile(math.exp(-1.0), nu) == pytest.approx(1.0, abs=1e-12)
    assert frechet_quantile(0.5, 1.0) == pytest.approx(1.0 / math.log(2.0), abs=1e-12)
    assert frechet_cdf(frechet_quantile(0.37, 4.5), 4.5) == pytest.approx(0.37, abs=1e-12)
    assert frechet_cdf(-1.0, 3.0) == 0.0
    assert frechet_cdf(1e-9, 3.0) == 0.0


def test_gumbel():
    assert gumbel_quantile(math.exp(-1.0)) == pytest.approx(0.0, abs=1e-12)
    assert gumbel_cdf(0.0) == pytest.approx(math.exp(-1.0), abs=1e-15)
    assert gumbel_quantile(0.95) == pytest.approx(2.970195249, abs=1e-8)
    assert gumbel_cdf(-800.0) == 0.0
    for p in PROBABILITIES:
        assert gumbel_cdf(gumbel_quantile(p)) == pytest.approx(p, abs=1e-10)


def test_chi2_cdf():
    """Test 11: chi-square with two degrees of freedom is exponential"""
    assert chi2_cdf(0.0, 3.0) == 0.0
    assert chi2_cdf(3.0, 2.0) == pytest.approx(1.0 - math.exp(-1.5), rel=1e-12)
    assert chi2_cdf(2.0 * math.log(2.0), 2.0) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(DomainError):
        chi2_cdf(-1.0, 2.0)
