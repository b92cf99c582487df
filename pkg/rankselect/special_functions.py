"""
Special-function kernel

Gamma family, Gaussian / Student-t / chi-square / Gumbel / Frechet laws,
the density of a sum of two Student-t variables and the Gauss
hypergeometric function. Scalar entry points validate their domain and
raise DomainError; StudentKernel is the vectorized form used inside
quadrature integrands, where powers up to 10^7 of a c.d.f. are taken in
the log domain.
"""
import logging
import math
from typing import Union

import numpy as np
from pydantic import BaseModel
from scipy import special

from rankselect.errors import DomainError, NonConvergenceError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
EULER_SWITCH = 0.9


class DistributionEval(BaseModel):
    """A probability together with its natural logarithm"""
    value: float
    log_value: float


# ============================================================================
# DOMAIN CHECKS
# ============================================================================

def _require_positive(name: str, x: float):
    if not x > 0:
        raise DomainError(f"{name} must be > 0, got {x}")


def _require_probability(p: float):
    if not 0.0 < p < 1.0:
        raise DomainError(f"Probability must lie in (0, 1), got {p}")


# ============================================================================
# GAMMA FAMILY
# ============================================================================

def ln_gamma(x: float) -> float:
    _require_positive("x", x)
    return float(special.gammaln(x))


def digamma(x: float) -> float:
    _require_positive("x", x)
    return float(special.digamma(x))


def trigamma(x: float) -> float:
    _require_positive("x", x)
    return float(special.polygamma(1, x))


# ============================================================================
# VECTORIZED KERNEL
# ============================================================================

class StudentKernel:
    """
    Student-t law with nu degrees of freedom; nu = inf gives the standard Gaussian

    All methods accept scalars or numpy arrays.
    """

    def __init__(self, nu: float):
        _require_positive("nu", nu)
        self.nu = float(nu)
        self.gaussian = math.isinf(self.nu)
        if not self.gaussian:
            half = 0.5 * (self.nu + 1.0)
            self._log_norm = (special.gammaln(half) - special.gammaln(0.5 * self.nu)
                              - 0.5 * math.log(self.nu * math.pi))

    def __repr__(self):
        return f"StudentKernel(nu={self.nu})"

    def log_pdf(self, x: ArrayLike) -> ArrayLike:
        x = np.asarray(x, dtype=float)
        if self.gaussian:
            return -0.5 * x * x - LOG_SQRT_2PI
        return self._log_norm - 0.5 * (self.nu + 1.0) * np.log1p(x * x / self.nu)

    def pdf(self, x: ArrayLike) -> ArrayLike:
        return np.exp(self.log_pdf(x))

    def cdf(self, x: ArrayLike) -> ArrayLike:
        if self.gaussian:
            return special.ndtr(x)
        return special.stdtr(self.nu, x)

    def sf(self, x: ArrayLike) -> ArrayLike:
        return self.cdf(-np.asarray(x, dtype=float))

    def log_cdf(self, x: ArrayLike) -> ArrayLike:
        if self.gaussian:
            return special.log_ndtr(x)

        x = np.asarray(x, dtype=float)
        lower = special.stdtr(self.nu, -np.abs(x))
        with np.errstate(divide="ignore", invalid="ignore"):
            log_lower = np.log(lower)
            # stdtr underflows far out; use the leading tail term instead
            tiny = (lower <= 0.0) & np.isfinite(x)
            if np.any(tiny):
                ax = np.abs(x[tiny]) if x.ndim else np.abs(x)
                tail = self.log_pdf(-ax) + np.log((self.nu + ax * ax) / (self.nu * ax))
                if x.ndim:
                    log_lower[tiny] = tail
                else:
                    log_lower = tail
            return np.where(x >= 0.0, np.log1p(-lower), log_lower)

    def quantile(self, u: ArrayLike) -> ArrayLike:
        if self.gaussian:
            return special.ndtri(u)
        return special.stdtrit(self.nu, u)

    def isf(self, q: ArrayLike) -> ArrayLike:
        """Upper quantile: the x with sf(x) = q"""
        return -self.quantile(q)


def _scalar_eval(kernel: StudentKernel, x: float) -> DistributionEval:
    return DistributionEval(value=float(kernel.cdf(x)), log_value=float(kernel.log_cdf(x)))


GAUSSIAN = StudentKernel(math.inf)


# ============================================================================
# GAUSSIAN AND STUDENT-T
# ============================================================================

def normal_cdf(x: float) -> DistributionEval:
    return _scalar_eval(GAUSSIAN, x)


def normal_pdf(x: float) -> float:
    return float(GAUSSIAN.pdf(x))


def normal_quantile(p: float) -> float:
    _require_probability(p)
    return float(special.ndtri(p))


def student_t_cdf(t: float, nu: float) -> DistributionEval:
    return _scalar_eval(StudentKernel(nu), t)


def student_t_pdf(t: float, nu: float) -> float:
    return float(StudentKernel(nu).pdf(t))


def student_t_quantile(p: float, nu: float) -> float:
    _require_probability(p)
    return float(StudentKernel(nu).quantile(p))


# ============================================================================
# HYPERGEOMETRIC
# ============================================================================

def _is_nonpositive_integer(x: float) -> bool:
    return x <= 0 and float(x).is_integer()


def gauss_hypergeometric(a: float, b: float, c: float, z: float) -> float:
    """
    2F1(a, b; c; z) for z in [0, 1]

    Closed form at z = 1 (requires c - a - b > 0), Euler's transformation
    for z above EULER_SWITCH, the direct series otherwise.
    """
    if _is_nonpositive_integer(c):
        raise DomainError(f"c must not be a non-positive integer, got {c}")
    if not 0.0 <= z <= 1.0:
        raise DomainError(f"z must lie in [0, 1], got {z}")

    if z == 0.0:
        return 1.0

    s = c - a - b
    if z == 1.0:
        if s <= 0:
            raise DomainError(f"2F1 at z=1 needs c - a - b > 0, got {s}")
        if _is_nonpositive_integer(c - a) or _is_nonpositive_integer(c - b):
            return 0.0
        sign = special.gammasgn(c) * special.gammasgn(s) / (
            special.gammasgn(c - a) * special.gammasgn(c - b))
        log_value = (special.gammaln(c) + special.gammaln(s)
                     - special.gammaln(c - a) - special.gammaln(c - b))
        return float(sign * math.exp(log_value))

    if z > EULER_SWITCH:
        value = (1.0 - z) ** s * special.hyp2f1(c - a, c - b, c, z)
    else:
        value = special.hyp2f1(a, b, c, z)

    if not math.isfinite(value):
        logger.error(f"❌ hyp2f1 returned {value} for a={a}, b={b}, c={c}, z={z}")
        raise NonConvergenceError(f"2F1({a}, {b}; {c}; {z}) did not converge")
    return float(value)


def two_t_sum_pdf(t: float, nu: float) -> float:
    """Density of T1 + T2 for independent Student-t(nu) variables"""
    _require_positive("nu", nu)
    if math.isinf(nu):
        raise DomainError("two_t_sum_pdf needs a finite nu")

    log_const = (special.gammaln(0.5 * (nu + 1.0)) + special.gammaln(nu + 0.5)
                 - nu * math.log(2.0) - 0.5 * math.log(nu)
                 - 2.0 * special.gammaln(0.5 * nu) - special.gammaln(0.5 * nu + 1.0))
    t2 = t * t
    denom = 4.0 * nu + t2
    log_ratio = math.log(4.0 * nu) - math.log(denom)
    hyper = gauss_hypergeometric(0.5 * (nu + 1.0), 0.5 * (1.0 - nu), 0.5 * nu + 1.0, t2 / denom)
    return float(math.exp(log_const + 0.5 * (nu + 1.0) * log_ratio) * hyper)


# ============================================================================
# EXTREME VALUE LAWS
# ============================================================================

_EXP_LIMIT = 700.0


def frechet_cdf(x: float, nu: float) -> float:
    _require_positive("nu", nu)
    if x <= 0:
        return 0.0
    power = -nu * math.log(x)
    if power > _EXP_LIMIT:
        return 0.0
    return math.exp(-math.exp(power))


def frechet_pdf(x: float, nu: float) -> float:
    _require_positive("nu", nu)
    if x <= 0:
        return 0.0
    power = -nu * math.log(x)
    if power > _EXP_LIMIT:
        return 0.0
    return nu / x * math.exp(power - math.exp(power))


def frechet_quantile(p: float, nu: float) -> float:
    _require_probability(p)
    _require_positive("nu", nu)
    return (-math.log(p)) ** (-1.0 / nu)


def gumbel_cdf(x: float) -> float:
    if -x > _EXP_LIMIT:
        return 0.0
    return math.exp(-math.exp(-x))


def gumbel_pdf(x: float) -> float:
    if -x > _EXP_LIMIT:
        return 0.0
    return math.exp(-x - math.exp(-x))


def gumbel_quantile(p: float) -> float:
    _require_probability(p)
    return -math.log(-math.log(p))


# ============================================================================
# CHI-SQUARE
# ============================================================================

def chi2_cdf(x: float, nu: float) -> float:
    _require_positive("nu", nu)
    if x < 0:
        raise DomainError(f"x must be >= 0, got {x}")
    return float(special.chdtr(nu, x))
