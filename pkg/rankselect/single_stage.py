"""
Single-stage selection of the s best of k populations with known common variance

Correct-selection probability under the least favorable configuration,
the continuous sample size that attains a target probability and its
logarithmic asymptotic approximation.
"""
import logging
import math
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from rankselect.config import QuadratureSettings, RootSettings
from rankselect.errors import DomainError, NoSolutionError
from rankselect.extreme_values import max_quantile
from rankselect.montecarlo import ProportionEstimate, count_successes, stream_generator
from rankselect.numerics import (
    DEFAULT_QUADRATURE,
    DEFAULT_ROOT,
    SolveResult,
    integrate_interval,
    solve_increasing,
)
from rankselect.special_functions import GAUSSIAN

logger = logging.getLogger(__name__)

SRule = Literal["one", "half-sqrt", "power"]
Rounding = Literal["ceil", "nearest"]
AsymptoticLog = Literal["k_minus_s", "k"]

# probability cut-offs for the integration window and its breakpoints
_TAIL = 1e-15
_MARKS = (1e-12, 1e-6, 0.5, 1.0 - 1e-6)


class SingleStageProblem(BaseModel):
    k: int = Field(ge=2)
    s: int = Field(ge=1)
    delta: float = Field(gt=0)
    sigma2: float = Field(gt=0)
    p: float = Field(gt=0, lt=1)
    # limiting exponent of s_k; defaults to ln s / ln(k - s) at this k
    c_exponent: Optional[float] = Field(None, ge=0, le=1)
    # ln(k - s) or ln k in the asymptotic size; the two agree to first order
    asymptotic_log: AsymptoticLog = "k_minus_s"

    @model_validator(mode="after")
    def _check_s(self):
        if self.s > self.k - self.s:
            raise ValueError(f"s must satisfy 1 <= s <= k - s, got s={self.s}, k={self.k}")
        return self

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def exponent(self) -> float:
        if self.c_exponent is not None:
            return self.c_exponent
        if self.s == 1:
            return 0.0
        return math.log(self.s) / math.log(self.k - self.s)


class SampleSizeResult(BaseModel):
    n_exact: float = Field(gt=0)
    n_asymptotic: float = Field(ge=0)
    relative_error: float
    diagnostics: SolveResult


class SlopePoint(BaseModel):
    """One k of a slope sweep with s_k = ceil(coef * k^alpha)"""
    k: int
    alpha: float
    s: int
    p: float
    n_exact: float
    n_asymptotic: float
    rel_err: float
    slope: float
    slope_limit: float


# ============================================================================
# CONFIGURATION AND PROBABILITY
# ============================================================================

def lfc(problem: SingleStageProblem, c: float = 0.0) -> List[float]:
    """Least favorable means in sorted order: the top s sit exactly delta above the rest"""
    return [c + problem.delta * (i > problem.k - problem.s) for i in range(1, problem.k + 1)]


def s_from_rule(k: int, rule: SRule = "half-sqrt", rounding: Rounding = "ceil",
                coef: float = 0.5, alpha: float = 0.5) -> Tuple[int, float]:
    """
    Number of selected populations for k under a growth rule

    Returns:
        (s, limiting exponent C of the rule)
    """
    if rule == "one":
        return 1, 0.0

    if rule == "half-sqrt":
        coef, alpha = 0.5, 0.5
    raw = coef * k ** alpha
    s = math.ceil(raw) if rounding == "ceil" else int(round(raw))
    return max(1, min(s, k // 2)), alpha


def known_variance_factor(c_exponent: float) -> float:
    """Leading factor 2(1 + sqrt C)^2 of n* sigma^-2 delta^2 / ln k"""
    return 2.0 * (1.0 + math.sqrt(c_exponent)) ** 2


def max_sum_cdf(x: float, m_outer: int, m_inner: int,
                settings: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """
    P(M_outer + M_inner <= x) for independent maxima of standard Gaussians

    The inner maximum is integrated against its density; Phi^m is taken
    in the log domain so that m up to 10^7 stays accurate.
    """
    lo = float(max_quantile(GAUSSIAN, m_inner, _TAIL))
    hi = min(float(max_quantile(GAUSSIAN, m_inner, 1.0 - _TAIL)),
             x - float(max_quantile(GAUSSIAN, m_outer, _TAIL)))
    if hi <= lo:
        return 0.0

    marks = [float(max_quantile(GAUSSIAN, m_inner, u)) for u in _MARKS]
    marks += [x - float(max_quantile(GAUSSIAN, m_outer, u)) for u in _MARKS]
    log_m = math.log(m_inner)

    def integrand(t: float) -> float:
        log_value = (m_outer * float(GAUSSIAN.log_cdf(x - t)) + log_m
                     + (m_inner - 1) * float(GAUSSIAN.log_cdf(t)) + float(GAUSSIAN.log_pdf(t)))
        return math.exp(log_value)

    value, _ = integrate_interval(integrand, lo, hi, settings, points=marks)
    return min(1.0, max(0.0, value))


def pcs(problem: SingleStageProblem, n: float,
        settings: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """Correct-selection probability with n observations per population"""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    shift = problem.delta * math.sqrt(n) / problem.sigma
    return max_sum_cdf(shift, problem.k - problem.s, problem.s, settings)


# ============================================================================
# SAMPLE SIZE
# ============================================================================

def asymptotic_sample_size(problem: SingleStageProblem) -> float:
    scale = problem.sigma2 / problem.delta ** 2
    count = problem.k if problem.asymptotic_log == "k" else problem.k - problem.s
    return known_variance_factor(problem.exponent) * scale * math.log(count)


def solve_sample_size(problem: SingleStageProblem,
                      quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                      root: RootSettings = DEFAULT_ROOT) -> SampleSizeResult:
    """
    Smallest continuous n with pcs(n) = p

    Raises:
        NoSolutionError: even n = 0 already reaches p
    """
    floor = pcs(problem, 0.0, quadrature)
    if floor >= problem.p:
        raise NoSolutionError(
            f"pcs at n=0 is {floor:.6g} >= p={problem.p}; any sample size works",
            boundary_value=floor,
        )

    diagnostics = solve_increasing(
        lambda n: pcs(problem, n, quadrature), problem.p, 1.0, 2.0,
        expand_lower=lambda n: n / 2.0,
        expand_upper=lambda n: n * 2.0,
        settings=root,
    )
    if diagnostics.value < 1.0:
        logger.warning(f"⚠️ Sample size below one observation: n={diagnostics.value:.6g}")
        diagnostics = diagnostics.model_copy(update={"nonpositive": True})

    n_exact = diagnostics.value
    n_asym = asymptotic_sample_size(problem)
    logger.debug(f"Solved n for k={problem.k}, s={problem.s}, p={problem.p}: {n_exact:.9g}")
    return SampleSizeResult(
        n_exact=n_exact,
        n_asymptotic=n_asym,
        relative_error=(n_asym - n_exact) / n_exact,
        diagnostics=diagnostics,
    )


def slope_sweep(ks: List[int], alpha: float, p: float, coef: float = 1.0,
                delta: float = 1.0, sigma2: float = 1.0, asymptotic_log: AsymptoticLog = "k_minus_s",
                quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                root: RootSettings = DEFAULT_ROOT) -> List[SlopePoint]:
    """n_exact / ln k along s_k = ceil(coef * k^alpha) next to its limiting slope"""
    limit = known_variance_factor(alpha) * sigma2 / delta ** 2
    points = []
    for k in ks:
        s, _ = s_from_rule(k, "power", "ceil", coef=coef, alpha=alpha)
        problem = SingleStageProblem(k=k, s=s, delta=delta, sigma2=sigma2, p=p, c_exponent=alpha,
                                     asymptotic_log=asymptotic_log)
        result = solve_sample_size(problem, quadrature, root)
        points.append(SlopePoint(
            k=k, alpha=alpha, s=s, p=p,
            n_exact=result.n_exact,
            n_asymptotic=result.n_asymptotic,
            rel_err=result.relative_error,
            slope=result.n_exact / math.log(k),
            slope_limit=limit,
        ))
    return points


# ============================================================================
# MONTE CARLO
# ============================================================================

def _selection_block(payload, seed: int, block: int, size: int) -> int:
    k, s, shift = payload
    rest = max_quantile(GAUSSIAN, k - s, np.maximum(stream_generator(seed, block, 0).random(size), 1e-300))
    best = max_quantile(GAUSSIAN, s, np.maximum(stream_generator(seed, block, 1).random(size), 1e-300))
    # the lowest of the s best sits at shift - best by symmetry
    return int(np.count_nonzero(shift - best > rest))


def simulate_pcs(problem: SingleStageProblem, n: float, replications: int, seed: int,
                 workers: int = 1) -> ProportionEstimate:
    """
    Empirical correct-selection frequency under the least favorable configuration

    Sample means are standardized, so only the two group extremes are drawn,
    each exactly through the quantile of its maximum.
    """
    shift = problem.delta * math.sqrt(n) / problem.sigma
    estimate = count_successes(_selection_block, (problem.k, problem.s, shift), replications, seed, workers)
    logger.info(f"✅ Simulated pcs k={problem.k}, s={problem.s}, n={n}: {estimate.p_hat:.6f}")
    return estimate
