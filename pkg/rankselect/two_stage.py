"""
Two-stage constants for selecting the best of k + 1 normal populations

Features:
- f1 / f2 integral equations in h and their monotone solvers
- Frechet asymptotics h_tilde and the Gaussian (nu = inf) surrogates
- Optimal first-stage degrees of freedom, approximate and exact
- Expected total sample size, deterministic and chi-square exact
"""
import logging
import math
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field
from scipy import special

from rankselect.config import QuadratureSettings, RootSettings
from rankselect.errors import DomainError, KTooSmallError, NumericalError
from rankselect.extreme_values import SequenceDescriptor, gamma_nu
from rankselect.montecarlo import stream_generator
from rankselect.numerics import (
    DEFAULT_QUADRATURE,
    DEFAULT_ROOT,
    SolveResult,
    additive_step,
    integrate_line,
    solve_increasing,
)
from rankselect.special_functions import (
    StudentKernel,
    chi2_cdf,
    digamma,
    frechet_quantile,
    normal_quantile,
)

logger = logging.getLogger(__name__)

# k * ln G(y) levels that locate the mass of G^k
_MASS_LEVELS = (-40.0, -5.0, -1.0, -0.1, -1e-3, -1e-6)
# tail probabilities whose quantiles cut the line; geometric in |t| for heavy tails
_TAIL_CUTS = (1e-1, 1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12)
# pair-sum tails are raised to the k-th power, so they need relative accuracy only
_TAIL_ABS_TOL = 1e-300
# slack on h1 <= h2 and below which h1 counts as zero
_ORDER_TOL = 1e-8


class Constant(str, Enum):
    DD = "dd"
    RINOTT = "rinott"


class NuMode(str, Enum):
    APPROX = "approx"
    EXACT = "exact"


class SampleSizeMode(str, Enum):
    DETERMINISTIC = "deterministic"
    CHI_SQUARE_EXACT = "chi_square_exact"


class TwoStageProblem(BaseModel):
    k: int = Field(ge=1)
    nu: float = Field(ge=1)
    p: float = Field(gt=0, lt=1)
    delta: float = Field(1.0, gt=0)

    @property
    def n0(self) -> float:
        return self.nu + 1.0

    def kernel(self) -> StudentKernel:
        return StudentKernel(self.nu)


class HConstants(BaseModel):
    h1: float
    h2: float
    h1_tilde: float
    h2_tilde: float
    ratio_sq: Optional[float] = None

    @property
    def rinott_bracket(self):
        """Certified range [h1, h2] for Rinott's exact constant"""
        return (self.h1, self.h2)


class NuChoice(BaseModel):
    nu_approx: float = Field(gt=1)
    nu_exact: Optional[float] = None
    h_at_choice: float
    mu_tilde: float
    mode: NuMode

    @property
    def n0(self) -> int:
        chosen = self.nu_exact if self.mode == NuMode.EXACT else self.nu_approx
        return math.ceil(chosen) + 1


class NonuniformityPoint(BaseModel):
    nu: float
    h2: float
    h2_tilde: float
    gaussian_limit: float


class SampleCheckRow(BaseModel):
    k: int
    nu: float
    nu_star: float
    n_tilde: float
    n_tilde_star: float
    ratio: float
    star_normalized: float


class SampleCheckReport(BaseModel):
    rows: List[SampleCheckRow]
    min_tail_ratio: float
    tolerance: float
    # min_tail_ratio >= 1 - tolerance
    passed: bool


# ============================================================================
# INTEGRAL EQUATIONS
# ============================================================================

def _tail_marks(kernel: StudentKernel, centre: float = 0.0) -> List[float]:
    """Breakpoints at centre +- kernel quantiles of decreasing tail probability"""
    marks = [centre]
    for q in _TAIL_CUTS:
        x = float(kernel.isf(q))
        marks += [centre - x, centre + x]
    return marks


def _tail_settings(settings: QuadratureSettings) -> QuadratureSettings:
    return settings.model_copy(update={"abs_tol": _TAIL_ABS_TOL})


def f1(h: float, k: int, nu: float, settings: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """P(max of k t_nu variables minus an independent one <= h)"""
    kernel = StudentKernel(nu)
    marks = [float(kernel.isf(-math.expm1(level / k))) - h for level in _MASS_LEVELS]
    marks += _tail_marks(kernel)

    def integrand(t: float) -> float:
        return math.exp(k * float(kernel.log_cdf(t + h)) + float(kernel.log_pdf(t)))

    value, _ = integrate_line(integrand, marks, settings)
    return min(1.0, max(0.0, value))


def pair_sum_sf(h: float, nu: float, settings: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """P(T1 + T2 > h) for h >= 0, accurate in relative terms far out"""
    if h < 0:
        raise DomainError(f"pair_sum_sf needs h >= 0, got {h}")
    kernel = StudentKernel(nu)
    if kernel.gaussian:
        return float(special.ndtr(-h / math.sqrt(2.0)))

    def integrand(t: float) -> float:
        return float(kernel.sf(t + h) * kernel.pdf(t))

    marks = _tail_marks(kernel) + _tail_marks(kernel, -h) + [-0.5 * h]
    value, _ = integrate_line(integrand, marks, _tail_settings(settings))
    return min(0.5, max(0.0, value))


def pair_sum_cdf(h: float, nu: float, settings: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """P(T1 + T2 <= h) for independent Student-t(nu) variables"""
    if h >= 0:
        return 1.0 - pair_sum_sf(h, nu, settings)
    return pair_sum_sf(-h, nu, settings)


def f2(h: float, k: int, nu: float, settings: QuadratureSettings = DEFAULT_QUADRATURE) -> float:
    """P(max of k independent pair sums T1 + T2 <= h)"""
    if h >= 0:
        return math.exp(k * math.log1p(-pair_sum_sf(h, nu, settings)))
    tail = pair_sum_sf(-h, nu, settings)
    if tail <= 0.0:
        return 0.0
    return math.exp(k * math.log(tail))


# ============================================================================
# ASYMPTOTICS
# ============================================================================

def h_tilde(problem: TwoStageProblem, which: Constant = Constant.DD) -> float:
    """Frechet approximation gamma_nu k^(1/nu) q_p (times 2^(1/nu) for Rinott)"""
    if math.isinf(problem.nu):
        raise DomainError("h_tilde needs a finite nu")
    value = gamma_nu(problem.nu) * problem.k ** (1.0 / problem.nu) * frechet_quantile(problem.p, problem.nu)
    if which == Constant.RINOTT:
        value *= 2.0 ** (1.0 / problem.nu)
    return value


def h_gaussian_asymptotic(k: int, which: Constant = Constant.DD) -> float:
    if k < 2:
        raise DomainError(f"Gaussian asymptotics need k >= 2, got {k}")
    value = math.sqrt(2.0 * math.log(k))
    if which == Constant.RINOTT:
        value *= math.sqrt(2.0)
    return value


def gaussian_limit_h2(k: int, p: float) -> float:
    """Limit of h2 as nu -> inf: sqrt(2) * Phi^-1(p^(1/k))"""
    return math.sqrt(2.0) * normal_quantile(p ** (1.0 / k))


# ============================================================================
# SOLVERS
# ============================================================================

def _seed(problem: TwoStageProblem, which: Constant) -> float:
    if math.isinf(problem.nu):
        return h_gaussian_asymptotic(problem.k, which) if problem.k >= 2 else 1.0
    return h_tilde(problem, which)


def _solve(problem: TwoStageProblem, which: Constant, equation,
           settings: RootSettings) -> SolveResult:
    seed = _seed(problem, which)
    result = solve_increasing(
        equation, problem.p, seed - 1.0, seed + 1.0,
        expand_lower=additive_step(1.0, -1.0),
        expand_upper=additive_step(1.0, 1.0),
        settings=settings,
    )
    if result.value <= 0.0:
        result = result.model_copy(update={"nonpositive": True})
    logger.debug(f"Solved {which.value} h for k={problem.k}, nu={problem.nu}, p={problem.p}: {result.value:.9g}")
    return result


def solve_h1(problem: TwoStageProblem, quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
             root: RootSettings = DEFAULT_ROOT) -> SolveResult:
    return _solve(problem, Constant.DD, lambda h: f1(h, problem.k, problem.nu, quadrature), root)


def solve_h2(problem: TwoStageProblem, quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
             root: RootSettings = DEFAULT_ROOT) -> SolveResult:
    return _solve(problem, Constant.RINOTT, lambda h: f2(h, problem.k, problem.nu, quadrature), root)


def solve_h(problem: TwoStageProblem, which: Constant = Constant.DD,
            quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
            root: RootSettings = DEFAULT_ROOT) -> SolveResult:
    if which == Constant.RINOTT:
        return solve_h2(problem, quadrature, root)
    return solve_h1(problem, quadrature, root)


def solve_constants(problem: TwoStageProblem, quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                    root: RootSettings = DEFAULT_ROOT) -> HConstants:
    """
    Both constants with their Frechet approximations

    Raises:
        NumericalError: the solved h1 exceeds h2 beyond solver accuracy
    """
    h1 = solve_h1(problem, quadrature, root).value
    h2 = solve_h2(problem, quadrature, root).value
    if h1 > h2 + _ORDER_TOL * max(1.0, abs(h2)):
        logger.error(f"❌ h1={h1:.9g} exceeds h2={h2:.9g} at k={problem.k}, nu={problem.nu}, p={problem.p}")
        raise NumericalError(f"h1={h1:.9g} > h2={h2:.9g}: constants are not certified")

    return HConstants(
        h1=h1,
        h2=h2,
        h1_tilde=h_tilde(problem, Constant.DD),
        h2_tilde=h_tilde(problem, Constant.RINOTT),
        ratio_sq=(h2 / h1) ** 2 if h1 > _ORDER_TOL else None,
    )


def nonuniformity_curve(k: int, p: float, nus: List[float],
                        quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                        root: RootSettings = DEFAULT_ROOT) -> List[NonuniformityPoint]:
    """h2 against its Frechet approximation along nu, next to the Gaussian limit"""
    limit = gaussian_limit_h2(k, p)
    points = []
    for nu in nus:
        problem = TwoStageProblem(k=k, nu=nu, p=p)
        points.append(NonuniformityPoint(
            nu=nu,
            h2=solve_h2(problem, quadrature, root).value,
            h2_tilde=h_tilde(problem, Constant.RINOTT),
            gaussian_limit=limit,
        ))
    return points


# ============================================================================
# OPTIMAL DEGREES OF FREEDOM
# ============================================================================

def nu_first_order_condition(nu: float, k: int, p: float) -> float:
    """Derivative condition whose root minimizes (nu + 2) against h_tilde(nu)^2"""
    log_gamma_ratio = special.gammaln(0.5 * nu) - special.gammaln(0.5 * (nu + 1.0))
    return (-2.0 - 2.0 * math.log(-k / (math.sqrt(math.pi) * math.log(p)))
            + nu + 2.0 * math.log(nu) + 2.0 * log_gamma_ratio
            + nu * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu)))


def _no_lower_root(nu: float) -> float:
    raise KTooSmallError(f"nu + 2 already exceeds h1(nu)^2 at nu={nu}")


def optimal_nu(k: int, p: float, mode: NuMode = NuMode.APPROX,
               variances: Optional[List[float]] = None, delta: float = 1.0,
               root: RootSettings = DEFAULT_ROOT,
               quadrature: QuadratureSettings = DEFAULT_QUADRATURE) -> NuChoice:
    """
    First-stage degrees of freedom minimizing the expected total sample size

    Raises:
        KTooSmallError: the first-order condition has no root above nu = 1
    """
    if k < 2:
        raise DomainError(f"optimal_nu needs k >= 2, got {k}")
    if nu_first_order_condition(1.0, k, p) >= 0:
        raise KTooSmallError(f"k={k} is too small for p={p}: no optimal nu above 1")

    approx = solve_increasing(
        lambda nu: nu_first_order_condition(nu, k, p), 0.0, 1.0, 2.0,
        expand_lower=_no_lower_root,
        expand_upper=lambda nu: 2.0 * nu,
        settings=root,
    ).value

    variance_total = sum(variances) if variances is not None else float(k + 1)
    if mode == NuMode.APPROX:
        h = h_tilde(TwoStageProblem(k=k, nu=approx, p=p), Constant.DD)
        exact = None
    else:
        exact = solve_increasing(
            lambda nu: nu + 2.0 - solve_h1(TwoStageProblem(k=k, nu=nu, p=p), quadrature, root).value ** 2,
            0.0, 1.0, 2.0,
            expand_lower=_no_lower_root,
            expand_upper=lambda nu: 2.0 * nu,
            settings=root,
        ).value
        h = solve_h1(TwoStageProblem(k=k, nu=exact, p=p), quadrature, root).value

    logger.info(f"✅ Optimal nu for k={k}, p={p}: approx={approx:.6g}, exact={exact}")
    return NuChoice(
        nu_approx=approx,
        nu_exact=exact,
        h_at_choice=h,
        mu_tilde=h * h * variance_total / delta ** 2,
        mode=mode,
    )


# ============================================================================
# EXPECTED SAMPLE SIZE
# ============================================================================

def _chi_square_term(a: float, beta: float, sigma2: float, nu: float) -> float:
    if beta == 0.0:
        return a
    c = nu * a / (beta * sigma2)
    return a * chi2_cdf(c, nu) + beta * sigma2 * (1.0 - chi2_cdf(c, nu + 2.0))


def expected_sample_size(problem: TwoStageProblem, variances: List[float],
                         which: Constant = Constant.DD,
                         mode: SampleSizeMode = SampleSizeMode.CHI_SQUARE_EXACT,
                         h: Optional[float] = None,
                         quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                         root: RootSettings = DEFAULT_ROOT) -> float:
    """
    Expected total observations over all k + 1 populations

    DETERMINISTIC plugs sigma_i into the second-stage rule;
    CHI_SQUARE_EXACT takes the expectation over the first-stage variance.
    Rounding up to whole observations is ignored.
    """
    if len(variances) != problem.k + 1:
        raise DomainError(f"Need {problem.k + 1} variances, got {len(variances)}")
    if any(v <= 0 for v in variances):
        raise DomainError("Variances must be > 0")
    if h is None:
        h = solve_h(problem, which, quadrature, root).value

    a = problem.n0 + 1.0
    beta = (h / problem.delta) ** 2
    if mode == SampleSizeMode.DETERMINISTIC:
        return float(sum(max(a, beta * v) for v in variances))
    return float(sum(_chi_square_term(a, beta, v, problem.nu) for v in variances))


def approx_optimal_sample_check(k_grid: List[int], sigma2: float, delta: float, p: float,
                                nu_sequence: Optional[SequenceDescriptor] = None,
                                draws: int = 10_000, seed: int = 0,
                                tail_from: Optional[int] = None,
                                tolerance: float = 0.05) -> SampleCheckReport:
    """
    Compare approximate sample sizes along a divergent nu_k with the optimal choice

    Both sizes use the same chi-square stream per k, so nu_k equal to the
    optimum gives a ratio of exactly one. nu_sequence=None uses the optimum.
    """
    if not 0.0 <= tolerance < 1.0:
        raise DomainError(f"tolerance must be in [0, 1), got {tolerance}")
    if 2.0 * math.e * sigma2 <= delta ** 2:
        raise DomainError("Needs 2 e sigma^2 > delta^2")
    if nu_sequence is not None and nu_sequence.limit() != math.inf:
        raise DomainError("nu_sequence must diverge to +inf")

    def mean_size(nu: float, k: int, rng: np.random.Generator) -> float:
        s2 = sigma2 * rng.chisquare(nu, size=draws) / nu
        h = h_tilde(TwoStageProblem(k=k, nu=nu, p=p), Constant.DD)
        return float(np.mean(np.maximum(nu + 2.0, h * h * s2 / delta ** 2)))

    rows = []
    for idx, k in enumerate(k_grid):
        nu_star = optimal_nu(k, p).nu_approx
        nu = nu_sequence.evaluate(k) if nu_sequence is not None else nu_star
        if nu < 1:
            raise DomainError(f"nu_k={nu} below 1 at k={k}")

        n_tilde = mean_size(nu, k, stream_generator(seed, idx))
        n_star = mean_size(nu_star, k, stream_generator(seed, idx))
        h_star = h_tilde(TwoStageProblem(k=k, nu=nu_star, p=p), Constant.DD)
        rows.append(SampleCheckRow(
            k=k, nu=nu, nu_star=nu_star,
            n_tilde=n_tilde, n_tilde_star=n_star,
            ratio=n_tilde / n_star,
            star_normalized=n_star / (h_star * h_star * sigma2 / delta ** 2),
        ))

    tail = [r.ratio for r in rows if tail_from is None or r.k >= tail_from]
    min_tail = min(tail) if tail else math.nan
    passed = bool(min_tail >= 1.0 - tolerance)
    if not passed:
        logger.warning(f"⚠️ Tail ratio {min_tail:.6g} below 1 - {tolerance}")
    return SampleCheckReport(rows=rows, min_tail_ratio=min_tail, tolerance=tolerance, passed=passed)
