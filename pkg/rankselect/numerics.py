"""
Quadrature and monotone root-solving helpers shared by the solvers
"""
import logging
import math
from typing import Callable, Iterable, List, Optional, Tuple

from pydantic import BaseModel
from scipy import integrate, optimize

from rankselect.config import QuadratureSettings, RootSettings
from rankselect.errors import BracketError, NonConvergenceError, QuadratureError

logger = logging.getLogger(__name__)

DEFAULT_QUADRATURE = QuadratureSettings()
DEFAULT_ROOT = RootSettings()

# tolerance slack accepted when QUADPACK flags roundoff but reports a small error
_ROUNDOFF_SLACK = 100.0


class SolveResult(BaseModel):
    """Root of a monotone equation with solver diagnostics"""
    value: float
    residual: float
    iterations: int
    function_calls: int
    converged: bool
    bracket: Tuple[float, float]
    nonpositive: bool = False


# ============================================================================
# QUADRATURE
# ============================================================================

def integrate_interval(func: Callable[[float], float], lower: float, upper: float,
                       settings: QuadratureSettings = DEFAULT_QUADRATURE,
                       points: Optional[List[float]] = None) -> Tuple[float, float]:
    """
    Adaptive quadrature on one interval (either end may be infinite)

    Returns:
        (value, estimated absolute error)

    Raises:
        QuadratureError: QUADPACK could not meet the tolerance
    """
    if lower == upper:
        return 0.0, 0.0

    kwargs = dict(epsabs=settings.abs_tol, epsrel=settings.rel_tol,
                  limit=settings.max_subdivisions, full_output=1)
    if points and math.isfinite(lower) and math.isfinite(upper):
        inside = sorted(p for p in points if lower < p < upper)
        if inside:
            kwargs["points"] = inside

    result = integrate.quad(func, lower, upper, **kwargs)
    value, abserr = result[0], result[1]

    if not math.isfinite(value):
        raise QuadratureError(f"Non-finite integral on [{lower}, {upper}]")

    if len(result) > 3:
        allowed = _ROUNDOFF_SLACK * max(settings.abs_tol, settings.rel_tol * abs(value))
        if abserr > allowed:
            raise QuadratureError(
                f"Quadrature on [{lower}, {upper}] missed tolerance: "
                f"error estimate {abserr:.3e} ({result[3]})"
            )
        logger.debug(f"Quadrature on [{lower}, {upper}] accepted with warning: {result[3]}")

    return value, abserr


def integrate_line(func: Callable[[float], float], breakpoints: Iterable[float],
                   settings: QuadratureSettings = DEFAULT_QUADRATURE,
                   lower: float = -math.inf, upper: float = math.inf) -> Tuple[float, float]:
    """
    Integrate over [lower, upper] split at the given breakpoints

    Each piece is integrated separately so that sharp features sitting at the
    breakpoints never fall inside a single QUADPACK panel.
    """
    cuts = sorted({float(b) for b in breakpoints if math.isfinite(b) and lower < b < upper})
    edges = [lower] + cuts + [upper]

    total, error = 0.0, 0.0
    for left, right in zip(edges[:-1], edges[1:]):
        value, abserr = integrate_interval(func, left, right, settings)
        total += value
        error += abserr
    return total, error


# ============================================================================
# ROOT FINDING
# ============================================================================

def solve_increasing(func: Callable[[float], float], target: float,
                     lower: float, upper: float,
                     expand_lower: Callable[[float], float],
                     expand_upper: Callable[[float], float],
                     settings: RootSettings = DEFAULT_ROOT,
                     max_expansions: int = 200) -> SolveResult:
    """
    Solve func(x) = target for a non-decreasing func

    The initial [lower, upper] is widened with the expand callables until it
    brackets the target, then handed to Brent's method.

    Raises:
        BracketError: no sign change within max_expansions steps
        NonConvergenceError: Brent's method did not converge
    """
    calls = 0

    def g(x: float) -> float:
        nonlocal calls
        calls += 1
        return func(x) - target

    g_lo = g(lower)
    steps = 0
    while g_lo > 0:
        if steps >= max_expansions:
            raise BracketError(f"Could not bracket target {target} from below (reached {lower})")
        upper, lower = lower, expand_lower(lower)
        g_lo = g(lower)
        steps += 1

    g_hi = g(upper)
    steps = 0
    while g_hi < 0:
        if steps >= max_expansions:
            raise BracketError(f"Could not bracket target {target} from above (reached {upper})")
        lower, g_lo = upper, g_hi
        upper = expand_upper(upper)
        g_hi = g(upper)
        steps += 1

    logger.debug(f"Bracket [{lower:.6g}, {upper:.6g}] after {calls} evaluations")

    if g_lo == 0:
        return SolveResult(value=lower, residual=0.0, iterations=0, function_calls=calls,
                           converged=True, bracket=(lower, upper))
    if g_hi == 0:
        return SolveResult(value=upper, residual=0.0, iterations=0, function_calls=calls,
                           converged=True, bracket=(lower, upper))

    try:
        root, info = optimize.brentq(g, lower, upper, xtol=1e-14, maxiter=settings.max_iter,
                                     full_output=True, disp=False)
    except (ValueError, RuntimeError) as e:
        raise NonConvergenceError(f"Brent's method failed on [{lower}, {upper}]: {e}") from e

    if not info.converged:
        raise NonConvergenceError(f"Brent's method stopped after {info.iterations} iterations")

    residual = g(root)
    if abs(residual) > settings.tol:
        logger.warning(f"⚠️ Root {root:.9g} has residual {residual:.3e} above tolerance {settings.tol:.1e}")

    return SolveResult(
        value=float(root),
        residual=float(residual),
        iterations=int(info.iterations),
        function_calls=calls,
        converged=bool(abs(residual) <= settings.tol),
        bracket=(float(lower), float(upper)),
    )


def additive_step(step: float, sign: float) -> Callable[[float], float]:
    """Expansion that moves by a step which doubles on every call"""
    state = {"step": step}

    def expand(x: float) -> float:
        moved = x + sign * state["step"]
        state["step"] *= 2.0
        return moved

    return expand

