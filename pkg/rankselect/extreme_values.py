"""
Extreme-value constants and limit laws of weighted partial maxima

Features:
- Normalizing constants for Gaussian (Gumbel) and Student-t (Frechet) maxima
- A closed grammar of threshold / group-size sequences whose limits are
  resolved from asymptotic expansions in k, ln k and ln ln k
- The limiting c.d.f. of sum_t alpha_t * M_t evaluated by nested quadrature
- A Monte Carlo estimate of the same probability at a finite k
"""
import logging
import math
from enum import Enum
from typing import Annotated, Callable, Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_serializer, model_validator

from rankselect.config import QuadratureSettings
from rankselect.errors import DomainError, UnsupportedDescriptorError
from rankselect.montecarlo import ProportionEstimate, count_successes, stream_generator
from rankselect.numerics import integrate_interval
from rankselect.special_functions import (
    StudentKernel,
    frechet_cdf,
    frechet_quantile,
    gumbel_cdf,
    gumbel_quantile,
    ln_gamma,
)

logger = logging.getLogger(__name__)

LN_4PI = math.log(4.0 * math.pi)
MAX_COMPONENTS = 4
CONVOLUTION_SETTINGS = QuadratureSettings(abs_tol=1e-8, rel_tol=1e-8, max_subdivisions=200)
_U_FLOOR = 1e-300
_U_CEIL = 1.0 - 1e-16


def convolution_settings(settings: QuadratureSettings) -> QuadratureSettings:
    """Run settings for nested convolutions, never tighter than CONVOLUTION_SETTINGS"""
    return settings.model_copy(update={
        "abs_tol": max(settings.abs_tol, CONVOLUTION_SETTINGS.abs_tol),
        "rel_tol": max(settings.rel_tol, CONVOLUTION_SETTINGS.rel_tol),
    })


class EvtFamily(str, Enum):
    GAUSSIAN_GUMBEL = "gaussian_gumbel"
    STUDENT_FRECHET = "student_frechet"
    TWO_T_SUM_FRECHET = "two_t_sum_frechet"


class EvtConstants(BaseModel):
    """Scale a_k and location b_k such that a_k (M_k - b_k) has a non-degenerate limit"""
    a_k: float = Field(gt=0)
    b_k: float
    family: EvtFamily


# ============================================================================
# NORMALIZING CONSTANTS
# ============================================================================

def gaussian_norm_constants(k: int) -> EvtConstants:
    if k < 2:
        raise DomainError(f"Gaussian normalizing constants need k >= 2, got {k}")
    log_k = math.log(k)
    root = math.sqrt(2.0 * log_k)
    b_k = root - (math.log(log_k) + LN_4PI) / (2.0 * root)
    return EvtConstants(a_k=root, b_k=b_k, family=EvtFamily.GAUSSIAN_GUMBEL)


def log_gamma_nu(nu: float) -> float:
    """ln of the Student-t tail constant: 1 - G_nu(t) ~ gamma_nu^nu t^-nu"""
    if not nu > 0:
        raise DomainError(f"nu must be > 0, got {nu}")
    return (ln_gamma(0.5 * (nu + 1.0)) - (1.0 - 0.5 * nu) * math.log(nu)
            - 0.5 * math.log(math.pi) - ln_gamma(0.5 * nu)) / nu


def gamma_nu(nu: float) -> float:
    return math.exp(log_gamma_nu(nu))


def student_norm_constants(k: int, nu: float, summed: bool = False) -> EvtConstants:
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    log_a = -log_gamma_nu(nu) - math.log(k) / nu
    family = EvtFamily.STUDENT_FRECHET
    if summed:
        log_a -= math.log(2.0) / nu
        family = EvtFamily.TWO_T_SUM_FRECHET
    return EvtConstants(a_k=math.exp(log_a), b_k=0.0, family=family)


def max_quantile(kernel: StudentKernel, m: int, u):
    """Quantile of the maximum of m i.i.d. draws from kernel"""
    u = np.asarray(u, dtype=float)
    return kernel.isf(-np.expm1(np.log(u) / m))


# ============================================================================
# ASYMPTOTIC EXPANSIONS
# ============================================================================

# (beta, gamma, eta) stands for k^beta (ln k)^gamma (ln ln k)^eta;
# lexicographic order on the tuple is the order of growth
Order = Tuple[float, float, float]
ZERO: Order = (0.0, 0.0, 0.0)


def _order(beta: float = 0.0, gamma: float = 0.0, eta: float = 0.0) -> Order:
    return (round(beta, 12), round(gamma, 12), round(eta, 12))


def _shift(a: Order, b: Order) -> Order:
    return _order(a[0] + b[0], a[1] + b[1], a[2] + b[2])


class Expansion:
    """Finite sum of monomials plus an O(remainder) term (None when exact)"""

    def __init__(self, terms: Optional[Dict[Order, float]] = None, remainder: Optional[Order] = None):
        self.terms = {o: c for o, c in (terms or {}).items() if c != 0.0}
        self.remainder = remainder

    @classmethod
    def monomial(cls, coef: float, order: Order = ZERO, remainder: Optional[Order] = None) -> "Expansion":
        return cls({order: coef}, remainder)

    def leading_order(self) -> Optional[Order]:
        orders = list(self.terms)
        if self.remainder is not None:
            orders.append(self.remainder)
        return max(orders) if orders else None

    def __add__(self, other: "Expansion") -> "Expansion":
        terms = dict(self.terms)
        for order, coef in other.terms.items():
            terms[order] = terms.get(order, 0.0) + coef
        remainders = [r for r in (self.remainder, other.remainder) if r is not None]
        return Expansion(terms, max(remainders) if remainders else None)

    def scale(self, factor: float) -> "Expansion":
        if factor == 0.0:
            return Expansion()
        return Expansion({o: factor * c for o, c in self.terms.items()}, self.remainder)

    def __mul__(self, other: "Expansion") -> "Expansion":
        terms: Dict[Order, float] = {}
        for o1, c1 in self.terms.items():
            for o2, c2 in other.terms.items():
                order = _shift(o1, o2)
                terms[order] = terms.get(order, 0.0) + c1 * c2

        remainders = []
        lead_self, lead_other = self.leading_order(), other.leading_order()
        if self.remainder is not None and lead_other is not None:
            remainders.append(_shift(self.remainder, lead_other))
        if other.remainder is not None and lead_self is not None:
            remainders.append(_shift(other.remainder, lead_self))
        return Expansion(terms, max(remainders) if remainders else None)

    def limit(self, rel_tol: float = 1e-10) -> float:
        """
        Limit as k -> infinity

        Raises:
            UnsupportedDescriptorError: the remainder hides the answer
        """
        floor = rel_tol * (1.0 + max((abs(c) for c in self.terms.values()), default=0.0))
        divergent = [(o, c) for o, c in self.terms.items() if o > ZERO and abs(c) > floor]
        if divergent:
            order, coef = max(divergent)
            if self.remainder is not None and self.remainder >= order:
                raise UnsupportedDescriptorError("Remainder term dominates the divergent part")
            return math.copysign(math.inf, coef)
        if self.remainder is not None and self.remainder >= ZERO:
            raise UnsupportedDescriptorError("Remainder term does not vanish")
        return self.terms.get(ZERO, 0.0)

    def __repr__(self):
        return f"Expansion({self.terms}, O{self.remainder})"


# ============================================================================
# SEQUENCE DESCRIPTORS
# ============================================================================

class ConstantTerm(BaseModel):
    kind: Literal["constant"] = "constant"
    value: float


class LogTerm(BaseModel):
    """coef * ln k"""
    kind: Literal["log"] = "log"
    coef: float


class PowerTerm(BaseModel):
    """coef * k^exponent"""
    kind: Literal["power"] = "power"
    coef: float
    exponent: float


class LocationTerm(BaseModel):
    """coef * b_n with n the size of the referenced group"""
    kind: Literal["location"] = "location"
    coef: float
    group: int = Field(ge=0)


class InverseScaleTerm(BaseModel):
    """coef / a_n with n the size of the referenced group"""
    kind: Literal["inverse_scale"] = "inverse_scale"
    coef: float
    group: int = Field(ge=0)


SequenceTerm = Annotated[
    Union[ConstantTerm, LogTerm, PowerTerm, LocationTerm, InverseScaleTerm],
    Field(discriminator="kind"),
]

GroupConstants = Callable[[int], EvtConstants]


class SequenceDescriptor(BaseModel):
    """A sequence in k written as a sum of grammar terms"""
    terms: List[SequenceTerm] = Field(default_factory=list)

    @classmethod
    def constant(cls, value: float) -> "SequenceDescriptor":
        return cls(terms=[ConstantTerm(value=value)])

    def referenced_groups(self) -> List[int]:
        return [t.group for t in self.terms if isinstance(t, (LocationTerm, InverseScaleTerm))]

    def evaluate(self, k: float, group_constants: Optional[GroupConstants] = None) -> float:
        """Numeric value at a finite k"""
        total = 0.0
        for term in self.terms:
            if isinstance(term, ConstantTerm):
                total += term.value
            elif isinstance(term, LogTerm):
                total += term.coef * math.log(k)
            elif isinstance(term, PowerTerm):
                total += term.coef * k ** term.exponent
            else:
                if group_constants is None:
                    raise DomainError("Group-referencing term used outside a group partition")
                constants = group_constants(term.group)
                if isinstance(term, LocationTerm):
                    total += term.coef * constants.b_k
                else:
                    total += term.coef / constants.a_k
        return total

    def expansion(self, atoms: Optional["_AtomTable"] = None) -> Expansion:
        total = Expansion()
        for term in self.terms:
            if isinstance(term, ConstantTerm):
                total = total + Expansion.monomial(term.value)
            elif isinstance(term, LogTerm):
                total = total + Expansion.monomial(term.coef, _order(gamma=1.0))
            elif isinstance(term, PowerTerm):
                total = total + Expansion.monomial(term.coef, _order(beta=term.exponent))
            else:
                if atoms is None:
                    raise UnsupportedDescriptorError("Group-referencing term without groups")
                if isinstance(term, LocationTerm):
                    total = total + atoms.location(term.group).scale(term.coef)
                else:
                    total = total + atoms.inverse_scale(term.group).scale(term.coef)
        return total

    def limit(self) -> float:
        return self.expansion().limit()


# ============================================================================
# GROUPS
# ============================================================================

class FiniteGroup(BaseModel):
    kind: Literal["finite"] = "finite"
    size: int = Field(ge=1)


class GrowingGroup(BaseModel):
    """Size floor(coef * k^exponent), or floor(coef * ln k) when log_growth"""
    kind: Literal["growing"] = "growing"
    coef: float = Field(gt=0)
    exponent: float = Field(1.0, gt=0, le=1)
    log_growth: bool = False


class RemainderGroup(BaseModel):
    """Whatever the other groups leave of k"""
    kind: Literal["remainder"] = "remainder"


GroupKind = Annotated[Union[FiniteGroup, GrowingGroup, RemainderGroup], Field(discriminator="kind")]


class SizeLaw(BaseModel):
    """Asymptotic size coef * k^exponent (or coef * ln k) with relative error O(rel_remainder)"""
    coef: float
    exponent: float
    log_growth: bool
    rel_remainder: Optional[Order]

    @property
    def order(self) -> Order:
        return _order(gamma=1.0) if self.log_growth else _order(beta=self.exponent)


class LimitCombinationSpec(BaseModel):
    groups: List[GroupKind] = Field(min_length=1)
    alpha: List[float]
    xi: SequenceDescriptor
    base_family: EvtFamily = EvtFamily.GAUSSIAN_GUMBEL
    nu: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if len(self.alpha) != len(self.groups):
            raise ValueError("alpha needs one weight per group")
        if self.base_family == EvtFamily.TWO_T_SUM_FRECHET:
            raise ValueError("base family must be gaussian_gumbel or student_frechet")
        if self.base_family == EvtFamily.STUDENT_FRECHET and (self.nu is None or math.isinf(self.nu)):
            raise ValueError("student_frechet needs a finite nu")
        if sum(isinstance(g, RemainderGroup) for g in self.groups) > 1:
            raise ValueError("at most one remainder group")
        for idx in self.xi.referenced_groups():
            if idx >= len(self.groups):
                raise ValueError(f"xi references unknown group {idx}")
        return self

    @property
    def T(self) -> int:
        return len(self.groups)

    @property
    def gaussian(self) -> bool:
        return self.base_family == EvtFamily.GAUSSIAN_GUMBEL

    def kernel(self) -> StudentKernel:
        return StudentKernel(math.inf if self.gaussian else self.nu)

    def is_infinite(self, t: int) -> bool:
        return not isinstance(self.groups[t], FiniteGroup)

    def sizes_at(self, k: int) -> List[int]:
        """Group sizes at a finite k; they must partition k"""
        sizes: List[Optional[int]] = []
        for group in self.groups:
            if isinstance(group, FiniteGroup):
                sizes.append(group.size)
            elif isinstance(group, GrowingGroup):
                raw = group.coef * (math.log(k) if group.log_growth else k ** group.exponent)
                sizes.append(int(math.floor(raw)))
            else:
                sizes.append(None)

        known = sum(s for s in sizes if s is not None)
        if None in sizes:
            sizes[sizes.index(None)] = k - known
        elif known != k:
            raise DomainError(f"Group sizes {sizes} do not partition k={k}")

        if any(s < 1 for s in sizes):
            raise DomainError(f"Every group needs at least one member at k={k}, got {sizes}")
        return sizes

    def constants_for_size(self, n: int) -> EvtConstants:
        if self.gaussian:
            return gaussian_norm_constants(n)
        return student_norm_constants(n, self.nu)

    def size_laws(self) -> Dict[int, SizeLaw]:
        laws: Dict[int, SizeLaw] = {}
        linear = 0.0
        others: List[Order] = []
        for t, group in enumerate(self.groups):
            if isinstance(group, FiniteGroup):
                others.append(_order(beta=-1.0))
            elif isinstance(group, GrowingGroup):
                law = SizeLaw(coef=group.coef, exponent=group.exponent, log_growth=group.log_growth,
                              rel_remainder=_order(gamma=-1.0) if group.log_growth else _order(beta=-group.exponent))
                laws[t] = law
                if not group.log_growth and group.exponent == 1.0:
                    linear += group.coef
                else:
                    others.append(_shift(law.order, _order(beta=-1.0)))

        for t, group in enumerate(self.groups):
            if isinstance(group, RemainderGroup):
                coef = 1.0 - linear
                if coef <= 1e-12:
                    raise UnsupportedDescriptorError("Remainder group does not grow linearly")
                laws[t] = SizeLaw(coef=coef, exponent=1.0, log_growth=False,
                                  rel_remainder=max(others) if others else None)
        return laws


class _AtomTable:
    """Expansions of a_n, b_n and 1/a_n for every group of a spec"""

    def __init__(self, spec: LimitCombinationSpec):
        self.spec = spec
        self.laws = spec.size_laws()

    def _finite_constants(self, t: int) -> EvtConstants:
        return self.spec.constants_for_size(self.spec.groups[t].size)

    def _gaussian_law(self, t: int) -> Tuple[float, float, Optional[Order]]:
        law = self.laws[t]
        if law.log_growth:
            raise UnsupportedDescriptorError("Gaussian groups must grow like a power of k")
        return law.exponent, law.coef, law.rel_remainder

    def scale(self, t: int) -> Expansion:
        if not self.spec.is_infinite(t):
            return Expansion.monomial(self._finite_constants(t).a_k)
        if self.spec.gaussian:
            beta, coef, rel = self._gaussian_law(t)
            root = math.sqrt(2.0 * beta)
            terms = {_order(gamma=0.5): root, _order(gamma=-0.5): math.log(coef) / root}
            return Expansion(terms, max(_order(gamma=-1.5), rel or _order(beta=-1.0)))

        law = self.laws[t]
        nu = self.spec.nu
        coef = math.exp(-log_gamma_nu(nu) - math.log(law.coef) / nu)
        order = _order(beta=-law.order[0] / nu, gamma=-law.order[1] / nu)
        remainder = _shift(order, law.rel_remainder) if law.rel_remainder is not None else None
        return Expansion.monomial(coef, order, remainder)

    def inverse_scale(self, t: int) -> Expansion:
        if not self.spec.is_infinite(t):
            return Expansion.monomial(1.0 / self._finite_constants(t).a_k)
        if self.spec.gaussian:
            beta, _, rel = self._gaussian_law(t)
            root = math.sqrt(2.0 * beta)
            return Expansion({_order(gamma=-0.5): 1.0 / root},
                             max(_order(gamma=-1.5), rel or _order(beta=-1.0)))

        law = self.laws[t]
        nu = self.spec.nu
        coef = math.exp(log_gamma_nu(nu) + math.log(law.coef) / nu)
        order = _order(beta=law.order[0] / nu, gamma=law.order[1] / nu)
        remainder = _shift(order, law.rel_remainder) if law.rel_remainder is not None else None
        return Expansion.monomial(coef, order, remainder)

    def location(self, t: int) -> Expansion:
        if not self.spec.is_infinite(t):
            return Expansion.monomial(self._finite_constants(t).b_k)
        if not self.spec.gaussian:
            return Expansion()

        beta, coef, rel = self._gaussian_law(t)
        root = math.sqrt(2.0 * beta)
        terms = {
            _order(gamma=0.5): root,
            _order(gamma=-0.5, eta=1.0): -1.0 / (2.0 * root),
            _order(gamma=-0.5): (math.log(coef) - 0.5 * (math.log(beta) + LN_4PI)) / root,
        }
        return Expansion(terms, max(_order(gamma=-1.5, eta=1.0), rel or _order(beta=-1.0)))


# ============================================================================
# LIMIT LAW
# ============================================================================

class LimitComponent(BaseModel):
    """One summand weight * Y of the limiting variable V"""
    law: Literal["gumbel", "frechet", "finite_max"]
    weight: float
    group: int
    nu: Optional[float] = None
    size: Optional[int] = None


class LimitLawResult(BaseModel):
    L: float = Field(ge=0.0, le=1.0)
    L_star: float
    path: Literal["finite_groups", "fixed_scale", "vanishing_scale", "refined_scale"]
    components: List[LimitComponent]

    @field_serializer("L_star")
    def _serialize_l_star(self, value: float):
        # JSON has no infinity
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value


def _component_cdf(comp: LimitComponent, y: float) -> float:
    if comp.law == "gumbel":
        return gumbel_cdf(y)
    if comp.law == "frechet":
        return frechet_cdf(y, comp.nu)
    kernel = StudentKernel(comp.nu if comp.nu is not None else math.inf)
    return float(np.exp(comp.size * kernel.log_cdf(y)))


def _component_quantile(comp: LimitComponent, u: float) -> float:
    u = min(max(u, _U_FLOOR), _U_CEIL)
    if comp.law == "gumbel":
        return gumbel_quantile(u)
    if comp.law == "frechet":
        return frechet_quantile(u, comp.nu)
    kernel = StudentKernel(comp.nu if comp.nu is not None else math.inf)
    return float(max_quantile(kernel, comp.size, u))


def _weighted_cdf(comp: LimitComponent, x: float) -> float:
    if comp.weight > 0:
        return _component_cdf(comp, x / comp.weight)
    return 1.0 - _component_cdf(comp, x / comp.weight)


def _weighted_quantile(comp: LimitComponent, u: float) -> float:
    if comp.weight > 0:
        return comp.weight * _component_quantile(comp, u)
    return comp.weight * _component_quantile(comp, 1.0 - u)


def limit_cdf_of_components(components: List[LimitComponent], x: float,
                    settings: QuadratureSettings = CONVOLUTION_SETTINGS) -> float:
    """
    P(sum of weighted independent components <= x)

    The first component is integrated out over its probability scale,
    u -> x - w * Q(u), so heavy tails never need a truncated grid.
    """
    if not components:
        return 1.0 if x >= 0 else 0.0

    first, rest = components[0], components[1:]
    if not rest:
        return _weighted_cdf(first, x)

    def integrand(u: float) -> float:
        return limit_cdf_of_components(rest, x - _weighted_quantile(first, u), settings)

    value, _ = integrate_interval(integrand, 0.0, 1.0, settings)
    return min(1.0, max(0.0, value))


def _growth_key(law: SizeLaw) -> Tuple[Order, float]:
    return (law.order, law.coef)


def limit_combo_cdf(spec: LimitCombinationSpec,
                    settings: QuadratureSettings = CONVOLUTION_SETTINGS) -> LimitLawResult:
    """
    Limit of P(sum_t alpha_t M_k^(t) <= xi_k) as k -> infinity

    Raises:
        UnsupportedDescriptorError: a limit in the recipe cannot be resolved
    """
    atoms = _AtomTable(spec)
    active = [t for t in range(spec.T) if spec.alpha[t] != 0.0]
    finite_active = [t for t in active if not spec.is_infinite(t)]
    infinite_active = [t for t in active if spec.is_infinite(t)]
    kernel_nu = None if spec.gaussian else spec.nu

    finite_components = [
        LimitComponent(law="finite_max", weight=spec.alpha[t], group=t, nu=kernel_nu,
                       size=spec.groups[t].size)
        for t in finite_active
    ]

    threshold = spec.xi.expansion(atoms)
    for t in infinite_active:
        threshold = threshold + atoms.location(t).scale(-spec.alpha[t])

    if not infinite_active:
        return _finish(threshold.limit(), finite_components, "finite_groups", settings)

    if spec.gaussian:
        l_star = threshold.limit()
        if math.isinf(l_star) or finite_active:
            return _finish(l_star, finite_components, "fixed_scale", settings)
        path = "refined_scale"
    else:
        path = "vanishing_scale"

    # t*: the largest growing active group, so every lambda_t stays finite
    star = max(infinite_active, key=lambda t: (_growth_key(atoms.laws[t]), -t))
    a_star = atoms.scale(star)
    l_star = (a_star * threshold).limit()

    lead_star = a_star.leading_order()
    components = []
    for t in infinite_active:
        a_t = atoms.scale(t)
        lead_t = a_t.leading_order()
        if lead_t == lead_star:
            lam = a_star.terms[lead_star] / a_t.terms[lead_t]
        elif (lead_star < lead_t) == (not spec.gaussian):
            lam = 0.0
        else:
            raise UnsupportedDescriptorError(f"Scale ratio for group {t} diverges")
        if lam == 0.0:
            continue
        law = "gumbel" if spec.gaussian else "frechet"
        components.append(LimitComponent(law=law, weight=spec.alpha[t] * lam, group=t, nu=kernel_nu))

    return _finish(l_star, components, path, settings)


def _finish(l_star: float, components: List[LimitComponent], path: str,
            settings: QuadratureSettings) -> LimitLawResult:
    if len(components) > MAX_COMPONENTS:
        raise DomainError(f"At most {MAX_COMPONENTS} limit components are supported, got {len(components)}")

    if l_star == -math.inf:
        value = 0.0
    elif l_star == math.inf:
        value = 1.0
    else:
        value = limit_cdf_of_components(components, l_star, settings)

    logger.debug(f"Limit law via {path}: L*={l_star}, L={value}")
    return LimitLawResult(L=value, L_star=l_star, path=path, components=components)


# ============================================================================
# MONTE CARLO
# ============================================================================

def _partial_maxima_block(payload, seed: int, block: int, size: int) -> int:
    alpha, sizes, nu, threshold = payload
    kernel = StudentKernel(nu)
    total = np.zeros(size)
    for t, (weight, n) in enumerate(zip(alpha, sizes)):
        if weight == 0.0:
            continue
        rng = stream_generator(seed, block, t)
        u = np.maximum(rng.random(size), _U_FLOOR)
        total += weight * max_quantile(kernel, n, u)
    return int(np.count_nonzero(total <= threshold))


def mc_partial_maxima(spec: LimitCombinationSpec, k: int, reps: int, seed: int,
                      workers: int = 1) -> ProportionEstimate:
    """
    Empirical P(sum_t alpha_t M_k^(t) <= xi_k) at a finite k

    Maxima are drawn exactly through the quantile of the maximum, so the
    cost does not grow with k.
    """
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    sizes = spec.sizes_at(k)
    threshold = spec.xi.evaluate(k, lambda t: spec.constants_for_size(sizes[t]))
    nu = math.inf if spec.gaussian else spec.nu

    payload = (list(spec.alpha), sizes, nu, threshold)
    estimate = count_successes(_partial_maxima_block, payload, reps, seed, workers)
    logger.info(f"✅ Partial maxima at k={k}: p_hat={estimate.p_hat:.6f} ± {estimate.ci_half_width:.6f}")
    return estimate
