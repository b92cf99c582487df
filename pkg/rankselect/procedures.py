"""
Executable two-stage selection procedures over simulated Gaussian populations
"""
import logging
import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from rankselect.errors import AmbiguousBestError, DomainError, InfeasibleWeightsError
from rankselect.config import QuadratureSettings, RootSettings
from rankselect.montecarlo import ProportionEstimate, count_successes, stream_generator
from rankselect.numerics import DEFAULT_QUADRATURE, DEFAULT_ROOT
from rankselect.two_stage import Constant, TwoStageProblem, solve_h

logger = logging.getLogger(__name__)

MIN_REPLICATIONS = 100
# N c - 1 below this is a genuine infeasibility, above it is roundoff
_FEASIBILITY_SLACK = 1e-12


class Variant(str, Enum):
    DUDEWICZ_DALAL = "dudewicz_dalal"
    RINOTT = "rinott"


class PopulationSpec(BaseModel):
    means: List[float]
    variances: List[float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.means) != len(self.variances):
            raise ValueError("means and variances need equal lengths")
        if len(self.means) < 2:
            raise ValueError("need at least two populations")
        if any(v <= 0 for v in self.variances):
            raise ValueError("variances must be > 0")
        return self

    @property
    def size(self) -> int:
        return len(self.means)

    def best_index(self) -> int:
        """Index of the unique largest mean"""
        top = max(self.means)
        winners = [i for i, m in enumerate(self.means) if m == top]
        if len(winners) > 1:
            raise AmbiguousBestError(f"Largest mean {top} is shared by populations {winners}")
        return winners[0]


class ProcedureConfig(BaseModel):
    delta: float = Field(gt=0)
    n0: int = Field(ge=2)
    p: float = Field(gt=0, lt=1)
    h: float = Field(gt=0)
    variant: Variant = Variant.DUDEWICZ_DALAL

    @classmethod
    def solved(cls, populations: int, n0: int, p: float, delta: float,
               variant: Variant = Variant.DUDEWICZ_DALAL,
               quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
               root: RootSettings = DEFAULT_ROOT) -> "ProcedureConfig":
        """
        Config whose h solves the matching f1 (Dudewicz-Dalal) or f2 (Rinott) equation

        Raises:
            DomainError: p is reachable with h <= 0, so no procedure is needed
        """
        which = Constant.DD if variant == Variant.DUDEWICZ_DALAL else Constant.RINOTT
        problem = TwoStageProblem(k=populations - 1, nu=n0 - 1, p=p, delta=delta)
        result = solve_h(problem, which, quadrature, root)
        if result.nonpositive:
            raise DomainError(
                f"p={p} is already met at h={result.value:.6g} <= 0 for {populations} populations; "
                f"raise p or supply h"
            )
        h = result.value
        return cls(delta=delta, n0=n0, p=p, h=h, variant=variant)


class SelectionOutcome(BaseModel):
    chosen: int
    per_population_n: List[int]
    weighted_means: List[float]
    total_samples: int
    first_stage_variances: List[float]


class PcsEstimate(ProportionEstimate):
    pass


# ============================================================================
# WEIGHTS
# ============================================================================

def two_level_weights(n0, n, s2, delta: float, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stage-one weight u and stage-two weight v (vectorized)

    Solves n0 u + (n - n0) v = 1 and s2 (n0 u^2 + (n - n0) v^2) = (delta/h)^2,
    taking the root with the smaller u so that v stays non-negative.

    Raises:
        InfeasibleWeightsError: (delta/h)^2 < s2 / n
    """
    n0 = np.asarray(n0, dtype=float)
    n = np.asarray(n, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    m = n - n0
    if np.any(m < 1):
        raise DomainError("Second stage needs at least one observation")

    c = (delta / h) ** 2 / s2
    excess = n * c - 1.0
    if np.any(excess < -_FEASIBILITY_SLACK):
        raise InfeasibleWeightsError("Target variance below what n observations can reach")
    excess = np.maximum(excess, 0.0)

    u = 1.0 / n - np.sqrt(n0 * m * excess) / (n0 * n)
    v = (1.0 - n0 * u) / m
    return u, v


def compute_weights(n0: int, n_i: int, s2: float, delta: float, h: float) -> np.ndarray:
    """Per-observation weights for one population"""
    if n_i < n0 + 1:
        raise DomainError(f"N_i must be >= N0 + 1, got N_i={n_i}, N0={n0}")
    u, v = two_level_weights(n0, n_i, s2, delta, h)
    return np.concatenate([np.full(n0, float(u)), np.full(n_i - n0, float(v))])


def second_stage_size(s2, n0: int, delta: float, h: float):
    """N_i = max(N0 + 1, ceil((h/delta)^2 S_i^2))"""
    return np.maximum(n0 + 1, np.ceil((h / delta) ** 2 * np.asarray(s2, dtype=float))).astype(np.int64)


def lfc_spec(populations: int, delta: float, variances: Optional[List[float]] = None) -> PopulationSpec:
    """Least favorable configuration: the last population leads the others by delta"""
    means = [0.0] * (populations - 1) + [delta]
    return PopulationSpec(means=means, variances=variances or [1.0] * populations)


# ============================================================================
# PROCEDURE
# ============================================================================

def run_procedure(spec: PopulationSpec, config: ProcedureConfig, seed: int) -> SelectionOutcome:
    """One run of the selected procedure; draws for population i come from stream (seed, 0, i)"""
    sizes, estimates, variances = [], [], []
    for i, (mean, var) in enumerate(zip(spec.means, spec.variances)):
        rng = stream_generator(seed, 0, i)
        sd = math.sqrt(var)
        first = rng.normal(mean, sd, size=config.n0)
        s2 = float(np.var(first, ddof=1))
        n_i = int(second_stage_size(s2, config.n0, config.delta, config.h))
        second = rng.normal(mean, sd, size=n_i - config.n0)
        sample = np.concatenate([first, second])

        if config.variant == Variant.DUDEWICZ_DALAL:
            estimate = float(compute_weights(config.n0, n_i, s2, config.delta, config.h) @ sample)
        else:
            estimate = float(sample.mean())

        sizes.append(n_i)
        estimates.append(estimate)
        variances.append(s2)

    return SelectionOutcome(
        chosen=int(np.argmax(estimates)),
        per_population_n=sizes,
        weighted_means=estimates,
        total_samples=int(sum(sizes)),
        first_stage_variances=variances,
    )


def _selection_block(payload, seed: int, block: int, size: int) -> int:
    means, variances, n0, h, delta, variant, best = payload
    estimates = np.empty((size, len(means)))
    for i, (mean, var) in enumerate(zip(means, variances)):
        rng = stream_generator(seed, block, i)
        sd = math.sqrt(var)
        first = rng.normal(mean, sd, size=(size, n0))
        s2 = np.var(first, axis=1, ddof=1)
        n = second_stage_size(s2, n0, delta, h)
        m = n - n0
        # the stage-two observations share one weight, so only their sum matters
        second_sum = rng.normal(mean * m, sd * np.sqrt(m))
        first_sum = first.sum(axis=1)

        if variant == Variant.DUDEWICZ_DALAL:
            u, v = two_level_weights(n0, n, s2, delta, h)
            estimates[:, i] = u * first_sum + v * second_sum
        else:
            estimates[:, i] = (first_sum + second_sum) / n

    return int(np.count_nonzero(np.argmax(estimates, axis=1) == best))


def estimate_pcs(spec: PopulationSpec, config: ProcedureConfig, replications: int, seed: int,
                 workers: int = 1) -> PcsEstimate:
    """
    Fraction of replications that select the best population

    Replications run in fixed blocks with their own streams, so the result
    does not depend on the number of workers.
    """
    if replications < MIN_REPLICATIONS:
        raise DomainError(f"replications must be >= {MIN_REPLICATIONS}, got {replications}")
    best = spec.best_index()

    payload = (list(spec.means), list(spec.variances), config.n0, config.h,
               config.delta, config.variant, best)
    estimate = count_successes(_selection_block, payload, replications, seed, workers)
    logger.info(f"✅ {config.variant.value} P(CS) over {replications} runs: "
                f"{estimate.p_hat:.6f} ± {estimate.ci_half_width:.6f}")
    return PcsEstimate(**estimate.model_dump())
