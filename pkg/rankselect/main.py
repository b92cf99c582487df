"""
FastAPI service for rankselect
Solvers, simulations and limit laws behind JSON endpoints
"""
import logging
import os
from datetime import datetime
from typing import List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from rankselect import __version__
from rankselect.config import IS_PRODUCTION, get_run_config
from rankselect.errors import DomainError, NumericalError
from rankselect.extreme_values import LimitCombinationSpec, LimitLawResult, convolution_settings, limit_combo_cdf
from rankselect.procedures import PcsEstimate, PopulationSpec, ProcedureConfig, Variant, estimate_pcs
from rankselect.single_stage import SampleSizeResult, SingleStageProblem, solve_sample_size
from rankselect.two_stage import (
    Constant,
    HConstants,
    NuChoice,
    NuMode,
    SampleSizeMode,
    TwoStageProblem,
    expected_sample_size,
    optimal_nu,
    solve_constants,
    solve_h,
)

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MAX_API_REPLICATIONS = 1_000_000

# Initialize FastAPI app
app = FastAPI(
    title="rankselect API",
    description="Sample sizes and constants for ranking and selection procedures",
    version=__version__,
)

# ============================================================================
# REQUEST/RESPONSE MODELS
# ============================================================================

class HealthResponse(BaseModel):
    status: str
    timestamp: str
    version: str
    production: bool


class OptimalNuRequest(BaseModel):
    k: int = Field(ge=2)
    p: float = Field(gt=0, lt=1)
    mode: NuMode = NuMode.APPROX
    variances: Optional[List[float]] = None
    delta: float = Field(1.0, gt=0)


class ExpectedSampleSizeRequest(BaseModel):
    problem: TwoStageProblem
    variances: List[float]
    which: Constant = Constant.DD
    mode: SampleSizeMode = SampleSizeMode.CHI_SQUARE_EXACT
    h: Optional[float] = None


class ExpectedSampleSizeResponse(BaseModel):
    h: float
    expected_n: float


class SimulateRequest(BaseModel):
    spec: PopulationSpec
    n0: int = Field(ge=2)
    p: float = Field(gt=0, lt=1)
    delta: float = Field(1.0, gt=0)
    variant: Variant = Variant.DUDEWICZ_DALAL
    h: Optional[float] = Field(None, gt=0)
    replications: Optional[int] = Field(None, ge=100, le=MAX_API_REPLICATIONS)
    seed: Optional[int] = Field(None, ge=0)


class SimulateResponse(BaseModel):
    h: float
    estimate: PcsEstimate


def _run(label: str, func):
    """Run a computation and map library errors onto HTTP status codes"""
    try:
        return func()
    except HTTPException:
        raise
    except DomainError as e:
        logger.warning(f"⚠️ Rejected {label}: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except NumericalError as e:
        logger.error(f"❌ Numerical failure in {label}: {e}")
        raise HTTPException(status_code=500, detail=f"Numerical failure: {e}")

# ============================================================================
# ROUTES
# ============================================================================

@app.get("/", response_model=HealthResponse)
def health_check():
    """Health check endpoint"""
    return {
        "status": "healthy",
        "timestamp": datetime.now().isoformat(),
        "version": __version__,
        "production": IS_PRODUCTION,
    }


@app.post("/api/solve-n", response_model=SampleSizeResult)
def solve_n(problem: SingleStageProblem):
    logger.info(f"📥 solve-n k={problem.k}, s={problem.s}, p={problem.p}")
    config = get_run_config()
    return _run("solve-n", lambda: solve_sample_size(problem, config.quadrature, config.root))


@app.post("/api/solve-h", response_model=HConstants)
def solve_h_constants(problem: TwoStageProblem):
    logger.info(f"📥 solve-h k={problem.k}, nu={problem.nu}, p={problem.p}")
    config = get_run_config()
    return _run("solve-h", lambda: solve_constants(problem, config.quadrature, config.root))


@app.post("/api/optimal-nu", response_model=NuChoice)
def choose_nu(request: OptimalNuRequest):
    logger.info(f"📥 optimal-nu k={request.k}, p={request.p}, mode={request.mode.value}")
    config = get_run_config()
    return _run("optimal-nu", lambda: optimal_nu(request.k, request.p, request.mode,
                                                  request.variances, request.delta, config.root,
                                                  config.quadrature))


@app.post("/api/expected-n", response_model=ExpectedSampleSizeResponse)
def expected_n(request: ExpectedSampleSizeRequest):
    config = get_run_config()

    def compute():
        h = request.h if request.h is not None else solve_h(request.problem, request.which,
                                                            config.quadrature, config.root).value
        total = expected_sample_size(request.problem, request.variances, request.which, request.mode, h=h)
        return {"h": h, "expected_n": total}

    return _run("expected-n", compute)


@app.post("/api/simulate", response_model=SimulateResponse)
def simulate(request: SimulateRequest):
    config = get_run_config()
    replications = request.replications or config.mc.replications
    seed = request.seed if request.seed is not None else config.mc.seed
    logger.info(f"📥 simulate {request.variant.value} with {replications} replications")

    def compute():
        if request.h is not None:
            proc = ProcedureConfig(delta=request.delta, n0=request.n0, p=request.p,
                                   h=request.h, variant=request.variant)
        else:
            proc = ProcedureConfig.solved(request.spec.size, request.n0, request.p,
                                          request.delta, request.variant, config.quadrature, config.root)
        estimate = estimate_pcs(request.spec, proc, replications, seed)
        return {"h": proc.h, "estimate": estimate}

    return _run("simulate", compute)


@app.post("/api/limit-law", response_model=LimitLawResult)
def limit_law(spec: LimitCombinationSpec):
    logger.info(f"📥 limit-law with {spec.T} groups")
    config = get_run_config()
    return _run("limit-law", lambda: limit_combo_cdf(spec, convolution_settings(config.quadrature)))

# ============================================================================
# RUN SERVER
# ============================================================================

if __name__ == "__main__":
    import uvicorn

    port = int(os.environ.get("PORT", 8000))

    uvicorn.run(
        "rankselect.main:app",
        host="0.0.0.0",
        port=port,
        log_level="info"
    )
