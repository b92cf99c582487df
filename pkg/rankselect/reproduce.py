"""
Table and figure data as CSV sweeps over k-grids

Every sweep builds one task per grid cell and runs them through the shared
worker pool; rows come back in grid order.
"""
import csv
import logging
import math
import sys
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from rankselect.config import QuadratureSettings, RootSettings
from rankselect.errors import KTooSmallError
from rankselect.montecarlo import run_tasks
from rankselect.numerics import DEFAULT_QUADRATURE, DEFAULT_ROOT
from rankselect.single_stage import SingleStageProblem, s_from_rule, slope_sweep, solve_sample_size
from rankselect.two_stage import NuMode, TwoStageProblem, optimal_nu, solve_constants

logger = logging.getLogger(__name__)

K_GRID = [10, 100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000]
TABLE1_PS = [0.5, 0.9, 0.95, 0.99]
TABLE2_PS = [0.5, 0.95]
FIG1_ALPHAS = [0.0, 0.25, 0.5, 0.75]
FIG3_PS = [0.5, 0.9, 0.95]
DEFAULT_MAX_K = 1_000_000
DEFAULT_TABLE2_NUS = [5.0]
DEFAULT_FIG2_NUS = [2.0, 5.0, 10.0, 20.0]

TABLE1_HEADER = ["k", "p", "n_exact", "n_asymptotic", "rel_err"]
TABLE2_HEADER = ["k", "nu", "p", "h1", "h1_tilde", "h1_rel_err", "h2", "h2_tilde", "h2_rel_err",
                 "ratio_sq", "ratio_sq_limit"]
FIG1_HEADER = ["k", "alpha", "s", "p", "n_exact", "n_asymptotic", "rel_err", "slope", "slope_limit"]
FIG3_HEADER = ["k", "p", "nu_exact", "nu_approx", "h1_at_exact", "h1_tilde_at_approx", "mu_exact", "mu_tilde"]


# ============================================================================
# CSV OUTPUT
# ============================================================================

def format_cell(value) -> str:
    """9 significant digits, locale independent"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def write_rows(path: str, header: Sequence[str], rows: Iterable[Dict]):
    """Write rows as CSV to a file, or to stdout when path is '-'"""
    def emit(handle):
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(row[col]) for col in header])

    if path == "-":
        emit(sys.stdout)
        return

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        emit(handle)
    logger.info(f"✅ Wrote {target}")


def capped(ks: List[int], max_k: Optional[int]) -> List[int]:
    if max_k is None:
        return list(ks)
    skipped = [k for k in ks if k > max_k]
    if skipped:
        logger.info(f"Skipping k above cap {max_k}: {skipped}")
    return [k for k in ks if k <= max_k]


# ============================================================================
# CELLS
# ============================================================================

def table1_cell(k: int, p: float, rounding: str = "ceil",
                quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                root: RootSettings = DEFAULT_ROOT) -> Dict:
    s, c_limit = s_from_rule(k, "half-sqrt", rounding)
    problem = SingleStageProblem(k=k, s=s, delta=1.0, sigma2=1.0, p=p, c_exponent=c_limit,
                                 asymptotic_log="k")
    result = solve_sample_size(problem, quadrature, root)
    return {
        "k": k, "p": p,
        "n_exact": result.n_exact,
        "n_asymptotic": result.n_asymptotic,
        "rel_err": result.relative_error,
    }


def table2_cell(k: int, nu: float, p: float,
                quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
                root: RootSettings = DEFAULT_ROOT) -> Dict:
    h = solve_constants(TwoStageProblem(k=k, nu=nu, p=p), quadrature, root)
    return {
        "k": k, "nu": nu, "p": p,
        "h1": h.h1, "h1_tilde": h.h1_tilde, "h1_rel_err": (h.h1_tilde - h.h1) / h.h1,
        "h2": h.h2, "h2_tilde": h.h2_tilde, "h2_rel_err": (h.h2_tilde - h.h2) / h.h2,
        "ratio_sq": h.ratio_sq, "ratio_sq_limit": 2.0 ** (2.0 / nu),
    }


def fig1_cell(k: int, alpha: float, p: float,
              quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
              root: RootSettings = DEFAULT_ROOT) -> Dict:
    point = slope_sweep([k], alpha, p, asymptotic_log="k", quadrature=quadrature, root=root)[0]
    return point.model_dump()


def fig3_cell(k: int, p: float,
              quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
              root: RootSettings = DEFAULT_ROOT) -> Optional[Dict]:
    try:
        approx = optimal_nu(k, p, NuMode.APPROX, root=root)
        exact = optimal_nu(k, p, NuMode.EXACT, root=root, quadrature=quadrature)
    except KTooSmallError as e:
        logger.warning(f"⚠️ Skipping k={k}, p={p}: {e}")
        return None

    h_exact = exact.h_at_choice
    return {
        "k": k, "p": p,
        "nu_exact": exact.nu_exact,
        "nu_approx": approx.nu_approx,
        "h1_at_exact": h_exact,
        "h1_tilde_at_approx": approx.h_at_choice,
        "mu_exact": (k + 1) * h_exact * h_exact,
        "mu_tilde": approx.mu_tilde,
    }


# ============================================================================
# SWEEPS
# ============================================================================

def table1(max_k: Optional[int] = DEFAULT_MAX_K, workers: int = 1, rounding: str = "ceil",
           quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
           root: RootSettings = DEFAULT_ROOT) -> List[Dict]:
    tasks = [(k, p, rounding, quadrature, root) for k in capped(K_GRID, max_k) for p in TABLE1_PS]
    return run_tasks(table1_cell, tasks, workers)


def table2(nus: Optional[List[float]] = None, max_k: Optional[int] = DEFAULT_MAX_K,
           workers: int = 1, quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
           root: RootSettings = DEFAULT_ROOT) -> List[Dict]:
    nus = nus or DEFAULT_TABLE2_NUS
    tasks = [(k, nu, p, quadrature, root) for nu in nus for k in capped(K_GRID, max_k) for p in TABLE2_PS]
    return run_tasks(table2_cell, tasks, workers)


def fig1(max_k: Optional[int] = DEFAULT_MAX_K, workers: int = 1, p: float = 0.95,
         quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
         root: RootSettings = DEFAULT_ROOT) -> List[Dict]:
    tasks = [(k, alpha, p, quadrature, root) for alpha in FIG1_ALPHAS for k in capped(K_GRID, max_k)]
    return run_tasks(fig1_cell, tasks, workers)


def fig2(nus: Optional[List[float]] = None, max_k: Optional[int] = DEFAULT_MAX_K,
         workers: int = 1, quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
         root: RootSettings = DEFAULT_ROOT) -> List[Dict]:
    return table2(nus or DEFAULT_FIG2_NUS, max_k, workers, quadrature, root)


def fig3(max_k: Optional[int] = DEFAULT_MAX_K, workers: int = 1,
         quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
         root: RootSettings = DEFAULT_ROOT) -> List[Dict]:
    ks = [k for k in capped(K_GRID, max_k) if k >= 100]
    rows = run_tasks(fig3_cell, [(k, p, quadrature, root) for p in FIG3_PS for k in ks], workers)
    return [row for row in rows if row is not None]


SWEEPS = {
    "table1": (TABLE1_HEADER, table1),
    "table2": (TABLE2_HEADER, table2),
    "fig1": (FIG1_HEADER, fig1),
    "fig2": (TABLE2_HEADER, fig2),
    "fig3": (FIG3_HEADER, fig3),
}


def reproduce(target: str, path: str = "-", max_k: Optional[int] = DEFAULT_MAX_K,
              workers: int = 1, nus: Optional[List[float]] = None,
              quadrature: QuadratureSettings = DEFAULT_QUADRATURE,
              root: RootSettings = DEFAULT_ROOT):
    header, sweep = SWEEPS[target]
    logger.info(f"🚀 Reproducing {target} up to k={max_k} on {workers} workers")
    settings = {"quadrature": quadrature, "root": root}
    if target in ("table2", "fig2"):
        rows = sweep(nus, max_k, workers, **settings)
    else:
        rows = sweep(max_k, workers, **settings)
    if any(math.isnan(v) for row in rows for v in row.values() if isinstance(v, float)):
        logger.warning(f"⚠️ {target} contains undefined cells")
    write_rows(path, header, rows)
    return rows
