"""
Command-line interface for rankselect

Usage:
    python -m rankselect.cli solve-n --k 1000 --s-rule half-sqrt --p 0.95
    python -m rankselect.cli solve-h --k 100 --nu 5 --p 0.95
    python -m rankselect.cli reproduce table1 --max-k 100000 --output table1.csv

Exit codes: 0 success, 2 bad arguments or domain error, 3 numerical failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from rankselect import __version__
from rankselect.config import RunConfig, get_run_config
from rankselect.errors import DomainError, NumericalError
from rankselect.extreme_values import LimitCombinationSpec, convolution_settings, limit_combo_cdf, mc_partial_maxima
from rankselect.procedures import PopulationSpec, ProcedureConfig, Variant, estimate_pcs, lfc_spec
from rankselect.reproduce import DEFAULT_MAX_K, SWEEPS, reproduce, write_rows
from rankselect.single_stage import SingleStageProblem, s_from_rule, solve_sample_size
from rankselect.two_stage import (
    Constant,
    NuMode,
    SampleSizeMode,
    TwoStageProblem,
    expected_sample_size,
    optimal_nu,
    solve_constants,
    solve_h,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_solve_n(args, config: RunConfig) -> Dict:
    c_exponent = args.c_exponent
    if args.s is not None:
        s = args.s
    else:
        s, rule_c = s_from_rule(args.k, args.s_rule, args.rounding)
        c_exponent = rule_c if c_exponent is None else c_exponent

    problem = SingleStageProblem(k=args.k, s=s, delta=args.delta, sigma2=args.sigma2,
                                 p=args.p, c_exponent=c_exponent, asymptotic_log=args.asymptotic_log)
    result = solve_sample_size(problem, config.quadrature, config.root)
    return {
        "header": ["k", "s", "p", "n_exact", "n_asymptotic", "rel_err"],
        "rows": [{"k": args.k, "s": s, "p": args.p, "n_exact": result.n_exact,
                  "n_asymptotic": result.n_asymptotic, "rel_err": result.relative_error}],
    }


def cmd_solve_h(args, config: RunConfig) -> Dict:
    problem = TwoStageProblem(k=args.k, nu=args.nu, p=args.p)
    if args.which == "both":
        h = solve_constants(problem, config.quadrature, config.root)
        header = ["k", "nu", "p", "h1", "h2", "h1_tilde", "h2_tilde", "ratio_sq"]
        row = {"k": args.k, "nu": args.nu, "p": args.p, **h.model_dump()}
        return {"header": header, "rows": [row]}

    which = Constant(args.which)
    result = solve_h(problem, which, config.quadrature, config.root)
    header = ["k", "nu", "p", "which", "h", "nonpositive"]
    row = {"k": args.k, "nu": args.nu, "p": args.p, "which": which.value,
           "h": result.value, "nonpositive": result.nonpositive}
    return {"header": header, "rows": [row]}


def cmd_optimal_nu(args, config: RunConfig) -> Dict:
    choice = optimal_nu(args.k, args.p, NuMode(args.mode), root=config.root, quadrature=config.quadrature)
    header = ["k", "p", "mode", "nu_approx", "nu_exact", "h", "mu_tilde", "n0"]
    row = {"k": args.k, "p": args.p, "mode": choice.mode.value, "nu_approx": choice.nu_approx,
           "nu_exact": choice.nu_exact,
           "h": choice.h_at_choice, "mu_tilde": choice.mu_tilde, "n0": choice.n0}
    return {"header": header, "rows": [row]}


def cmd_expected_n(args, config: RunConfig) -> Dict:
    problem = TwoStageProblem(k=args.k, nu=args.nu, p=args.p, delta=args.delta)
    variances = args.variances or [1.0] * (args.k + 1)
    which = Constant(args.which)
    h = args.h if args.h is not None else solve_h(problem, which, config.quadrature, config.root).value
    total = expected_sample_size(problem, variances, which, SampleSizeMode(args.mode), h=h)
    header = ["k", "nu", "p", "which", "mode", "h", "expected_n"]
    row = {"k": args.k, "nu": args.nu, "p": args.p, "which": which.value,
           "mode": args.mode, "h": h, "expected_n": total}
    return {"header": header, "rows": [row]}


def cmd_simulate(args, config: RunConfig) -> Dict:
    if args.spec:
        spec = PopulationSpec.model_validate_json(Path(args.spec).read_text())
    else:
        spec = lfc_spec(args.lfc, args.delta, args.variances)

    variant = Variant(args.variant)
    if args.h is not None:
        proc = ProcedureConfig(delta=args.delta, n0=args.n0, p=args.p, h=args.h, variant=variant)
    else:
        proc = ProcedureConfig.solved(spec.size, args.n0, args.p, args.delta, variant,
                                      config.quadrature, config.root)

    estimate = estimate_pcs(spec, proc, config.mc.replications, config.mc.seed, config.mc.workers)
    header = ["variant", "h", "p", "p_hat", "ci_half_width", "replications", "seed"]
    row = {"variant": variant.value, "h": proc.h, "p": args.p, **estimate.model_dump()}
    return {"header": header, "rows": [row]}


def cmd_limit_law(args, config: RunConfig) -> Dict:
    spec = LimitCombinationSpec.model_validate_json(Path(args.spec).read_text())
    result = limit_combo_cdf(spec, convolution_settings(config.quadrature))
    row = {"L": result.L, "L_star": result.L_star, "path": result.path}
    header = ["L", "L_star", "path"]
    if args.k is not None:
        estimate = mc_partial_maxima(spec, args.k, config.mc.replications, config.mc.seed, config.mc.workers)
        row.update({"k": args.k, "p_hat": estimate.p_hat, "ci_half_width": estimate.ci_half_width})
        header += ["k", "p_hat", "ci_half_width"]
    return {"header": header, "rows": [row]}


def cmd_reproduce(args, config: RunConfig) -> Dict:
    reproduce(args.target, config.output.path, args.max_k, config.mc.workers, args.nu,
              quadrature=config.quadrature, root=config.root)
    return {}


def cmd_serve(args, config: RunConfig) -> Dict:
    import uvicorn

    logger.info(f"🚀 Serving rankselect API on {args.host}:{args.port}")
    uvicorn.run("rankselect.main:app", host=args.host, port=args.port, log_level="info")
    return {}


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rankselect", description="Ranking and selection constants")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="flat key=value config file (else $RANKSELECT_CONFIG)")
    parser.add_argument("--output", help="CSV output path, '-' for stdout")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--replications", type=int)
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-n", help="single-stage sample size")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--s", type=int)
    p.add_argument("--s-rule", choices=["one", "half-sqrt", "power"], default="one")
    p.add_argument("--rounding", choices=["ceil", "nearest"], default="ceil")
    p.add_argument("--c-exponent", type=float)
    p.add_argument("--asymptotic-log", choices=["k_minus_s", "k"], default="k_minus_s",
                   help="log term of the asymptotic size: ln(k - s) or ln k")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.set_defaults(handler=cmd_solve_n)

    p = sub.add_parser("solve-h", help="two-stage constants h1 / h2")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--which", choices=["dd", "rinott", "both"], default="both")
    p.set_defaults(handler=cmd_solve_h)

    p = sub.add_parser("optimal-nu", help="first-stage degrees of freedom")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--mode", choices=[m.value for m in NuMode], default=NuMode.APPROX.value)
    p.set_defaults(handler=cmd_optimal_nu)

    p = sub.add_parser("expected-n", help="expected total sample size")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--h", type=float, help="use this h instead of solving for it")
    p.add_argument("--variances", type=_float_list)
    p.add_argument("--which", choices=[c.value for c in Constant], default=Constant.DD.value)
    p.add_argument("--mode", choices=[m.value for m in SampleSizeMode],
                   default=SampleSizeMode.CHI_SQUARE_EXACT.value)
    p.set_defaults(handler=cmd_expected_n)

    p = sub.add_parser("simulate", help="Monte Carlo P(CS) of a two-stage procedure")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--spec", help="JSON file with means and variances")
    source.add_argument("--lfc", type=int, metavar="POPULATIONS", help="least favorable configuration")
    p.add_argument("--variances", type=_float_list)
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.DUDEWICZ_DALAL.value)
    p.add_argument("--n0", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--h", type=float)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("limit-law", help="limit of P(sum alpha_t M_t <= xi_k)")
    p.add_argument("--spec", required=True, help="JSON limit-combination spec")
    p.add_argument("--k", type=int, help="also estimate the probability at this k by Monte Carlo")
    p.set_defaults(handler=cmd_limit_law)

    p = sub.add_parser("reproduce", help="table and figure data as CSV")
    p.add_argument("target", choices=sorted(SWEEPS))
    p.add_argument("--max-k", type=int, default=DEFAULT_MAX_K)
    p.add_argument("--nu", type=_float_list, help="degrees of freedom for table2 / fig2")
    p.set_defaults(handler=cmd_reproduce)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        config = get_run_config(args.config, {
            "output_path": args.output,
            "workers": args.workers,
            "seed": args.seed,
            "replications": args.replications,
        })
        result = args.handler(args, config)
        if result:
            write_rows(config.output.path, result["header"], result["rows"])
        return EXIT_OK
    except (DomainError, ValidationError) as e:
        logger.error(f"❌ {e}")
        return EXIT_BAD_INPUT
    except NumericalError as e:
        logger.error(f"❌ Numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
