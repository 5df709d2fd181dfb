import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from rich.console import Console
from rich.markup import escape
from rich.table import Table

from smoothloc import harness
from smoothloc.config import ExperimentConfig, load_config, validate_config
from smoothloc.errors import SmoothLocError
from smoothloc.estimatorhd import ReportHd
from smoothloc.trace import ExperimentTracer, report_table, stderr_console
from smoothloc.util import parse_float_list


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smoothloc",
        description="Smoothed maximum-likelihood location estimation and its experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="one-dimensional two-stage estimate on simulated data")
    est.add_argument("--model", required=True, help="model spec, e.g. laplace(0,1)")
    est.add_argument("--n", type=int, required=True)
    est.add_argument("--delta", type=float, required=True)
    est.add_argument("--seed", type=int, required=True)
    est.add_argument("--r", type=float, default=None, help="override the r* schedule")
    est.add_argument("--lambda-true", type=float, default=0.0)
    est.add_argument("--out", type=Path, default=None, help="write CSV here")

    hd = sub.add_parser("estimate-hd", help="high-dimensional estimate on simulated data")
    hd.add_argument("--model", required=True, help="model spec, e.g. product(laplace(0,1)^4)")
    hd.add_argument("--n", type=int, required=True)
    hd.add_argument("--delta", type=float, required=True)
    hd.add_argument("--r", type=float, required=True)
    hd.add_argument("--eta", type=float, default=0.25)
    hd.add_argument("--seed", type=int, required=True)
    hd.add_argument("--lambda-true", type=float, default=0.0)
    hd.add_argument("--out", type=Path, default=None)

    fisher = sub.add_parser("fisher", help="smoothed Fisher information over a grid of radii")
    fisher.add_argument("--model", required=True)
    fisher.add_argument("--r-grid", type=parse_float_list, required=True, help="comma-separated radii")
    fisher.add_argument("--out", type=Path, default=None)

    bench = sub.add_parser("bench", help="run an experiment from a config file")
    bench.add_argument("experiment", choices=sorted(harness.DRIVERS))
    bench.add_argument("--config", type=Path, required=True)
    bench.add_argument("--out", type=Path, default=None)
    bench.add_argument("--threads", type=int, default=None)
    return parser


def _emit(table: harness.CsvTable, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(table.to_csv())
    else:
        table.write(out)


def run_estimate(args: argparse.Namespace) -> None:
    cfg = validate_config(
        {
            "experiment": "estimate",
            "model": args.model,
            "n": args.n,
            "delta": args.delta,
            "seed": args.seed,
            "r": args.r,
            "lambda_true": args.lambda_true,
        }
    )
    report, table = harness.run_estimate(cfg)
    if args.out is not None:
        table.write(args.out)
    Console().print(report_table(f"estimate: {cfg.model}", report.model_dump()))


def run_estimate_hd(args: argparse.Namespace) -> None:
    cfg = validate_config(
        {
            "experiment": "estimate-hd",
            "model": args.model,
            "n": args.n,
            "delta": args.delta,
            "r": args.r,
            "eta": args.eta,
            "seed": args.seed,
            "lambda_true": args.lambda_true,
        }
    )
    report, table = harness.run_estimate_hd(cfg)
    if args.out is not None:
        table.write(args.out)
    Console().print(table_summary(report, cfg))


def table_summary(report: ReportHd, cfg: ExperimentConfig) -> Table:
    return report_table(
        f"estimate-hd: {cfg.model}",
        {
            "lambda_hat": ", ".join(f"{v:.6g}" for v in report.lambda_hat),
            "lambda_initial": ", ".join(f"{v:.6g}" for v in report.lambda_initial),
            "m_norm_error_bound": report.m_norm_error_bound,
            "deviation_bound": report.deviation_bound,
            "d_eff_T": report.d_eff_T,
            "d_eff_sigma": report.d_eff_sigma,
            "n_used_local": report.n_used_local,
            "n_used_init": report.n_used_init,
            "initial_estimator": report.initial_estimator,
        },
    )


def run_bench(args: argparse.Namespace) -> None:
    update: dict[str, object] = {"experiment": args.experiment}
    if args.threads is not None:
        update["threads"] = args.threads
    if args.out is not None:
        update["out"] = str(args.out)
    cfg = load_config(args.config, update)
    table = harness.DRIVERS[cfg.experiment](cfg, ExperimentTracer())
    _emit(table, Path(cfg.out) if cfg.out is not None else None)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "estimate":
            run_estimate(args)
        elif args.command == "estimate-hd":
            run_estimate_hd(args)
        elif args.command == "fisher":
            _emit(harness.run_fisher_sweep(args.model, args.r_grid), args.out)
        else:
            run_bench(args)
    except SmoothLocError as e:
        stderr_console.print(f"[bold red]error:[/bold red] {escape(str(e))}")
        return 1
    return 0
