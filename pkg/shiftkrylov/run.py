import argparse
import logging
import sys

import humanize
import rich
from omegaconf import OmegaConf
from rich.status import Status
from rich.table import Table

from . import cost_model
from .experiment import run_cost, run_diagnostics, run_solve, run_sweep
from .problems import QCD_SMALL_SET, ProblemError, fetch_qcd
from .utils import serialize
from .utils.config import _load_cfg, prep_cfg, print_cfg, save_run

logger = logging.getLogger("shiftkrylov")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

# flag name -> config key
_FLAG_KEYS = {
    "method": "solver.method",
    "m": "solver.m",
    "k": "solver.k",
    "eps": "solver.eps",
    "max_cycles": "solver.max_cycles",
    "shift_convention": "solver.shift_convention",
    "matrix": "problem.matrix",
    "synthetic": "problem.synthetic",
    "kappa_c": "problem.kappa_c",
    "save_matrix": "problem.save_matrix",
    "precond": "precond.kind",
    "seed": "seed",
    "out": "out",
    "repeats": "timing.repeats",
    "log_level": "log_level",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftkrylov",
        description="Shifted GMRES and shifted recycled GMRES benchmarks",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--method", choices=["sgmres", "srgmres", "seq-gmres", "seq-rgmres"])
        p.add_argument("--m", type=int, help="cycle length")
        p.add_argument("--k", type=int, help="recycle space dimension")
        p.add_argument("--eps", type=float, help="relative residual tolerance")
        p.add_argument("--max-cycles", type=int)
        p.add_argument("--shifts", help="comma list, complex as a+bi")
        p.add_argument("--matrix", help="Matrix Market file or a directory of QCD matrices")
        p.add_argument("--synthetic", help="nx,peclet,rotation")
        p.add_argument("--kappa-c", type=float)
        p.add_argument("--save-matrix", help="write the (first) problem matrix here")
        p.add_argument("--precond", choices=["none", "ilu0"])
        p.add_argument("--seed", type=int)
        p.add_argument("--shift-convention", choices=["relative", "absolute"])
        p.add_argument("--parallel-shift-projections", action="store_true", default=None)
        p.add_argument("--verify", action="store_true", default=None,
                       help="compute explicit residuals at the end of every solve")
        p.add_argument("--repeats", type=int, help="timing repeats; the median is reported")
        p.add_argument("--out", help="report / table path")
        p.add_argument("--log-level")
        p.add_argument("overrides", nargs="*", help="extra config overrides as key=value")

    common(sub.add_parser("solve", help="solve shifted families and report matvecs"))
    sweep = sub.add_parser("sweep", help="run a parameter sweep, one CSV row per point")
    common(sweep)
    sweep.add_argument("--mode", choices=["mk", "m_plus_k", "marginal", "shift_magnitude"])
    cost = sub.add_parser("cost", help="evaluate the FLOP cost model")
    cost.add_argument("--param", choices=list(cost_model.SWEEP_PARAMS))
    cost.add_argument("--values", help="comma list of parameter values")
    cost.add_argument("--out")
    cost.add_argument("overrides", nargs="*")
    common(sub.add_parser("diagnose", help="per-cycle residual decomposition"))
    fetch = sub.add_parser("fetch-qcd", help="download the QCD test matrices")
    fetch.add_argument("--names", help=f"comma list (default: {','.join(QCD_SMALL_SET)})")
    fetch.add_argument("--dest")
    fetch.add_argument("--kappa-c", type=float)
    fetch.add_argument("overrides", nargs="*")
    return parser


def args_to_cfg(args: argparse.Namespace):
    cfg = _load_cfg(use_cli_args=False)
    dotlist = []
    for flag, key in _FLAG_KEYS.items():
        if (value := getattr(args, flag, None)) is not None:
            dotlist.append(f"{key}={value}")
    if getattr(args, "parallel_shift_projections", None):
        dotlist.append("solver.parallel_shift_projections=true")
    if getattr(args, "verify", None):
        dotlist.append("solver.verify_residuals=true")
    if getattr(args, "mode", None):
        dotlist.append(f"sweep.mode={args.mode}")
    if getattr(args, "param", None):
        dotlist.append(f"cost.param={args.param}")
    if getattr(args, "dest", None):
        dotlist.append(f"fetch.dest={args.dest}")
    dotlist.extend(args.overrides)
    cfg = OmegaConf.merge(cfg, OmegaConf.from_dotlist(dotlist))

    # list-valued flags are assigned directly so that strings like 1+2i survive
    if getattr(args, "shifts", None):
        cfg.shifts = [t.strip() for t in args.shifts.split(",") if t.strip()]
    if getattr(args, "values", None):
        cfg.cost.values = [int(float(t)) for t in args.values.split(",") if t.strip()]
    if getattr(args, "names", None):
        cfg.fetch.names = [t.strip() for t in args.names.split(",") if t.strip()]
    return prep_cfg(cfg)


def _matvec_table(report) -> Table:
    table = Table(title=f"{report.method} ({report.exp_name})")
    for col in ("family", "systems", "matvecs", "setup", "precond", "converged", "time"):
        table.add_column(col)
    for solve in report.solves:
        table.add_row(
            solve.label,
            str(len(solve.systems)),
            str(solve.total_matvecs),
            str(solve.setup_matvecs),
            str(solve.total_precond_applies),
            "yes" if solve.converged else "[red]no",
            humanize.naturaldelta(solve.wall_time, minimum_unit="milliseconds"),
        )
    return table


def _solve(cfg) -> int:
    with Status(f"Solving with {cfg.solver.method} ..."):
        report = run_solve(cfg)
    path = save_run(cfg, report=report)
    if cfg.log_level == "DEBUG":
        rich.print_json(serialize.dumps_json(report))
    rich.print(_matvec_table(report))
    rich.print(f"total matvecs: {report.total_matvecs} ({report.setup_matvecs} setup)")
    rich.print(f"Report written to [yellow]{path}")
    if not report.converged:
        logger.warning("Some systems did not converge")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _table(cfg, df, name: str) -> int:
    path = save_run(cfg, table=df, name=name)
    rich.print(df.to_string(index=False))
    rich.print(f"Table written to [yellow]{path}")
    return EXIT_OK


def _cost(cfg) -> int:
    df = run_cost(cfg)
    path = save_run(cfg, name="cost")
    if cfg.out is None:
        path = path / "cost.csv"
    cost_model.write_sweep(df, path)
    rich.print(df.to_string(index=False))
    a, b = cost_model.srgmres_coefficients(
        cost_model.CostParams(m=cfg.cost.m, k=cfg.cost.k, L=cfg.cost.L, n=cfg.cost.n)
    )
    rich.print(f"d_srgmres at the configured point ~ {a:.4e} + {b:.4e} / j_new")
    rich.print(f"Table written to [yellow]{path}")
    return EXIT_OK


def _fetch(cfg, kappa_c) -> int:
    names = list(cfg.fetch.names) or QCD_SMALL_SET
    with Status(f"Downloading {len(names)} QCD matrices ..."):
        written = fetch_qcd(
            names, cfg.fetch.dest, cfg.fetch.base_url, kappa_c, cfg.fetch.timeout
        )
    for path in written:
        rich.print(f"[green]✓[/green] {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = args_to_cfg(args)
        if cfg.log_level == "DEBUG":
            print_cfg(cfg)
        logger.info(f'Starting run "{cfg.exp_name}"')
        if args.command == "solve":
            return _solve(cfg)
        if args.command == "sweep":
            with Status(f"Sweeping ({cfg.sweep.mode}) ..."):
                df = run_sweep(cfg)
            return _table(cfg, df, "sweep")
        if args.command == "diagnose":
            with Status("Running diagnostics ..."):
                df = run_diagnostics(cfg)
            return _table(cfg, df, "diagnostics")
        if args.command == "cost":
            return _cost(cfg)
        if args.command == "fetch-qcd":
            return _fetch(cfg, getattr(args, "kappa_c", None))
    except (ValueError, ProblemError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR
    except Exception:
        logger.exception("Run failed")
        return EXIT_ERROR
    return EXIT_ERROR


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
