import pandas as pd
from rich.status import Status

from .experiment import build_sequence, run_diagnostics, run_method, run_solve, run_sweep
from .kernels import SparseOperator
from .precond import build_preconditioner
from .problems import ProblemInstance, read_matrix_market, synthetic_convdiff
from .report import RunReport, SolveReport
from .rgmres import RecycleSpace
from .shifted_gmres import ShiftedFamily, sgmres_solve
from .shifted_rgmres import srgmres_solve
from .utils.config import _load_cfg, prep_cfg, save_run

__all__ = [
    "Experiment",
    "ProblemInstance",
    "RecycleSpace",
    "RunReport",
    "ShiftedFamily",
    "SolveReport",
    "SparseOperator",
    "build_preconditioner",
    "read_matrix_market",
    "run_method",
    "sgmres_solve",
    "srgmres_solve",
    "synthetic_convdiff",
]


class Experiment:

    def __init__(
        self,
        shifts: list[str | complex],
        matrix: str | None = None,
        synthetic: str | None = None,
        **solver,
    ):
        """Set up a benchmark run.

        Args:
            shifts: the shifts of every family, as numbers or strings like "1+2i".
            matrix: Matrix Market file or directory of QCD matrices.
            synthetic: "nx,peclet,rotation" for a generated convection-diffusion problem.
            **solver: overrides of the `solver` config section (method, m, k, eps, ...).
        """
        _cfg = _load_cfg(use_cli_args=False)
        _cfg.shifts = [str(s) for s in shifts]
        _cfg.problem.matrix = matrix
        _cfg.problem.synthetic = synthetic
        for key, value in solver.items():
            _cfg.solver[key] = value
        self.cfg = prep_cfg(_cfg)

        with Status("Loading problems ..."):
            self.problems = build_sequence(self.cfg)

    def run(self) -> RunReport:
        report = run_solve(self.cfg, self.problems)
        save_run(self.cfg, report=report)
        return report

    def sweep(self) -> pd.DataFrame:
        df = run_sweep(self.cfg, self.problems)
        save_run(self.cfg, table=df, name="sweep")
        return df

    def diagnose(self) -> pd.DataFrame:
        return run_diagnostics(self.cfg, self.problems)
