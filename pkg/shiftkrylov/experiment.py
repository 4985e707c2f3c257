"""
Benchmark runs: solving shifted families with the four methods, parameter
sweeps, cost-model tables and per-cycle residual diagnostics.
"""

import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import cost_model
from .precond import build_preconditioner
from .problems import (
    ProblemInstance,
    list_qcd_matrices,
    load_qcd_matrix,
    perturbed_sequence,
    qcd_base_matrix,
    read_matrix_market,
    read_mm_comments,
    find_kappa_c,
    rhs_sequence,
    synthetic_convdiff,
    write_matrix_market,
)
from .report import RunReport, SolveReport
from .rgmres import RecycleSpace
from .shifted_core import SearchSpace, residual_decomposition_check
from .shifted_gmres import CycleEvent, ShiftedFamily, sgmres_solve
from .shifted_rgmres import srgmres_solve
from .utils.config import Config, ConfigurationError, parse_shift, parse_shifts

logger = logging.getLogger("shiftkrylov")


def parse_synthetic(text: str) -> tuple[int, float, float]:
    """'nx,peclet,rotation' with peclet and rotation optional."""
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not 1 <= len(parts) <= 3:
        raise ConfigurationError(f"synthetic problem must be 'nx,peclet,rotation', got {text!r}")
    try:
        nx = int(parts[0])
        peclet = float(parts[1]) if len(parts) > 1 else 0.0
        rotation = float(parts[2]) if len(parts) > 2 else 0.0
    except ValueError:
        raise ConfigurationError(f"cannot parse synthetic problem {text!r}") from None
    return nx, peclet, rotation


def _base_operators(cfg: Config):
    prob = cfg.problem
    if prob.synthetic is not None:
        nx, peclet, rot = parse_synthetic(prob.synthetic)
        op = synthetic_convdiff(nx, peclet, rot)
        return [(op, f"convdiff-{nx}")]
    if prob.matrix is None:
        raise ConfigurationError(
            "no problem given: set `problem.matrix` (file or QCD directory) or `problem.synthetic`"
        )

    path = Path(prob.matrix)
    if path.is_dir():
        names = list_qcd_matrices(path)
        if not names:
            raise ConfigurationError(f"no .mtx files in {path}")
        return [(load_qcd_matrix(path, name, prob.kappa_c), name) for name in names]

    op = read_matrix_market(path)
    if prob.qcd_base:
        kappa_c = prob.kappa_c or find_kappa_c(read_mm_comments(path))
        if kappa_c is None:
            raise ConfigurationError(f"`problem.kappa_c` is required for {path.name}")
        op = qcd_base_matrix(op, kappa_c)
    return [(op, path.stem)]


def build_sequence(cfg: Config) -> list[ProblemInstance]:
    """The sequence of shifted families a run solves, one per matrix."""
    shifts = parse_shifts(list(cfg.shifts))
    members = _base_operators(cfg)
    count = cfg.problem.sequence_length
    if len(members) == 1 and count > 1:
        op, label = members[0]
        ops = perturbed_sequence(op, count, cfg.problem.perturbation, cfg.seed)
        members = [(o, f"{label}-{i}") for i, o in enumerate(ops)]

    n = members[0][0].nrows
    if any(op.nrows != n for op, _ in members):
        raise ConfigurationError("all matrices of a sequence must have the same dimension")
    rhs = rhs_sequence(n, len(members), cfg.seed, cfg.problem.complex_rhs_increments)

    if cfg.problem.save_matrix:
        write_matrix_market(
            cfg.problem.save_matrix, members[0][0], comment=f"shiftkrylov {members[0][1]}"
        )
        logger.info(f"Saved matrix to {cfg.problem.save_matrix}")

    return [
        ProblemInstance(op=op, b=b, shifts=list(shifts), label=label)
        for (op, label), b in zip(members, rhs)
    ]


def run_method(
    method: str,
    problems: list[ProblemInstance],
    *,
    m: int,
    k: int = 0,
    eps: float = 1e-8,
    max_cycles: int = 500,
    shift_convention: str = "relative",
    precond: str = "ilu0",
    n_jobs: int | None = None,
    verify: bool = False,
    observer=None,
) -> list[SolveReport]:
    """
    Solve every family of `problems` with one method.

    The preconditioner of a family is built once for its smallest shift and
    shared by all its systems, for every method. Recycle spaces are carried
    across the sequence by srgmres and seq-rgmres; seq-rgmres also carries them
    across the systems of one family and rebuilds them each time.
    """
    common = dict(eps=eps, max_cycles=max_cycles, shift_convention=shift_convention)
    reports = []
    rspace: RecycleSpace | None = None
    for problem in problems:
        p = build_preconditioner(problem.op, problem.shifts, precond)
        if method == "sgmres":
            family = ShiftedFamily.create(problem.op, problem.b, problem.shifts)
            report = sgmres_solve(
                family, p, m, **common, n_jobs=n_jobs, observer=observer, verify=verify
            )
        elif method == "srgmres":
            family = ShiftedFamily.create(problem.op, problem.b, problem.shifts)
            report, rspace = srgmres_solve(
                family, p, rspace, m, k, **common,
                n_jobs=n_jobs, observer=observer, verify=verify,
            )
        elif method in ("seq-gmres", "seq-rgmres"):
            report = SolveReport(method=method)
            for sigma in problem.shifts:
                single = ShiftedFamily.create(problem.op, problem.b, [sigma])
                if method == "seq-gmres":
                    part = sgmres_solve(single, p, m, **common, verify=verify)
                else:
                    part, rspace = srgmres_solve(
                        single, p, rspace, m, k, **common,
                        verify=verify, rebase_recycle=False,
                    )
                report.merge(part)
        else:
            raise ConfigurationError(f"unknown method {method!r}")
        report.method = method
        report.label = problem.label
        logger.info(report.summary())
        reports.append(report)
    return reports


def _solver_kwargs(cfg: Config) -> dict:
    s = cfg.solver
    return dict(
        m=s.m,
        k=s.k,
        eps=s.eps,
        max_cycles=s.max_cycles,
        shift_convention=s.shift_convention,
        precond=cfg.precond.kind,
        n_jobs=s.n_jobs if s.parallel_shift_projections else None,
        verify=s.verify_residuals,
    )


def run_solve(cfg: Config, problems: list[ProblemInstance] | None = None) -> RunReport:
    """
    Run the configured method `timing.repeats` times. Counters come from the
    first repeat (they do not change between repeats), wall times are medians.
    """
    problems = problems if problems is not None else build_sequence(cfg)
    kwargs = _solver_kwargs(cfg)
    runs, totals = [], []
    for rep in range(cfg.timing.repeats):
        t0 = time.perf_counter()
        runs.append(run_method(cfg.solver.method, problems, **kwargs))
        totals.append(time.perf_counter() - t0)
        logger.debug(f"Repeat {rep}: {totals[-1]:.3f}s")

    solves = runs[0]
    for i, solve in enumerate(solves):
        solve.wall_time = float(np.median([run[i].wall_time for run in runs]))
    return RunReport(
        exp_name=cfg.exp_name or "",
        method=cfg.solver.method,
        solves=solves,
        wall_time=float(np.median(totals)),
        repeats=cfg.timing.repeats,
    )


def _row(reports: list[SolveReport]) -> dict:
    return {
        "total_matvecs": sum(r.total_matvecs for r in reports),
        "iteration_matvecs": sum(r.iteration_matvecs for r in reports),
        "setup_matvecs": sum(r.setup_matvecs for r in reports),
        "precond_applies": sum(r.total_precond_applies for r in reports),
        "converged": all(r.converged for r in reports),
        "wall_time": sum(r.wall_time for r in reports),
        "error": "",
    }


def _failed(e: Exception) -> dict:
    logger.warning(f"Sweep point failed: {e}")
    return {"total_matvecs": np.nan, "converged": False, "error": f"{type(e).__name__}: {e}"}


def _improvement(history: list[float]) -> float:
    """Geometric mean residual reduction per projection."""
    h = np.asarray(history, dtype=float)
    if len(h) < 2 or h[0] == 0.0 or h[-1] == 0.0:
        return np.nan
    return float((h[-1] / h[0]) ** (1.0 / (len(h) - 1)))


def _sweep_points(cfg: Config, problems: list[ProblemInstance]):
    """Yield (row labels, method, problems, solver overrides) for every sweep point."""
    sw = cfg.sweep
    if sw.mode == "mk":
        for m in sw.m_values:
            for k in sw.k_values:
                for method in sw.methods:
                    yield {"m": m, "k": k}, method, problems, {"m": m, "k": k}
    elif sw.mode == "m_plus_k":
        for m in sw.m_values:
            k = sw.m_plus_k - m
            for method in sw.methods:
                yield {"m": m, "k": k}, method, problems, {"m": m, "k": k}
    elif sw.mode == "marginal":
        lo, hi = sw.shift_interval
        shifts = [complex(s) for s in np.linspace(lo, hi, sw.shift_count)]
        for method in sw.methods:
            for count in range(1, len(shifts) + 1):
                subset = [replace(p, shifts=shifts[:count]) for p in problems]
                yield (
                    {"num_shifts": count, "added_shift": shifts[count - 1]},
                    method, subset, {},
                )
    elif sw.mode == "shift_magnitude":
        base = parse_shift(sw.base_shift)
        for magnitude in sw.magnitudes:
            subset = [replace(p, shifts=[base, base + magnitude]) for p in problems]
            for method in sw.methods:
                yield {"magnitude": magnitude}, method, subset, {}
    else:
        raise ConfigurationError(f"unknown sweep mode {sw.mode!r}")


def run_sweep(cfg: Config, problems: list[ProblemInstance] | None = None) -> pd.DataFrame:
    """
    One row per sweep point and method. A failing point is recorded in the
    `error` column and the sweep continues.
    """
    problems = problems if problems is not None else build_sequence(cfg)
    base_kwargs = _solver_kwargs(cfg)
    rows = []
    for labels, method, subset, overrides in _sweep_points(cfg, problems):
        row = {"mode": cfg.sweep.mode, "method": method, **labels}
        try:
            if overrides.get("k", 0) < 0:
                raise ConfigurationError(f"negative recycle dimension k={overrides['k']}")
            reports = run_method(method, subset, **{**base_kwargs, **overrides})
            row.update(_row(reports))
            if cfg.sweep.mode == "shift_magnitude":
                # the shifted system, not the base
                system = reports[0].systems[1]
                row["shifted_relres"] = system.relres
                row["shifted_improvement"] = _improvement(system.history)
        except Exception as e:
            row.update(_failed(e))
        rows.append(row)

    df = pd.DataFrame(rows)
    if cfg.sweep.mode == "marginal" and len(df):
        df["delta_matvecs"] = df.groupby("method")["total_matvecs"].diff()
        first = df.groupby("method").head(1).index
        df.loc[first, "delta_matvecs"] = df.loc[first, "total_matvecs"]
    if "added_shift" in df:
        df["added_shift"] = df["added_shift"].map(lambda z: f"{z.real:.17g}{z.imag:+.17g}j")
    return df


def run_cost(cfg: Config) -> pd.DataFrame:
    c = cfg.cost
    base = cost_model.CostParams(m=c.m, k=c.k, L=c.L, n=c.n)
    return cost_model.sweep(
        c.param, list(c["values"]), base, j_new=c.j_new, half_recycle=c.half_recycle
    )


def _event_spaces(event: CycleEvent, delta: complex, j: int):
    """Explicit search spaces over the first j-1 and j Arnoldi columns of a cycle."""
    data = event.data
    S = data.Z
    W = data.V @ data.H + delta * data.Z
    k = 0
    if event.rspace is not None and not event.rspace.is_empty():
        rs = event.rspace
        k = rs.k
        S = np.hstack([rs.Z_U, data.Z])
        W = np.hstack([rs.C, data.V]) @ data.G + delta * S
    full = SearchSpace(S[:, : k + j], W[:, : k + j])
    return full.truncated(k + j - 1), full


def run_diagnostics(
    cfg: Config, problems: list[ProblemInstance] | None = None
) -> pd.DataFrame:
    """
    Residual decomposition over nested search spaces for every cycle and
    system, together with the residual norms before and after each projection.
    """
    problems = problems if problems is not None else build_sequence(cfg)
    if (n := problems[0].n) > cfg.diagnose.max_dim:
        raise ConfigurationError(
            f"diagnostics build dense search-space images; n={n} exceeds diagnose.max_dim={cfg.diagnose.max_dim}"
        )
    method = cfg.diagnose.method
    if method not in ("sgmres", "srgmres"):
        raise ConfigurationError(f"diagnostics need a shifted method, got {method!r}")

    rows = []
    member = 0
    family_shifts: list[complex] = []

    def observe(event: CycleEvent):
        j = event.data.m
        if j == 0:
            return
        systems = [(event.base, 0j, event.base_r_before, event.base_r_after)]
        systems += [
            (ell, event.sigmas[ell], event.r_before[ell], event.r_after[ell])
            for ell in event.r_before
        ]
        for ell, delta, r_before, r_after in systems:
            small, large = _event_spaces(event, delta, j)
            dec = residual_decomposition_check(small, large, r_before)
            r0n = float(np.linalg.norm(r_before))
            after = float(np.linalg.norm(dec.lhs if r_after is None else r_after))
            rows.append(
                {
                    "member": member,
                    "base": event.base,
                    "cycle": event.cycle,
                    "system": ell,
                    "shift": family_shifts[ell],
                    "dim": large.dim,
                    "r_before": r0n,
                    "r_after": after,
                    "improvement": after / r0n if r0n else np.nan,
                    "gap": dec.gap,
                    "relative_gap": dec.gap / r0n if r0n else 0.0,
                    "term1_norm": float(np.linalg.norm(dec.term1)),
                    "term2_norm": float(np.linalg.norm(dec.term2)),
                    "bound": dec.bound,
                }
            )

    kwargs = {**_solver_kwargs(cfg), "verify": False, "observer": observe}
    for member, problem in enumerate(problems):
        family_shifts = list(problem.shifts)
        run_method(method, [problem], **kwargs)

    df = pd.DataFrame(rows)
    if len(df):
        df["shift"] = df["shift"].map(lambda z: f"{z.real:.17g}{z.imag:+.17g}j")
    return df
