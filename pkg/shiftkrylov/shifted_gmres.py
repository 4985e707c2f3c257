"""
Right-preconditioned shifted GMRES.

GMRES cycles run on the base system (A + s_1 I) M^{-1}; after every cycle each
other unconverged shift gets a minimum-residual correction from the same
search space, at no extra operator or preconditioner cost. Once the base
system converges the next unconverged shift becomes the base.
"""

import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from joblib import Parallel, delayed

from .gmres import ArnoldiData, gmres_cycle_op
from .kernels import DenseMatrix, Shift, SingularMatrixError, SparseOperator
from .kernels import hermitian_solve, spmv
from .precond import ApplicationCounter, PreconditionedOperator, Preconditioner
from .precond import smallest_shift
from .report import SolveReport, SystemReport
from .shifted_core import ProjectionResult

logger = logging.getLogger("shiftkrylov")

ShiftConvention = Literal["relative", "absolute"]


class FamilyError(ValueError):
    """A shifted family is malformed."""


@dataclass(eq=False)
class ShiftedFamily:
    """(A + s_l I) x_l = b for l = 0..L-1, with current iterates and residuals."""

    op: SparseOperator
    b: np.ndarray
    shifts: list[Shift]
    x: DenseMatrix  # n x L
    r: DenseMatrix  # n x L
    converged: np.ndarray
    # initial residual norms the relative tolerance refers to
    r0_norms: np.ndarray
    # operator applications spent forming residuals of nonzero initial guesses
    setup_matvecs: np.ndarray

    @classmethod
    def create(
        cls,
        op: SparseOperator,
        b: np.ndarray,
        shifts: Sequence[Shift],
        x0: DenseMatrix | None = None,
    ) -> "ShiftedFamily":
        shifts = [complex(s) for s in shifts]
        if len(shifts) == 0:
            raise FamilyError("a family needs at least one shift")
        if len(set(shifts)) != len(shifts):
            raise FamilyError(f"shifts must be pairwise distinct: {shifts}")
        if not all(np.isfinite(s) for s in shifts):
            raise FamilyError("shifts must be finite")
        n, L = op.nrows, len(shifts)
        b = np.asarray(b, dtype=np.complex128)
        if b.shape != (n,):
            raise FamilyError(f"right-hand side of shape {b.shape} for dimension {n}")

        setup = np.zeros(L, dtype=np.int64)
        if x0 is None:
            x = np.zeros((n, L), dtype=np.complex128)
            r = np.repeat(b[:, None], L, axis=1)
        else:
            x = np.array(x0, dtype=np.complex128, copy=True).reshape(n, L)
            r = np.empty((n, L), dtype=np.complex128)
            for ell, sigma in enumerate(shifts):
                if np.any(x[:, ell]):
                    r[:, ell] = b - spmv(op, x[:, ell], sigma)
                    setup[ell] = 1
                else:
                    r[:, ell] = b
        return cls(
            op=op,
            b=b,
            shifts=shifts,
            x=x,
            r=r,
            converged=np.zeros(L, dtype=bool),
            r0_norms=np.linalg.norm(r, axis=0),
            setup_matvecs=setup,
        )

    @property
    def L(self) -> int:
        return len(self.shifts)

    def base_order(self) -> list[int]:
        """Shift indices in the order they serve as base system."""
        order = []
        remaining = list(range(self.L))
        while remaining:
            pick = remaining[smallest_shift([self.shifts[i] for i in remaining])]
            order.append(pick)
            remaining.remove(pick)
        return order

    def relres(self, ell: int) -> float:
        if self.r0_norms[ell] == 0.0:
            return 0.0
        return float(np.linalg.norm(self.r[:, ell]) / self.r0_norms[ell])

    def true_residuals(self) -> DenseMatrix:
        return np.column_stack(
            [self.b - spmv(self.op, self.x[:, ell], s) for ell, s in enumerate(self.shifts)]
        )


def projection_shift(
    sigma: Shift, base: Shift, convention: ShiftConvention = "relative"
) -> Shift:
    """Shift used in the seed projection for a system solved against base cycles."""
    if convention == "relative":
        return sigma - base
    if convention == "absolute":
        return sigma
    raise FamilyError(f"unknown shift convention {convention!r}")


@dataclass
class ProjectionCache:
    """Gram blocks of one cycle, shared by all shifts."""

    HtH: DenseMatrix
    HtVZ: DenseMatrix
    ZtZ: DenseMatrix

    @classmethod
    def from_arnoldi(cls, data: ArnoldiData) -> "ProjectionCache":
        H = data.H
        HtH = H.conj().T @ H
        ZtZ = data.Z.conj().T @ data.Z
        return cls(
            HtH=0.5 * (HtH + HtH.conj().T),
            HtVZ=H.conj().T @ (data.V.conj().T @ data.Z),
            ZtZ=0.5 * (ZtZ + ZtZ.conj().T),
        )


def assemble_N_sigma(cache: ProjectionCache, sigma: Shift) -> DenseMatrix:
    """N = H^H H + s H^H V^H Z + conj(s) Z^H V H + |s|^2 Z^H Z."""
    if sigma == 0:
        return cache.HtH.copy()
    cross = sigma * cache.HtVZ
    return cache.HtH + cross + cross.conj().T + abs(sigma) ** 2 * cache.ZtZ


def apply_projection(N, rhs, x0, r0, update) -> ProjectionResult:
    """
    Solve N y = rhs and apply `update(y) -> (dx, dr)`. A singular N or a
    correction that would raise the residual norm leaves (x0, r0) in place.
    """
    try:
        y = hermitian_solve(N, rhs)
    except SingularMatrixError as e:
        logger.warning(f"Skipping seed projection: {e}")
        return ProjectionResult(x=x0, r=r0, skipped=True)
    dx, dr = update(y)
    r = r0 - dr
    if np.linalg.norm(r) > np.linalg.norm(r0):
        # roundoff in a projection with nothing to gain
        return ProjectionResult(x=x0, r=r0, y=np.zeros_like(y))
    return ProjectionResult(x=x0 + dx, r=r, y=y)


def project_shift(
    data: ArnoldiData,
    cache: ProjectionCache,
    sigma_rel: Shift,
    x0: np.ndarray,
    r0: np.ndarray,
) -> ProjectionResult:
    """Minimum-residual update of one shifted system over the cycle's search space."""
    if data.m == 0:
        return ProjectionResult(x=x0, r=r0)
    N = assemble_N_sigma(cache, sigma_rel)
    rhs = data.H.conj().T @ (data.V.conj().T @ r0) + np.conj(sigma_rel) * (
        data.Z.conj().T @ r0
    )

    def update(y):
        Zy = data.Z @ y
        return Zy, data.V @ (data.H @ y) + sigma_rel * Zy

    return apply_projection(N, rhs, x0, r0, update)


def batched_rhs(data: ArnoldiData, sigmas: Sequence[Shift], R0: DenseMatrix) -> DenseMatrix:
    """Right-hand sides of all shifts at once, one column per shift."""
    VtR = data.V.conj().T @ R0
    ZtR = data.Z.conj().T @ R0
    return data.H.conj().T @ VtR + ZtR * np.conj(np.asarray(sigmas))[None, :]


def project_shifts(
    data: ArnoldiData,
    cache: ProjectionCache,
    sigmas: Sequence[Shift],
    X0: DenseMatrix,
    R0: DenseMatrix,
    *,
    n_jobs: int | None = None,
) -> list[ProjectionResult]:
    """
    `project_shift` for several shifts, with the tall products done as block
    operations. `n_jobs` > 1 solves the small systems in a thread pool; results
    do not depend on the schedule.
    """
    if data.m == 0 or len(sigmas) == 0:
        return [ProjectionResult(x=X0[:, i], r=R0[:, i]) for i in range(len(sigmas))]
    rhs = batched_rhs(data, sigmas, R0)

    def one(i):
        sigma = sigmas[i]

        def update(y):
            Zy = data.Z @ y
            return Zy, data.V @ (data.H @ y) + sigma * Zy

        return apply_projection(
            assemble_N_sigma(cache, sigma), rhs[:, i], X0[:, i], R0[:, i], update
        )

    if n_jobs is not None and n_jobs != 1 and len(sigmas) > 1:
        return Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(one)(i) for i in range(len(sigmas))
        )
    return [one(i) for i in range(len(sigmas))]


def project_shift_unprec(
    data: ArnoldiData, sigma_rel: Shift, x0: np.ndarray, r0: np.ndarray
) -> ProjectionResult:
    """
    Identity-preconditioner form: minimize over the shifted Hessenberg
    H + s [I; 0], valid only when Z = V[:, :m].
    """
    if data.m == 0:
        return ProjectionResult(x=x0, r=r0)
    Hs = data.H.copy()
    Hs[: data.m, :] += sigma_rel * np.eye(data.m)
    N = Hs.conj().T @ Hs
    rhs = Hs.conj().T @ (data.V.conj().T @ r0)

    def update(y):
        return data.V[:, : data.m] @ y, data.V @ (Hs @ y)

    return apply_projection(N, rhs, x0, r0, update)


@dataclass
class CycleEvent:
    """Passed to solver observers after every base cycle."""

    base: int
    cycle: int
    data: ArnoldiData
    # projection shift per projected system index
    sigmas: dict[int, Shift]
    r_before: dict[int, np.ndarray]
    r_after: dict[int, np.ndarray]
    base_r_before: np.ndarray
    rspace: object | None = None
    base_r_after: np.ndarray | None = None


Observer = Callable[[CycleEvent], None]


def new_report(method: str, family: ShiftedFamily) -> SolveReport:
    report = SolveReport(method=method)
    for ell, sigma in enumerate(family.shifts):
        report.systems.append(
            SystemReport(
                shift=sigma,
                r0_norm=float(family.r0_norms[ell]),
                matvecs=int(family.setup_matvecs[ell]),
                history=[float(family.r0_norms[ell])],
                converged=bool(family.r0_norms[ell] == 0.0),
            )
        )
    family.converged[:] = family.r0_norms == 0.0
    return report


def finish_report(report: SolveReport, family: ShiftedFamily, verify: bool):
    for ell, system in enumerate(report.systems):
        system.converged = bool(family.converged[ell])
        if not system.converged:
            report.flag(f"not_converged:shift={family.shifts[ell]}")
    if verify:
        R = family.true_residuals()
        report.verification_matvecs += family.L
        for ell, system in enumerate(report.systems):
            ref = family.r0_norms[ell] or 1.0
            system.true_relres = float(np.linalg.norm(R[:, ell]) / ref)


def sgmres_solve(
    family: ShiftedFamily,
    p: Preconditioner,
    m: int,
    eps: float,
    max_cycles: int,
    *,
    shift_convention: ShiftConvention = "relative",
    n_jobs: int | None = None,
    observer: Observer | None = None,
    verify: bool = False,
) -> SolveReport:
    """
    Solve every system of `family` to relative residual `eps`.

    `max_cycles` bounds the cycles per base system; systems left unconverged
    are flagged in the report, never raised. Iterates and residuals in
    `family` are updated in place.
    """
    if m < 1 or eps <= 0 or max_cycles < 1:
        raise ValueError(f"invalid solver parameters m={m}, eps={eps}, max_cycles={max_cycles}")
    t0 = time.perf_counter()
    report = new_report("sgmres", family)
    counters = [ApplicationCounter() for _ in range(family.L)]

    queue = [ell for ell in family.base_order() if not family.converged[ell]]
    while queue:
        base, others = queue[0], queue[1:]
        sigma_base = family.shifts[base]
        aop = PreconditionedOperator(family.op, sigma_base, p, counters[base])
        tol_abs = eps * family.r0_norms[base]
        logger.info(f"Base system {base} (shift {sigma_base}), {len(others)} to project")

        cycles = 0
        while not family.converged[base] and cycles < max_cycles:
            base_r_before = family.r[:, base].copy()
            res = gmres_cycle_op(
                aop, family.b, family.x[:, base], m, eps,
                r0=family.r[:, base], ref_norm=family.r0_norms[base],
            )
            cycles += 1
            family.x[:, base], family.r[:, base] = res.x, res.r
            base_report = report.systems[base]
            base_report.cycles += 1
            base_report.record(res.resnorm)
            family.converged[base] = res.resnorm <= tol_abs

            active = [ell for ell in others if not family.converged[ell]]
            sigmas = {
                ell: projection_shift(family.shifts[ell], sigma_base, shift_convention)
                for ell in active
            }
            r_before = {ell: family.r[:, ell].copy() for ell in active} if observer else {}
            if active and res.data.m > 0:
                cache = ProjectionCache.from_arnoldi(res.data)
                results = project_shifts(
                    res.data, cache, [sigmas[ell] for ell in active],
                    family.x[:, active], family.r[:, active], n_jobs=n_jobs,
                )
                for ell, out in zip(active, results):
                    family.x[:, ell], family.r[:, ell] = out.x, out.r
                    system = report.systems[ell]
                    system.projections += 1
                    if out.skipped:
                        system.skipped_projections += 1
                        report.flag("singular_projection")
                    rn = float(np.linalg.norm(out.r))
                    system.record(rn)
                    family.converged[ell] = rn <= eps * family.r0_norms[ell]

            logger.debug(
                f"Cycle {cycles} of base {base}: relres {res.resnorm / family.r0_norms[base]:.3e}"
            )
            if observer is not None:
                observer(
                    CycleEvent(
                        base=base, cycle=cycles, data=res.data, sigmas=sigmas,
                        r_before=r_before,
                        r_after={ell: family.r[:, ell].copy() for ell in active},
                        base_r_before=base_r_before,
                        base_r_after=family.r[:, base].copy(),
                    )
                )
            if res.data.m == 0:
                break

        if not family.converged[base]:
            logger.warning(f"Base system {base} did not converge in {max_cycles} cycles")
            report.flag("max_cycles_exhausted")
        queue = [ell for ell in others if not family.converged[ell]]

    for ell, system in enumerate(report.systems):
        system.matvecs += counters[ell].matvecs
        system.precond_applies += counters[ell].precond_applies
    finish_report(report, family, verify)
    report.wall_time = time.perf_counter() - t0
    return report
