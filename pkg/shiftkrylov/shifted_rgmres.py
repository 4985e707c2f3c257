"""
Right-preconditioned shifted Recycled GMRES.

Each base cycle is a recycled GMRES cycle; the other shifts are projected
first against the recycle space and then, after every cycle, against the
augmented search space [Z_U Z_m]. The recycle space returned at the end is
meant for the next family of a sequence.
"""

import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from .kernels import DenseMatrix, Shift
from .precond import ApplicationCounter, PreconditionedOperator, Preconditioner
from .report import SolveReport
from .rgmres import (
    AugmentedArnoldiData,
    HarmonicRitzError,
    RecycleSpace,
    harmonic_ritz_update,
    initial_projection,
    rgmres_cycle_op,
)
from .shifted_core import ProjectionResult
from .shifted_gmres import (
    CycleEvent,
    Observer,
    ShiftConvention,
    ShiftedFamily,
    apply_projection,
    finish_report,
    new_report,
    projection_shift,
)

logger = logging.getLogger("shiftkrylov")


def _initial_N(CtZU: DenseMatrix, ZUtZU: DenseMatrix, sigma: Shift) -> DenseMatrix:
    k = CtZU.shape[0]
    cross = sigma * CtZU
    return np.eye(k) + cross + cross.conj().T + abs(sigma) ** 2 * ZUtZU


def initial_shift_projection(
    rspace: RecycleSpace, sigma_rel: Shift, x_minus1: np.ndarray, r_minus1: np.ndarray
) -> ProjectionResult:
    """
    Minimum-residual update of a shifted system over the recycle space:
    N = I + s C^H Z_U + conj(s) Z_U^H C + |s|^2 Z_U^H Z_U,
    y = N^{-1} (C + s Z_U)^H r, x += Z_U y, r -= (C + s Z_U) y.
    """
    return initial_shift_projections(
        rspace, [sigma_rel], x_minus1[:, None], r_minus1[:, None]
    )[0]


def initial_shift_projections(
    rspace: RecycleSpace,
    sigmas: Sequence[Shift],
    X: DenseMatrix,
    R: DenseMatrix,
) -> list[ProjectionResult]:
    if rspace.is_empty() or len(sigmas) == 0:
        return [ProjectionResult(x=X[:, i], r=R[:, i]) for i in range(len(sigmas))]
    C, Z_U = rspace.C, rspace.Z_U
    CtZU = C.conj().T @ Z_U
    ZUtZU = Z_U.conj().T @ Z_U
    ZUtZU = 0.5 * (ZUtZU + ZUtZU.conj().T)
    CtR = C.conj().T @ R
    ZUtR = Z_U.conj().T @ R

    results = []
    for i, sigma in enumerate(sigmas):

        def update(y, sigma=sigma):
            dx = Z_U @ y
            return dx, C @ y + sigma * dx

        rhs = CtR[:, i] + np.conj(sigma) * ZUtR[:, i]
        results.append(
            apply_projection(_initial_N(CtZU, ZUtZU, sigma), rhs, X[:, i], R[:, i], update)
        )
    return results


@dataclass
class AugmentedProjectionCache:
    """Gram blocks of one recycled cycle, shared by all shifts."""

    GtG: DenseMatrix
    # [C V]^H [Z_U Z]
    cross1: DenseMatrix
    # [Z_U Z]^H [Z_U Z]
    zgram: DenseMatrix
    # G^H cross1
    GtCross: DenseMatrix

    @classmethod
    def from_cycle(
        cls, data: AugmentedArnoldiData, rspace: RecycleSpace
    ) -> "AugmentedProjectionCache":
        if data.k != rspace.k:
            raise ValueError(f"cycle used k={data.k} but recycle space has k={rspace.k}")
        G = data.G
        CV = np.hstack([rspace.C, data.V])
        ZZ = np.hstack([rspace.Z_U, data.Z])
        cross1 = CV.conj().T @ ZZ
        GtG = G.conj().T @ G
        zgram = ZZ.conj().T @ ZZ
        return cls(
            GtG=0.5 * (GtG + GtG.conj().T),
            cross1=cross1,
            zgram=0.5 * (zgram + zgram.conj().T),
            GtCross=G.conj().T @ cross1,
        )


def assemble_N_sigma_aug(cache: AugmentedProjectionCache, sigma_rel: Shift) -> DenseMatrix:
    """N = G^H G + |s|^2 Zg + s G^H X + conj(s) X^H G with X = [C V]^H [Z_U Z]."""
    if sigma_rel == 0:
        return cache.GtG.copy()
    cross = sigma_rel * cache.GtCross
    return cache.GtG + abs(sigma_rel) ** 2 * cache.zgram + cross + cross.conj().T


def augmented_rhs(
    data: AugmentedArnoldiData,
    rspace: RecycleSpace,
    sigmas: Sequence[Shift],
    R0: DenseMatrix,
    simplified: bool | Sequence[bool] = True,
) -> DenseMatrix:
    """
    ([C V] G + s [Z_U Z])^H r0 for every column of R0.

    With `simplified`, the first k entries, (C + s Z_U)^H r0, are taken as zero;
    this holds when r0 is already orthogonal to C + s Z_U.
    """
    k, L = data.k, R0.shape[1]
    sig_conj = np.conj(np.asarray(sigmas, dtype=np.complex128))[None, :]
    CtR = rspace.C.conj().T @ R0
    lower = (
        data.B.conj().T @ CtR
        + data.H.conj().T @ (data.V.conj().T @ R0)
        + (data.Z.conj().T @ R0) * sig_conj
    )
    upper = np.zeros((k, L), dtype=np.complex128)
    flags = [simplified] * L if isinstance(simplified, bool) else list(simplified)
    full = [i for i in range(L) if not flags[i]]
    if k and full:
        upper[:, full] = CtR[:, full] + (rspace.Z_U.conj().T @ R0[:, full]) * sig_conj[:, full]
    return np.vstack([upper, lower])


def _aug_update(data: AugmentedArnoldiData, rspace: RecycleSpace, sigma: Shift):
    k = data.k

    def update(y):
        yU, yV = y[:k], y[k:]
        dx = data.Z @ yV
        dr = data.V @ (data.H @ yV)
        if k:
            dx = dx + rspace.Z_U @ yU
            dr = dr + rspace.C @ (yU + data.B @ yV)
        return dx, dr + sigma * dx

    return update


def project_shift_aug(
    data: AugmentedArnoldiData,
    rspace: RecycleSpace,
    cache: AugmentedProjectionCache,
    sigma_rel: Shift,
    x0: np.ndarray,
    r0: np.ndarray,
    simplified: bool = True,
) -> ProjectionResult:
    """Minimum-residual update of one shifted system over [Z_U Z_m]."""
    return project_shifts_aug(
        data, rspace, cache, [sigma_rel], x0[:, None], r0[:, None], simplified=simplified
    )[0]


def project_shifts_aug(
    data: AugmentedArnoldiData,
    rspace: RecycleSpace,
    cache: AugmentedProjectionCache,
    sigmas: Sequence[Shift],
    X0: DenseMatrix,
    R0: DenseMatrix,
    *,
    simplified: bool | Sequence[bool] = True,
    n_jobs: int | None = None,
) -> list[ProjectionResult]:
    if data.m == 0 or len(sigmas) == 0:
        return [ProjectionResult(x=X0[:, i], r=R0[:, i]) for i in range(len(sigmas))]
    rhs = augmented_rhs(data, rspace, sigmas, R0, simplified)

    def one(i):
        sigma = sigmas[i]
        return apply_projection(
            assemble_N_sigma_aug(cache, sigma),
            rhs[:, i],
            X0[:, i],
            R0[:, i],
            _aug_update(data, rspace, sigma),
        )

    if n_jobs is not None and n_jobs != 1 and len(sigmas) > 1:
        return Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(one)(i) for i in range(len(sigmas))
        )
    return [one(i) for i in range(len(sigmas))]


def _store(family: ShiftedFamily, report: SolveReport, ell: int, out: ProjectionResult, eps: float):
    family.x[:, ell], family.r[:, ell] = out.x, out.r
    system = report.systems[ell]
    system.projections += 1
    if out.skipped:
        system.skipped_projections += 1
        report.flag("singular_projection")
    rn = float(np.linalg.norm(out.r))
    system.record(rn)
    family.converged[ell] = rn <= eps * family.r0_norms[ell]


def srgmres_solve(
    family: ShiftedFamily,
    p: Preconditioner,
    rspace_in: RecycleSpace | None,
    m: int,
    k: int,
    eps: float,
    max_cycles: int,
    *,
    shift_convention: ShiftConvention = "relative",
    n_jobs: int | None = None,
    observer: Observer | None = None,
    verify: bool = False,
    rebase_recycle: bool = True,
) -> tuple[SolveReport, RecycleSpace]:
    """
    Solve every system of `family` to relative residual `eps` with recycling.

    Args:
        rspace_in: recycle space from a previous solve, or None/empty. A space
            built for another operator or preconditioner is rebuilt first, at k
            operator applications charged as setup to the base system.
        k: recycle space dimension kept after each cycle.
        rebase_recycle: move a space built for the same matrix to a new base
            shift without operator applications; when False it is rebuilt.

    Returns:
        the report and the final recycle space.
    """
    if m < 1 or k < 0 or eps <= 0 or max_cycles < 1:
        raise ValueError(f"invalid solver parameters m={m}, k={k}, eps={eps}")
    t0 = time.perf_counter()
    report = new_report("srgmres", family)
    counters = [ApplicationCounter() for _ in range(family.L)]
    setup_counters = [ApplicationCounter() for _ in range(family.L)]
    rspace = rspace_in if rspace_in is not None else RecycleSpace.empty(family.op.nrows)
    # residual known orthogonal to C + s Z_U of the current space
    orthogonal = np.zeros(family.L, dtype=bool)
    simplify_ok = shift_convention == "relative"

    queue = [ell for ell in family.base_order() if not family.converged[ell]]
    while queue:
        base, others = queue[0], queue[1:]
        sigma_base = family.shifts[base]
        aop = PreconditionedOperator(family.op, sigma_base, p, counters[base])
        tol_abs = eps * family.r0_norms[base]
        logger.info(
            f"Base system {base} (shift {sigma_base}), recycle dim {rspace.k}, "
            f"{len(others)} to project"
        )

        if not rspace.is_empty():
            if rebase_recycle and rspace.built_for(family.op, p):
                rspace = rspace.rebase(sigma_base)
            else:
                setup = PreconditionedOperator(family.op, sigma_base, p, setup_counters[base])
                rspace = rspace.rebuild(setup)
                orthogonal[:] = False
            active = [ell for ell in queue if not family.converged[ell]]
            out = initial_projection(rspace, family.x[:, base], family.r[:, base])
            _store(family, report, base, out, eps)
            rest = [ell for ell in active if ell != base]
            results = initial_shift_projections(
                rspace,
                [projection_shift(family.shifts[ell], sigma_base, shift_convention) for ell in rest],
                family.x[:, rest],
                family.r[:, rest],
            )
            for ell, out in zip(rest, results):
                _store(family, report, ell, out, eps)
                orthogonal[ell] = not out.skipped

        cycles = 0
        while not family.converged[base] and cycles < max_cycles:
            base_r_before = family.r[:, base].copy()
            res = rgmres_cycle_op(
                aop, family.b, family.x[:, base], rspace, m, eps,
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
                cache = AugmentedProjectionCache.from_cycle(res.data, rspace)
                results = project_shifts_aug(
                    res.data, rspace, cache, [sigmas[ell] for ell in active],
                    family.x[:, active], family.r[:, active],
                    simplified=[simplify_ok and bool(orthogonal[ell]) for ell in active],
                    n_jobs=n_jobs,
                )
                for ell, out in zip(active, results):
                    _store(family, report, ell, out, eps)
                    orthogonal[ell] = not out.skipped

            if observer is not None:
                observer(
                    CycleEvent(
                        base=base, cycle=cycles, data=res.data, sigmas=sigmas,
                        r_before=r_before,
                        r_after={ell: family.r[:, ell].copy() for ell in active},
                        base_r_before=base_r_before, rspace=rspace,
                        base_r_after=family.r[:, base].copy(),
                    )
                )
            if k > 0 and res.data.m > 0:
                try:
                    rspace = harmonic_ritz_update(res.data, rspace, k, aop=aop)
                except HarmonicRitzError as e:
                    logger.warning(f"Keeping previous recycle space: {e}")
                    report.flag("harmonic_ritz_failure")
            if res.data.m == 0:
                break

        if not family.converged[base]:
            logger.warning(f"Base system {base} did not converge in {max_cycles} cycles")
            report.flag("max_cycles_exhausted")
        queue = [ell for ell in others if not family.converged[ell]]

    for ell, system in enumerate(report.systems):
        system.matvecs += counters[ell].matvecs
        system.precond_applies += counters[ell].precond_applies
        system.setup_matvecs += setup_counters[ell].matvecs
        system.setup_precond_applies += setup_counters[ell].precond_applies
    report.recycle_dim = rspace.k
    finish_report(report, family, verify)
    report.wall_time = time.perf_counter() - t0
    return report, rspace
