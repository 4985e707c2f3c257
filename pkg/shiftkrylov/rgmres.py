"""
Recycled GMRES: GMRES on (I - C C^H) A_p augmented with a recycle space U,
C = A_p U, and harmonic Ritz maintenance of U between cycles.

U lives in the preconditioned (w) space; its solution-space image is
Z_U = M^{-1} U, so x-corrections along U are applied through Z_U.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .gmres import ArnoldiData, CycleResult, arnoldi_cycle
from .kernels import DenseMatrix, Shift, SparseOperator
from .precond import ApplicationCounter, PreconditionedOperator, Preconditioner
from .shifted_core import ProjectionResult

logger = logging.getLogger("shiftkrylov")

DROP_TOL = 1e-12


class HarmonicRitzError(Exception):
    """The harmonic Ritz eigenproblem could not be solved."""


def _right_solve(X: DenseMatrix, R: DenseMatrix) -> DenseMatrix:
    """X R^{-1} for upper triangular R."""
    if R.shape[0] == 0:
        return X
    return scipy.linalg.solve_triangular(R, X.T, trans="T").T


def _qr_drop(M: DenseMatrix, scale: float | None = None) -> tuple[DenseMatrix, DenseMatrix]:
    """
    Economic QR of M, truncated before the first diagonal of R below
    DROP_TOL * scale.
    """
    if M.shape[1] == 0:
        return M, np.zeros((0, 0), dtype=np.complex128)
    Q, R = scipy.linalg.qr(M, mode="economic")
    scale = np.linalg.norm(M) if scale is None else scale
    small = np.nonzero(np.abs(np.diag(R)) < DROP_TOL * scale)[0]
    if len(small):
        keep = int(small[0])
        logger.warning(f"Dropping {M.shape[1] - keep} dependent recycle vectors")
        Q, R = Q[:, :keep], R[:keep, :keep]
    return Q, R


@dataclass(eq=False)
class RecycleSpace:
    """
    U, C = (A + s I) M^{-1} U with orthonormal columns and Z_U = M^{-1} U, all
    relative to the operator `op` with shift `base_shift`.
    """

    U: DenseMatrix
    C: DenseMatrix
    Z_U: DenseMatrix
    base_shift: Shift = 0j
    op: SparseOperator | None = field(default=None, repr=False)
    precond: Preconditioner | None = field(default=None, repr=False)
    # harmonic Ritz values of the kept vectors, smallest modulus first
    theta: np.ndarray | None = None

    @classmethod
    def empty(cls, n: int) -> "RecycleSpace":
        z = np.zeros((n, 0), dtype=np.complex128)
        return cls(U=z, C=z.copy(), Z_U=z.copy())

    @property
    def k(self) -> int:
        return self.U.shape[1]

    @property
    def n(self) -> int:
        return self.U.shape[0]

    def is_empty(self) -> bool:
        return self.k == 0

    def built_for(self, op: SparseOperator, precond: Preconditioner) -> bool:
        return self.op is op and precond.matches(self.precond)

    def _normalized(
        self, C, U, Z_U, base_shift, op, precond, theta=None
    ) -> "RecycleSpace":
        Q, R = _qr_drop(C)
        s = R.shape[0]
        return RecycleSpace(
            U=_right_solve(U[:, :s], R),
            C=Q,
            Z_U=_right_solve(Z_U[:, :s], R),
            base_shift=base_shift,
            op=op,
            precond=precond,
            theta=None if theta is None else theta[:s],
        )

    def rebuild(self, aop: PreconditionedOperator) -> "RecycleSpace":
        """
        Recompute Z_U and C for a new operator or preconditioner; costs k
        operator and k preconditioner applications on `aop`.
        """
        if self.is_empty():
            return RecycleSpace.empty(aop.n)
        C = np.empty_like(self.U)
        Z_U = np.empty_like(self.U)
        for i in range(self.k):
            C[:, i], Z_U[:, i] = aop.apply(self.U[:, i])
        logger.debug(f"Rebuilt recycle space of dimension {self.k} for shift {aop.shift}")
        return self._normalized(
            C, self.U, Z_U, aop.shift, aop.op, aop.precond, self.theta
        )

    def rebase(self, shift: Shift) -> "RecycleSpace":
        """Move C to the operator shifted by `shift` without operator applications."""
        if self.is_empty() or shift == self.base_shift:
            return self
        delta = shift - self.base_shift
        return self._normalized(
            self.C + delta * self.Z_U, self.U, self.Z_U, shift, self.op, self.precond,
            self.theta,
        )

    def orthonormality_error(self) -> float:
        return float(np.linalg.norm(self.C.conj().T @ self.C - np.eye(self.k)))


@dataclass
class AugmentedArnoldiData(ArnoldiData):
    """Arnoldi data of a recycled cycle plus B = C^H A_p V_m."""

    B: DenseMatrix = field(default_factory=lambda: np.zeros((0, 0), dtype=np.complex128))

    @classmethod
    def from_arnoldi(cls, data: ArnoldiData, B: DenseMatrix) -> "AugmentedArnoldiData":
        return cls(
            V=data.V, H=data.H, Z=data.Z, m=data.m,
            beta=data.beta, breakdown=data.breakdown, B=B,
        )

    @property
    def k(self) -> int:
        return self.B.shape[0]

    @property
    def G(self) -> DenseMatrix:
        """[[I_k, B], [0, H]], of shape (k+m+1) x (k+m)."""
        k, m = self.k, self.m
        G = np.zeros((k + m + 1, k + m), dtype=np.complex128)
        G[:k, :k] = np.eye(k)
        G[:k, k:] = self.B
        G[k:, k:] = self.H
        return G


def initial_projection(
    rspace: RecycleSpace, x_minus1: np.ndarray, r_minus1: np.ndarray
) -> ProjectionResult:
    """Remove the range(C) component of the residual: r0 = (I - C C^H) r."""
    if rspace.is_empty():
        return ProjectionResult(x=x_minus1, r=r_minus1)
    y = rspace.C.conj().T @ r_minus1
    return ProjectionResult(
        x=x_minus1 + rspace.Z_U @ y, r=r_minus1 - rspace.C @ y, y=y
    )


@dataclass
class RecycledCycleResult(CycleResult):
    data: AugmentedArnoldiData


def rgmres_cycle(
    op: SparseOperator,
    base_shift: Shift,
    p: Preconditioner,
    b: np.ndarray,
    x0: np.ndarray,
    rspace: RecycleSpace,
    m: int,
    tol: float,
    *,
    r0: np.ndarray | None = None,
    ref_norm: float | None = None,
    counter: ApplicationCounter | None = None,
) -> RecycledCycleResult:
    """
    One recycled GMRES cycle. The residual of x0 must already be orthogonal to
    rspace.C (see `initial_projection`).
    """
    if m < 1:
        raise ValueError(f"cycle length must be positive, got {m}")
    aop = PreconditionedOperator(
        op, base_shift, p, counter if counter is not None else ApplicationCounter()
    )
    return rgmres_cycle_op(aop, b, x0, rspace, m, tol, r0=r0, ref_norm=ref_norm)


def rgmres_cycle_op(
    aop: PreconditionedOperator,
    b: np.ndarray,
    x0: np.ndarray,
    rspace: RecycleSpace,
    m: int,
    tol: float,
    *,
    r0: np.ndarray | None = None,
    ref_norm: float | None = None,
) -> RecycledCycleResult:
    start = aop.counter.matvecs
    if r0 is None:
        r0 = aop.residual(b, x0)
    residual_matvecs = aop.counter.matvecs - start
    beta = float(np.linalg.norm(r0))
    tol_abs = tol * (beta if ref_norm is None else ref_norm)
    C = None if rspace.is_empty() else rspace.C

    if beta == 0.0 or beta <= tol_abs:
        empty = ArnoldiData.empty(aop.n, beta)
        return RecycledCycleResult(
            x=np.array(x0, dtype=np.complex128, copy=True),
            r=np.array(r0, dtype=np.complex128, copy=True),
            data=AugmentedArnoldiData.from_arnoldi(
                empty, np.zeros((rspace.k, 0), dtype=np.complex128)
            ),
            matvecs=0,
            history=[beta],
            residual_matvecs=residual_matvecs,
            y=np.zeros(0, dtype=np.complex128),
        )

    start = aop.counter.matvecs
    run = arnoldi_cycle(aop, r0, m, tol_abs, C=C)
    data = AugmentedArnoldiData.from_arnoldi(run.data, run.B)
    y = run.y
    x = x0 + data.Z @ y
    if data.k:
        # first k rows of the augmented problem are met exactly
        x = x - rspace.Z_U @ (data.B @ y)
    rhs = np.zeros(data.m + 1, dtype=np.complex128)
    rhs[0] = beta
    r = data.V @ (rhs - data.H @ y)
    logger.debug(
        f"Recycled cycle: k={data.k}, {data.m} steps, residual {run.history[-1]:.3e}"
    )
    return RecycledCycleResult(
        x=x,
        r=r,
        data=data,
        matvecs=aop.counter.matvecs - start,
        history=run.history,
        residual_matvecs=residual_matvecs,
        y=y,
    )


def harmonic_ritz_update(
    data: AugmentedArnoldiData,
    rspace: RecycleSpace,
    k: int,
    *,
    aop: PreconditionedOperator | None = None,
) -> RecycleSpace:
    """
    New recycle space from the k harmonic Ritz vectors of smallest |theta| of
    A_p with respect to range([U V_m]).

    Solves G^H G g = theta G^H W g with W = [C V_{m+1}]^H [U V_m]; the new C,
    U and Z_U are formed from the cycle's bases without touching the operator.
    `aop` is the operator the cycle ran on; it defaults to the old space's.

    Raises:
        HarmonicRitzError: the dense eigensolver failed.
    """
    kold, j = rspace.k, data.m
    if j == 0 or k <= 0:
        return rspace if k > 0 else RecycleSpace.empty(rspace.n)
    G = data.G
    W = np.zeros((kold + j + 1, kold + j), dtype=np.complex128)
    if kold:
        W[:kold, :kold] = rspace.C.conj().T @ rspace.U
        W[kold:, :kold] = data.V.conj().T @ rspace.U
    W[kold : kold + j, kold:] = np.eye(j)

    GtG = G.conj().T @ G
    GtW = G.conj().T @ W
    try:
        # G^H W g = mu G^H G g keeps the eigenvalues finite; theta = 1/mu
        mu, P = scipy.linalg.eig(GtW, GtG)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise HarmonicRitzError(f"harmonic Ritz eigensolve failed: {e}") from e

    with np.errstate(divide="ignore", invalid="ignore"):
        theta = 1.0 / mu
    valid = np.nonzero(np.isfinite(theta))[0]
    if len(valid) == 0:
        raise HarmonicRitzError("no finite harmonic Ritz values")
    order = valid[np.argsort(np.abs(theta[valid]), kind="stable")]
    sel = order[: min(k, kold + j)]
    P = P[:, sel]

    Q, R = _qr_drop(G @ P)
    s = R.shape[0]
    P = P[:, :s]
    C_new = data.V @ Q[kold:, :]
    Y = data.V[:, :j] @ P[kold:, :]
    ZY = data.Z @ P[kold:, :]
    if kold:
        C_new += rspace.C @ Q[:kold, :]
        Y += rspace.U @ P[:kold, :]
        ZY += rspace.Z_U @ P[:kold, :]
    logger.debug(f"Harmonic Ritz update: kept {s} of {kold + j} directions")
    return RecycleSpace(
        U=_right_solve(Y, R),
        C=C_new,
        Z_U=_right_solve(ZY, R),
        base_shift=rspace.base_shift if aop is None else aop.shift,
        op=rspace.op if aop is None else aop.op,
        precond=rspace.precond if aop is None else aop.precond,
        theta=theta[sel][:s],
    )
