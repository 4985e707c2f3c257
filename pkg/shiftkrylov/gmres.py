"""Restarted right-preconditioned GMRES cycles exposing their Arnoldi bases."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .kernels import BREAKDOWN_TOL, DenseMatrix, GivensLeastSquares, Shift, SparseOperator
from .kernels import mgs_orthogonalize
from .precond import ApplicationCounter, PreconditionedOperator, Preconditioner

logger = logging.getLogger("shiftkrylov")


@dataclass
class ArnoldiData:
    """
    Bases of one cycle: (A + s I) M^{-1} V[:, :m] = V H and Z = M^{-1} V[:, :m].
    """

    V: DenseMatrix  # n x (m+1)
    H: DenseMatrix  # (m+1) x m
    Z: DenseMatrix  # n x m
    m: int
    beta: float = 0.0
    breakdown: bool = False

    @classmethod
    def empty(cls, n: int, beta: float = 0.0) -> "ArnoldiData":
        return cls(
            V=np.zeros((n, 1), dtype=np.complex128),
            H=np.zeros((1, 0), dtype=np.complex128),
            Z=np.zeros((n, 0), dtype=np.complex128),
            m=0,
            beta=beta,
        )

    @property
    def n(self) -> int:
        return self.V.shape[0]

    def shifted_image(self, sigma: Shift) -> DenseMatrix:
        """V H + sigma Z, the image of the search space under the shifted operator."""
        return self.V @ self.H + sigma * self.Z


@dataclass
class CycleResult:
    x: np.ndarray
    r: np.ndarray
    data: ArnoldiData
    matvecs: int
    # estimated residual norm after each Arnoldi step, starting with ||r0||
    history: list[float] = field(default_factory=list)
    residual_matvecs: int = 0
    y: np.ndarray | None = None

    @property
    def resnorm(self) -> float:
        return float(np.linalg.norm(self.r))


@dataclass
class _ArnoldiRun:
    data: ArnoldiData
    B: DenseMatrix
    y: np.ndarray
    history: list[float]


def arnoldi_cycle(
    aop: PreconditionedOperator,
    r0: np.ndarray,
    m: int,
    tol_abs: float,
    C: DenseMatrix | None = None,
) -> _ArnoldiRun:
    """
    Up to `m` Arnoldi steps on (I - C C^H) A_p starting from r0, with the
    Givens least-squares solution of the projected problem.

    Stops early once the least-squares residual drops to `tol_abs` or the
    Krylov space becomes invariant.
    """
    n = aop.n
    k = 0 if C is None else C.shape[1]
    beta = float(np.linalg.norm(r0))
    V = np.zeros((n, m + 1), dtype=np.complex128)
    Z = np.zeros((n, m), dtype=np.complex128)
    H = np.zeros((m + 1, m), dtype=np.complex128)
    B = np.zeros((k, m), dtype=np.complex128)
    history = [beta]
    if beta == 0.0:
        return _ArnoldiRun(ArnoldiData.empty(n), B[:, :0], np.zeros(0, complex), history)

    V[:, 0] = r0 / beta
    lsq = GivensLeastSquares(m, beta)
    norm1 = aop.norm1
    breakdown = False
    j = 0
    while j < m:
        w, z = aop.apply(V[:, j])
        Z[:, j] = z
        if k:
            w, B[:, j] = mgs_orthogonalize(w, C)
        w, h = mgs_orthogonalize(w, V[:, : j + 1])
        hnext = float(np.linalg.norm(w))
        H[: j + 1, j] = h
        H[j + 1, j] = hnext
        res = lsq.append_column(H[: j + 2, j])
        history.append(res)
        j += 1
        if hnext <= BREAKDOWN_TOL * norm1 * np.linalg.norm(z):
            logger.debug(f"Happy breakdown after {j} Arnoldi steps")
            breakdown = True
            break
        V[:, j] = w / hnext
        if res <= tol_abs:
            break

    data = ArnoldiData(
        V=V[:, : j + 1],
        H=H[: j + 1, :j],
        Z=Z[:, :j],
        m=j,
        beta=beta,
        breakdown=breakdown,
    )
    return _ArnoldiRun(data, B[:, :j], lsq.solve(), history)


def gmres_cycle(
    op: SparseOperator,
    base_shift: Shift,
    p: Preconditioner,
    b: np.ndarray,
    x0: np.ndarray,
    m: int,
    tol: float,
    *,
    r0: np.ndarray | None = None,
    ref_norm: float | None = None,
    counter: ApplicationCounter | None = None,
) -> CycleResult:
    """
    One cycle of right-preconditioned GMRES for (A + base_shift*I) x = b.

    Args:
        tol: relative tolerance; the cycle stops once the residual norm is at or
            below tol * ref_norm (ref_norm defaults to ||r0||).
        r0: current residual, if already known. Otherwise it is formed from x0
            at the cost of one operator application (none when x0 == 0).
    """
    if m < 1:
        raise ValueError(f"cycle length must be positive, got {m}")
    aop = PreconditionedOperator(
        op, base_shift, p, counter if counter is not None else ApplicationCounter()
    )
    return gmres_cycle_op(aop, b, x0, m, tol, r0=r0, ref_norm=ref_norm)


def gmres_cycle_op(
    aop: PreconditionedOperator,
    b: np.ndarray,
    x0: np.ndarray,
    m: int,
    tol: float,
    *,
    r0: np.ndarray | None = None,
    ref_norm: float | None = None,
) -> CycleResult:
    """`gmres_cycle` on an existing counted operator."""
    start = aop.counter.matvecs
    if r0 is None:
        r0 = aop.residual(b, x0)
    residual_matvecs = aop.counter.matvecs - start
    beta = float(np.linalg.norm(r0))
    tol_abs = tol * (beta if ref_norm is None else ref_norm)

    if beta == 0.0 or beta <= tol_abs:
        return CycleResult(
            x=np.array(x0, dtype=np.complex128, copy=True),
            r=np.array(r0, dtype=np.complex128, copy=True),
            data=ArnoldiData.empty(aop.n, beta),
            matvecs=0,
            history=[beta],
            residual_matvecs=residual_matvecs,
            y=np.zeros(0, dtype=np.complex128),
        )

    start = aop.counter.matvecs
    run = arnoldi_cycle(aop, r0, m, tol_abs)
    data = run.data
    x = x0 + data.Z @ run.y
    rhs = np.zeros(data.m + 1, dtype=np.complex128)
    rhs[0] = beta
    r = data.V @ (rhs - data.H @ run.y)
    logger.debug(f"GMRES cycle: {data.m} steps, residual {run.history[-1]:.3e}")
    return CycleResult(
        x=x,
        r=r,
        data=data,
        matvecs=aop.counter.matvecs - start,
        history=run.history,
        residual_matvecs=residual_matvecs,
        y=run.y,
    )
