"""Right preconditioners and the counted preconditioned operator."""

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .kernels import DimensionError, Shift, SparseOperator, spmv

logger = logging.getLogger("shiftkrylov")

PrecondKind = Literal["identity", "ilu0"]


class PreconditionerError(Exception):
    """Errors raised while building or applying a preconditioner."""


class ZeroPivotError(PreconditionerError):
    """ILU(0) met a zero pivot."""

    def __init__(self, row: int):
        super().__init__(
            f"zero pivot in row {row}; shift the matrix or choose another preconditioner"
        )
        self.row = row


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """M^{-1} applied on the right; `L` and `Umat` are present iff kind == 'ilu0'."""

    kind: PrecondKind
    L: SparseOperator | None = None
    Umat: SparseOperator | None = None
    # shift of the matrix the factors were computed from
    source_shift: Shift = 0j

    @classmethod
    def identity(cls) -> "Preconditioner":
        return cls(kind="identity")

    @property
    def n(self) -> int | None:
        return None if self.L is None else self.L.nrows

    def matches(self, other: "Preconditioner | None") -> bool:
        """
        Same M^{-1} on the same matrix. ILU(0) factors are fixed by the matrix
        and the shift they were computed for, so the factors are not compared.
        """
        if other is None:
            return False
        if self is other:
            return True
        if self.kind != other.kind:
            return False
        return self.kind == "identity" or (
            self.n == other.n and self.source_shift == other.source_shift
        )


def ilu0_factor(op: SparseOperator, shift: Shift = 0) -> Preconditioner:
    """
    Zero-fill incomplete LU of A + shift*I, IKJ ordering on the CSR arrays.

    Raises:
        ZeroPivotError: a diagonal entry is structurally missing or vanishes.
    """
    if not op.is_square():
        raise DimensionError(f"ILU(0) needs a square matrix, got {op.shape}")
    src = op.shifted(shift) if shift != 0 else op
    n = src.nrows
    row_ptr = src.row_ptr
    col_idx = src.col_idx
    lu = src.values.copy()

    diag_pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        start, end = row_ptr[i], row_ptr[i + 1]
        hit = np.nonzero(col_idx[start:end] == i)[0]
        if len(hit) == 0:
            raise ZeroPivotError(i)
        diag_pos[i] = start + hit[0]

    # column -> position map of the current row
    iw = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        start, end = row_ptr[i], row_ptr[i + 1]
        cols = col_idx[start:end]
        iw[cols] = np.arange(start, end)
        for pos in range(start, diag_pos[i]):
            k = col_idx[pos]
            pivot = lu[diag_pos[k]]
            if pivot == 0:
                raise ZeroPivotError(int(k))
            lu[pos] /= pivot
            # upper part of row k intersected with the pattern of row i
            kpos = np.arange(diag_pos[k] + 1, row_ptr[k + 1])
            target = iw[col_idx[kpos]]
            mask = target >= 0
            lu[target[mask]] -= lu[pos] * lu[kpos[mask]]
        iw[cols] = -1
        if lu[diag_pos[i]] == 0:
            raise ZeroPivotError(i)

    factors = scipy.sparse.csr_array((lu, col_idx.copy(), row_ptr.copy()), shape=(n, n))
    eye = scipy.sparse.identity(n, dtype=np.complex128, format="csr")
    L = SparseOperator(scipy.sparse.csr_array(scipy.sparse.tril(factors, k=-1) + eye))
    U = SparseOperator(scipy.sparse.csr_array(scipy.sparse.triu(factors)))
    logger.debug(f"ILU(0) of a {n}x{n} matrix with {src.nnz} nonzeros (shift {shift})")
    return Preconditioner(kind="ilu0", L=L, Umat=U, source_shift=complex(shift))


def apply_inverse(p: Preconditioner, v: np.ndarray) -> np.ndarray:
    """Return M^{-1} v."""
    if p.kind == "identity":
        return np.array(v, dtype=np.complex128, copy=True)
    if v.ndim != 1 or len(v) != p.n:
        raise DimensionError(f"preconditioner of size {p.n} applied to shape {v.shape}")
    w = scipy.sparse.linalg.spsolve_triangular(
        p.L.matrix, v, lower=True, unit_diagonal=True
    )
    return scipy.sparse.linalg.spsolve_triangular(p.Umat.matrix, w, lower=False)


def smallest_shift(shifts) -> int:
    """Index of the smallest shift: minimum modulus, ties by smallest real part."""
    if len(shifts) == 0:
        raise ValueError("empty shift list")
    return min(range(len(shifts)), key=lambda i: (abs(shifts[i]), shifts[i].real))


def build_preconditioner(
    op: SparseOperator, shifts, kind: str = "ilu0"
) -> Preconditioner:
    """One preconditioner for a whole family, built for the smallest shift."""
    if kind in ("none", "identity"):
        return Preconditioner.identity()
    if kind != "ilu0":
        raise PreconditionerError(f"unknown preconditioner kind {kind!r}")
    sigma = complex(shifts[smallest_shift(shifts)]) if len(shifts) else 0j
    return ilu0_factor(op, sigma)


@dataclass
class ApplicationCounter:
    """Operator and preconditioner applications attributed to one system."""

    matvecs: int = 0
    precond_applies: int = 0

    def snapshot(self) -> tuple[int, int]:
        return self.matvecs, self.precond_applies


@dataclass(eq=False)
class PreconditionedOperator:
    """
    The right-preconditioned base operator (A + shift*I) M^{-1}.

    Every call to `apply` costs exactly one sparse product and one
    preconditioner solve and is recorded in `counter`.
    """

    op: SparseOperator
    shift: Shift
    precond: Preconditioner
    counter: ApplicationCounter = field(default_factory=ApplicationCounter)

    @property
    def n(self) -> int:
        return self.op.nrows

    @property
    def norm1(self) -> float:
        return self.op.shifted_norm1(self.shift)

    def apply(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ((A + shift*I) M^{-1} v, M^{-1} v)."""
        z = apply_inverse(self.precond, v)
        self.counter.precond_applies += 1
        w = spmv(self.op, z, self.shift)
        self.counter.matvecs += 1
        return w, z

    def residual(self, b: np.ndarray, x: np.ndarray) -> np.ndarray:
        """b - (A + shift*I) x; free when x is zero."""
        if not np.any(x):
            return np.array(b, dtype=np.complex128, copy=True)
        self.counter.matvecs += 1
        return b - spmv(self.op, x, self.shift)
