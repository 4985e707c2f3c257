"""Sparse and dense computational primitives shared by all solvers.

Everything here is pure with respect to its inputs: a `SparseOperator` is
immutable once built and may be shared between threads.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import TypeAlias

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

logger = logging.getLogger("shiftkrylov")

# column-major complex storage for V, Z, U, C, H and friends
DenseMatrix: TypeAlias = np.ndarray
Shift: TypeAlias = complex

EPS = np.finfo(np.float64).eps
REORTH_TOL = 1e-10
BREAKDOWN_TOL = 1e-14


class KernelError(Exception):
    """Errors raised by the numerical kernels."""


class DimensionError(KernelError, ValueError):
    """Operand shapes do not agree."""


class InvalidOperatorError(KernelError, ValueError):
    """CSR arrays violate the compressed-row layout."""


class SingularMatrixError(KernelError):
    """A small dense system is numerically singular."""

    def __init__(self, message: str, cond: float):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.cond = cond


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """A complex sparse matrix in compressed-row layout."""

    matrix: scipy.sparse.csr_array

    def __post_init__(self):
        mat = self.matrix
        if not isinstance(mat, scipy.sparse.csr_array):
            mat = scipy.sparse.csr_array(mat)
        if not np.iscomplexobj(mat.data):
            mat = mat.astype(np.complex128)
        if not mat.has_canonical_format:
            mat = mat.copy()
            mat.sum_duplicates()
        object.__setattr__(self, "matrix", mat)
        self._validate()

    def _validate(self):
        nrows, ncols = self.matrix.shape
        row_ptr, col_idx = self.row_ptr, self.col_idx
        if len(row_ptr) != nrows + 1:
            raise InvalidOperatorError(
                f"row_ptr has length {len(row_ptr)}, expected {nrows + 1}"
            )
        if row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0):
            raise InvalidOperatorError("row_ptr must start at 0 and be nondecreasing")
        if row_ptr[-1] != len(col_idx) or len(col_idx) != len(self.values):
            raise InvalidOperatorError(
                f"row_ptr[nrows]={row_ptr[-1]} does not match nnz={len(col_idx)}"
            )
        if len(col_idx) and (col_idx.min() < 0 or col_idx.max() >= ncols):
            raise InvalidOperatorError(f"column index outside [0, {ncols})")
        if not np.all(np.isfinite(self.values)):
            raise InvalidOperatorError("operator holds NaN or Inf values")

    @classmethod
    def from_csr_arrays(cls, nrows, ncols, row_ptr, col_idx, values) -> "SparseOperator":
        row_ptr = np.asarray(row_ptr, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values, dtype=np.complex128)
        # validate before scipy gets a chance to reject the arrays itself
        if len(row_ptr) != nrows + 1 or row_ptr[-1] != len(col_idx):
            raise InvalidOperatorError(
                f"inconsistent CSR arrays for a {nrows}x{ncols} operator"
            )
        if len(col_idx) and (col_idx.min() < 0 or col_idx.max() >= ncols):
            raise InvalidOperatorError(f"column index outside [0, {ncols})")
        mat = scipy.sparse.csr_array((values, col_idx, row_ptr), shape=(nrows, ncols))
        return cls(mat)

    @classmethod
    def from_dense(cls, a) -> "SparseOperator":
        return cls(scipy.sparse.csr_array(np.asarray(a, dtype=np.complex128)))

    @classmethod
    def identity(cls, n: int) -> "SparseOperator":
        return cls(scipy.sparse.identity(n, dtype=np.complex128, format="csr"))

    @property
    def nrows(self) -> int:
        return self.matrix.shape[0]

    @property
    def ncols(self) -> int:
        return self.matrix.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def row_ptr(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def col_idx(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    @property
    def nnz(self) -> int:
        return len(self.matrix.data)

    @cached_property
    def norm1(self) -> float:
        """Maximum absolute column sum."""
        if self.nnz == 0:
            return 0.0
        return float(scipy.sparse.linalg.norm(self.matrix, 1))

    def shifted_norm1(self, shift: Shift) -> float:
        if shift == 0:
            return self.norm1
        return self.shifted(shift).norm1

    def shifted(self, shift: Shift) -> "SparseOperator":
        """The operator A + shift*I as a new matrix."""
        eye = scipy.sparse.identity(self.nrows, dtype=np.complex128, format="csr")
        return SparseOperator(scipy.sparse.csr_array(self.matrix + shift * eye))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def is_square(self) -> bool:
        return self.nrows == self.ncols


def spmv(op: SparseOperator, x: np.ndarray, shift: Shift = 0) -> np.ndarray:
    """Return (A + shift*I) x."""
    if not op.is_square() or x.ndim != 1 or len(x) != op.ncols:
        raise DimensionError(
            f"cannot apply a {op.nrows}x{op.ncols} operator to a vector of shape {x.shape}"
        )
    y = op.matrix @ x
    if shift != 0:
        y = y + shift * x
    return y


def mgs_orthogonalize(
    w: np.ndarray, basis: DenseMatrix
) -> tuple[np.ndarray, np.ndarray]:
    """
    Orthogonalize `w` against the orthonormal columns of `basis` by modified
    Gram-Schmidt. A second pass runs when the measured loss of orthogonality of
    the first result exceeds REORTH_TOL.

    Returns:
        (w_orth, coeffs) with w = basis @ coeffs + w_orth
    """
    k = basis.shape[1] if basis.ndim == 2 else 0
    coeffs = np.zeros(k, dtype=np.complex128)
    w_orth = np.array(w, dtype=np.complex128, copy=True)
    if k == 0:
        return w_orth, coeffs
    wnorm = np.linalg.norm(w_orth)
    if wnorm == 0.0:
        return w_orth, coeffs

    def _pass():
        for i in range(k):
            c = np.vdot(basis[:, i], w_orth)
            w_orth[:] -= c * basis[:, i]
            coeffs[i] += c

    _pass()
    onorm = np.linalg.norm(w_orth)
    if onorm > 0.0:
        loss = np.max(np.abs(basis.conj().T @ w_orth)) / onorm
        if loss > REORTH_TOL:
            logger.debug(f"Reorthogonalizing against {k} vectors (loss {loss:.2e})")
            _pass()
    return w_orth, coeffs


def givens(a: complex, b: complex) -> tuple[float, complex, complex]:
    """
    Complex Givens rotation with real cosine.

    Returns (c, s, r) such that [[c, s], [-conj(s), c]] @ [a, b] = [r, 0].
    """
    absa, absb = abs(a), abs(b)
    if absb == 0.0:
        return 1.0, 0j, complex(a)
    if absa == 0.0:
        return 0.0, np.conj(b) / absb, complex(absb)
    t = np.hypot(absa, absb)
    phase = a / absa
    return absa / t, phase * np.conj(b) / t, phase * t


class GivensLeastSquares:
    """
    Incremental QR of an upper Hessenberg matrix, one column at a time, for
    min ||beta e_1 - H y||.
    """

    def __init__(self, max_cols: int, beta: float):
        self.R = np.zeros((max_cols, max_cols), dtype=np.complex128)
        self.g = np.zeros(max_cols + 1, dtype=np.complex128)
        self.g[0] = beta
        self.cs = np.zeros(max_cols)
        self.sn = np.zeros(max_cols, dtype=np.complex128)
        self.ncols = 0

    @property
    def resnorm(self) -> float:
        return float(abs(self.g[self.ncols]))

    def append_column(self, h: np.ndarray) -> float:
        """Add column j (length j+2) of the Hessenberg matrix; returns the new residual norm."""
        j = self.ncols
        col = np.array(h[: j + 2], dtype=np.complex128, copy=True)
        for i in range(j):
            c, s = self.cs[i], self.sn[i]
            top = c * col[i] + s * col[i + 1]
            col[i + 1] = -np.conj(s) * col[i] + c * col[i + 1]
            col[i] = top
        c, s, r = givens(col[j], col[j + 1])
        self.cs[j], self.sn[j] = c, s
        self.R[: j + 1, j] = col[: j + 1]
        self.R[j, j] = r
        gj, gj1 = self.g[j], self.g[j + 1]
        self.g[j] = c * gj + s * gj1
        self.g[j + 1] = -np.conj(s) * gj + c * gj1
        self.ncols = j + 1
        return self.resnorm

    def is_rank_deficient(self, scale: float) -> bool:
        diag = np.abs(np.diag(self.R[: self.ncols, : self.ncols]))
        return bool(np.any(diag <= EPS * max(scale, np.finfo(float).tiny)))

    def solve(self) -> np.ndarray:
        j = self.ncols
        if j == 0:
            return np.zeros(0, dtype=np.complex128)
        return scipy.linalg.solve_triangular(self.R[:j, :j], self.g[:j])


@dataclass
class LeastSquaresResult:
    y: np.ndarray
    resnorm: float
    breakdown: bool = False


def hessenberg_lsq(H: DenseMatrix, rhs: np.ndarray) -> LeastSquaresResult:
    """
    Minimize ||H y - rhs|| for an upper Hessenberg H of shape (j+1, j).

    A rank-deficient H is reported through `breakdown`; `y` is then the
    minimum-norm solution.
    """
    H = np.asarray(H, dtype=np.complex128)
    rhs = np.asarray(rhs, dtype=np.complex128)
    if H.ndim != 2 or H.shape[0] != H.shape[1] + 1 or len(rhs) != H.shape[0]:
        raise DimensionError(f"expected a (j+1)xj Hessenberg, got {H.shape} / {rhs.shape}")
    j = H.shape[1]

    # rotate the rhs into place by running the incremental QR from a unit start
    lsq = GivensLeastSquares(j, 0.0)
    lsq.g[: j + 1] = rhs
    for col in range(j):
        lsq.append_column(H[: col + 2, col])

    if lsq.is_rank_deficient(np.linalg.norm(H, 1)):
        logger.debug("Hessenberg least squares is rank deficient, using lstsq")
        y, *_ = scipy.linalg.lstsq(H, rhs)
        return LeastSquaresResult(
            y=y, resnorm=float(np.linalg.norm(H @ y - rhs)), breakdown=True
        )
    return LeastSquaresResult(y=lsq.solve(), resnorm=lsq.resnorm)


def hermitian_solve(N: DenseMatrix, rhs: np.ndarray) -> np.ndarray:
    """
    Solve N y = rhs for a Hermitian positive (semi)definite Gram matrix N.

    Cholesky is tried first; a nonpositive pivot falls back to the pivoted
    Hermitian-indefinite solver. Raises SingularMatrixError when the condition
    estimate exceeds 1/eps.
    """
    N = np.asarray(N, dtype=np.complex128)
    rhs = np.asarray(rhs, dtype=np.complex128)
    if N.ndim != 2 or N.shape[0] != N.shape[1] or N.shape[0] != rhs.shape[0]:
        raise DimensionError(f"cannot solve a {N.shape} system with rhs {rhs.shape}")
    if N.shape[0] == 0:
        return np.zeros_like(rhs)
    if not np.all(np.isfinite(N)):
        raise SingularMatrixError("projection matrix holds NaN or Inf", np.inf)
    N = 0.5 * (N + N.conj().T)

    try:
        factor = scipy.linalg.cho_factor(N, check_finite=False)
        diag = np.abs(np.diag(factor[0]))
        cond = (diag.max() / diag.min()) ** 2 if diag.min() > 0 else np.inf
        if cond > 1.0 / EPS:
            raise SingularMatrixError("Gram matrix is numerically singular", cond)
        return scipy.linalg.cho_solve(factor, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        logger.debug("Cholesky failed on projection matrix, falling back to LDL^H")

    cond = float(np.linalg.cond(N))
    if not np.isfinite(cond) or cond > 1.0 / EPS:
        raise SingularMatrixError("Gram matrix is numerically singular", cond)
    try:
        return scipy.linalg.solve(N, rhs, assume_a="her", check_finite=False)
    except scipy.linalg.LinAlgError as e:
        raise SingularMatrixError(f"Hermitian solve failed: {e}", np.inf) from e
