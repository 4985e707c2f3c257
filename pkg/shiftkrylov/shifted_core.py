"""
Generic minimum-residual projection of a shifted residual onto a search space.

The structured projections in `shifted_gmres` and `shifted_rgmres` never form
the image of the search space explicitly; this module does, and serves as the
reference those paths are checked against.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import DenseMatrix, DimensionError, hermitian_solve

logger = logging.getLogger("shiftkrylov")

NESTING_TOL = 1e-8


class ProjectionError(Exception):
    """The search space cannot support a projection."""


class NestingError(ProjectionError):
    """The smaller image space is not contained in the larger one."""


@dataclass
class SearchSpace:
    """
    S holds the correction directions in solution space (M^{-1} times a basis);
    AS_sigma their images under the shifted operator.
    """

    S: DenseMatrix
    AS_sigma: DenseMatrix

    def __post_init__(self):
        if self.S.shape != self.AS_sigma.shape:
            raise DimensionError(
                f"search space {self.S.shape} and image {self.AS_sigma.shape} differ"
            )

    @property
    def dim(self) -> int:
        return self.S.shape[1]

    def truncated(self, s: int) -> "SearchSpace":
        return SearchSpace(self.S[:, :s], self.AS_sigma[:, :s])


@dataclass
class ProjectionResult:
    x: np.ndarray
    r: np.ndarray
    # set when a degenerate projection matrix forced the update to be skipped
    skipped: bool = False
    y: np.ndarray | None = None


def project_minres(space: SearchSpace, x0: np.ndarray, r0: np.ndarray) -> ProjectionResult:
    """
    Minimize ||r0 - AS_sigma y|| over y and apply the correction.

    Raises:
        ProjectionError: the space is empty.
        SingularMatrixError: the image vectors are numerically dependent.
    """
    if space.dim == 0:
        raise ProjectionError("cannot project onto an empty search space")
    W = space.AS_sigma
    N = W.conj().T @ W
    y = hermitian_solve(N, W.conj().T @ r0)
    return ProjectionResult(x=x0 + space.S @ y, r=r0 - W @ y, y=y)


def _orth(W: DenseMatrix) -> DenseMatrix:
    if W.shape[1] == 0:
        return W
    return scipy.linalg.orth(W)


@dataclass
class DecompositionResult:
    lhs: np.ndarray
    rhs: np.ndarray
    gap: float
    # (I - P_m) P_{m+1} r0 and (I - P_{m+1}) r0
    term1: np.ndarray
    term2: np.ndarray

    @property
    def bound(self) -> float:
        return float(np.linalg.norm(self.term1) + np.linalg.norm(self.term2))


def residual_decomposition_check(
    space_m: SearchSpace, space_m1: SearchSpace, r0: np.ndarray
) -> DecompositionResult:
    """
    Compare the projected residual over T_m = range(space_m.AS_sigma) with its
    split (I - P_m) P_{m+1} r0 + (I - P_{m+1}) r0 for a larger space T_{m+1}.

    Raises:
        NestingError: T_m is not contained in T_{m+1}.
    """
    Q1 = _orth(space_m1.AS_sigma)
    Wm = space_m.AS_sigma
    if Wm.shape[1]:
        outside = Wm - Q1 @ (Q1.conj().T @ Wm)
        scale = max(np.linalg.norm(Wm), np.finfo(float).tiny)
        if np.linalg.norm(outside) > NESTING_TOL * scale:
            raise NestingError(
                f"T_m leaves T_m+1 (relative distance {np.linalg.norm(outside) / scale:.2e})"
            )

    if space_m.dim:
        lhs = project_minres(space_m, np.zeros(space_m.S.shape[0], complex), r0).r
    else:
        lhs = np.array(r0, dtype=np.complex128, copy=True)
    Q0 = _orth(Wm)
    p1r0 = Q1 @ (Q1.conj().T @ r0)
    term1 = p1r0 - Q0 @ (Q0.conj().T @ p1r0)
    term2 = r0 - p1r0
    rhs = term1 + term2
    return DecompositionResult(
        lhs=lhs, rhs=rhs, gap=float(np.linalg.norm(lhs - rhs)), term1=term1, term2=term2
    )
