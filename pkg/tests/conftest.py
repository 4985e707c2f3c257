"""
Shared fixtures for the shiftkrylov test suite.
"""

import numpy as np
import pytest
import scipy.sparse

from shiftkrylov.kernels import SparseOperator
from shiftkrylov.precond import (
    ApplicationCounter,
    PreconditionedOperator,
    Preconditioner,
    ilu0_factor,
)
from shiftkrylov.problems import synthetic_convdiff
from shiftkrylov.rgmres import RecycleSpace

DESK_SHIFTS = [0.01, 0.05, 0.5, 1.0]


def random_operator(rng: np.random.Generator, n: int, density: float = 0.05) -> SparseOperator:
    """Sparse complex matrix with eigenvalues in a disk around 4."""
    R = scipy.sparse.random(n, n, density=density, random_state=rng, format="csr")
    R = R.astype(np.complex128)
    R.data[:] = rng.uniform(-1, 1, R.nnz) + 1j * rng.uniform(-1, 1, R.nnz)
    eye = scipy.sparse.identity(n, dtype=np.complex128, format="csr")
    return SparseOperator(scipy.sparse.csr_array(R + 4 * eye))


def random_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def random_shift(rng: np.random.Generator) -> complex:
    """Magnitude log-uniform in [1e-3, 1e3], phase in the right half plane."""
    magnitude = 10 ** rng.uniform(-3, 3)
    return complex(magnitude * np.exp(1j * rng.uniform(-np.pi / 2, np.pi / 2)))


def recycle_space(aop: PreconditionedOperator, k: int, rng: np.random.Generator) -> RecycleSpace:
    """A random recycle space built for `aop`."""
    U = np.linalg.qr(
        rng.standard_normal((aop.n, k)) + 1j * rng.standard_normal((aop.n, k))
    )[0]
    return RecycleSpace(U=U, C=U.copy(), Z_U=U.copy()).rebuild(aop)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def convdiff():
    """400-dimensional nonsymmetric convection-diffusion operator."""
    return synthetic_convdiff(20, 10.0, 0.0)


@pytest.fixture
def small_convdiff():
    return synthetic_convdiff(8, 5.0, 0.0)


@pytest.fixture
def identity_precond():
    return Preconditioner.identity()


@pytest.fixture
def counted(convdiff):
    """Base operator A + 0.01 I with an ILU(0) right preconditioner."""
    return PreconditionedOperator(
        convdiff, 0.01, ilu0_factor(convdiff, 0.01), ApplicationCounter()
    )
