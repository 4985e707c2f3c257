"""
Tests for recycle-space and augmented seed projections and the shifted
recycled GMRES solver.
"""

from unittest import mock

import numpy as np
import pytest

from shiftkrylov.kernels import spmv
from shiftkrylov.precond import (
    ApplicationCounter,
    PreconditionedOperator,
    Preconditioner,
    build_preconditioner,
    ilu0_factor,
)
from shiftkrylov.problems import synthetic_convdiff
from shiftkrylov.rgmres import HarmonicRitzError, RecycleSpace, initial_projection, rgmres_cycle_op
from shiftkrylov.shifted_core import SearchSpace, project_minres
from shiftkrylov.shifted_gmres import ProjectionCache, ShiftedFamily, project_shift, sgmres_solve
from shiftkrylov.shifted_rgmres import (
    AugmentedProjectionCache,
    assemble_N_sigma_aug,
    initial_shift_projection,
    project_shift_aug,
    project_shifts_aug,
    srgmres_solve,
)

from .conftest import DESK_SHIFTS, random_operator, random_shift, random_vector, recycle_space


def _random_recycled_cycle(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(40, 201))
    m = int(rng.integers(5, 21))
    k = int(rng.integers(1, 7))
    op = random_operator(rng, n, density=3.0 / n)
    base = random_shift(rng) * 1e-2
    aop = PreconditionedOperator(op, base, ilu0_factor(op, base), ApplicationCounter())
    rspace = recycle_space(aop, k, rng)
    b = random_vector(rng, n)
    start = initial_projection(rspace, np.zeros_like(b), b)
    res = rgmres_cycle_op(aop, b, start.x, rspace, m, 0.0, r0=start.r)
    return rng, aop, rspace, res.data


class TestAugmentedProjectionOracle:
    """Structured projections agree with explicit dense least squares."""

    @pytest.mark.parametrize("seed", range(50))
    def test_matches_dense_oracle(self, seed):
        rng, aop, rspace, data = _random_recycled_cycle(seed)
        delta = random_shift(rng)
        x0, r0 = random_vector(rng, data.n), random_vector(rng, data.n)

        cache = AugmentedProjectionCache.from_cycle(data, rspace)
        out = project_shift_aug(data, rspace, cache, delta, x0, r0, simplified=False)
        S = np.hstack([rspace.Z_U, data.Z])
        W = np.hstack([rspace.C, data.V]) @ data.G + delta * S
        oracle = project_minres(SearchSpace(S, W), x0, r0)
        assert np.linalg.norm(out.r - oracle.r) <= 1e-10 * np.linalg.norm(r0)
        assert np.linalg.norm(out.r) <= np.linalg.norm(r0)

    @pytest.mark.parametrize("seed", range(50))
    def test_initial_projection_matches_dense_oracle(self, seed):
        rng, aop, rspace, data = _random_recycled_cycle(seed)
        delta = random_shift(rng)
        x0, r0 = random_vector(rng, data.n), random_vector(rng, data.n)

        out = initial_shift_projection(rspace, delta, x0, r0)
        oracle = project_minres(SearchSpace(rspace.Z_U, rspace.C + delta * rspace.Z_U), x0, r0)
        assert np.linalg.norm(out.r - oracle.r) <= 1e-10 * np.linalg.norm(r0)
        assert np.linalg.norm(out.r) <= np.linalg.norm(r0)

    def test_unpreconditioned_assembly(self, convdiff, rng):
        """With M = I, Z_U = U and Z = V_m, and the assembly still matches the oracle."""
        aop = PreconditionedOperator(convdiff, 0.05, Preconditioner.identity(), ApplicationCounter())
        rspace = recycle_space(aop, 4, rng)
        b = random_vector(rng, aop.n)
        start = initial_projection(rspace, np.zeros_like(b), b)
        data = rgmres_cycle_op(aop, b, start.x, rspace, 15, 0.0, r0=start.r).data
        np.testing.assert_array_equal(rspace.Z_U, rspace.U)
        np.testing.assert_array_equal(data.Z, data.V[:, : data.m])

        delta = 0.45 - 0.1j
        r0 = random_vector(rng, aop.n)
        x0 = np.zeros(aop.n, dtype=complex)
        cache = AugmentedProjectionCache.from_cycle(data, rspace)
        out = project_shift_aug(data, rspace, cache, delta, x0, r0, simplified=False)
        S = np.hstack([rspace.U, data.V[:, : data.m]])
        W = np.hstack([rspace.C, data.V]) @ data.G + delta * S
        oracle = project_minres(SearchSpace(S, W), x0, r0)
        assert np.linalg.norm(out.r - oracle.r) <= 1e-10 * np.linalg.norm(r0)

    def test_projection_updates_true_residual(self, counted, rng):
        """r0 - dr equals b - (A + s I)(x0 + dx) when r0 is the true residual."""
        rspace = recycle_space(counted, 5, rng)
        b = random_vector(rng, counted.n)
        start = initial_projection(rspace, np.zeros_like(b), b)
        data = rgmres_cycle_op(counted, b, start.x, rspace, 20, 0.0, r0=start.r).data
        sigma = 0.5
        delta = sigma - counted.shift

        first = initial_shift_projection(rspace, delta, np.zeros_like(b), b)
        cache = AugmentedProjectionCache.from_cycle(data, rspace)
        out = project_shift_aug(data, rspace, cache, delta, first.x, first.r)
        explicit = b - spmv(counted.op, out.x, sigma)
        assert np.linalg.norm(out.r - explicit) <= 1e-10 * np.linalg.norm(b)


class TestSimplifiedRhs:
    """After a recycle-space projection the first k entries of the rhs vanish."""

    @pytest.fixture
    def projected(self, counted, rng):
        rspace = recycle_space(counted, 6, rng)
        b = random_vector(rng, counted.n)
        delta = 0.49 + 0.05j
        first = initial_shift_projection(rspace, delta, np.zeros_like(b), b)
        return rspace, b, delta, first

    def test_recycle_components_cancel(self, projected):
        rspace, b, delta, first = projected
        W = rspace.C + delta * rspace.Z_U
        assert np.linalg.norm(W.conj().T @ first.r) <= 1e-10 * np.linalg.norm(b)

    def test_simplified_equals_full(self, counted, projected):
        rspace, b, delta, first = projected
        start = initial_projection(rspace, np.zeros_like(b), b)
        data = rgmres_cycle_op(counted, b, start.x, rspace, 20, 0.0, r0=start.r).data
        cache = AugmentedProjectionCache.from_cycle(data, rspace)
        full = project_shift_aug(data, rspace, cache, delta, first.x, first.r, simplified=False)
        simple = project_shift_aug(data, rspace, cache, delta, first.x, first.r, simplified=True)
        assert np.linalg.norm(full.r - simple.r) <= 1e-10 * np.linalg.norm(b)
        assert np.linalg.norm(full.y - simple.y) <= 1e-6 * np.linalg.norm(full.y)

    def test_gram_matrix_hermitian(self, counted, projected):
        rspace, b, delta, first = projected
        start = initial_projection(rspace, np.zeros_like(b), b)
        data = rgmres_cycle_op(counted, b, start.x, rspace, 10, 0.0, r0=start.r).data
        cache = AugmentedProjectionCache.from_cycle(data, rspace)
        N = assemble_N_sigma_aug(cache, delta)
        np.testing.assert_allclose(N, N.conj().T, atol=1e-12 * np.linalg.norm(N))
        np.testing.assert_array_equal(assemble_N_sigma_aug(cache, 0), cache.GtG)

    def test_cache_rejects_other_space(self, counted, projected, rng):
        rspace, b, delta, first = projected
        start = initial_projection(rspace, np.zeros_like(b), b)
        data = rgmres_cycle_op(counted, b, start.x, rspace, 10, 0.0, r0=start.r).data
        with pytest.raises(ValueError):
            AugmentedProjectionCache.from_cycle(data, recycle_space(counted, 2, rng))


class TestWithoutRecycling:
    """With an empty recycle space the augmented projection is the plain one."""

    def test_matches_plain_projection(self, counted, rng):
        empty = RecycleSpace.empty(counted.n)
        b = random_vector(rng, counted.n)
        data = rgmres_cycle_op(counted, b, np.zeros_like(b), empty, 15, 0.0).data
        sigmas = [0.04, 0.49 + 0.1j]
        X0 = np.zeros((counted.n, 2), dtype=complex)
        R0 = np.column_stack([b, b])
        aug = project_shifts_aug(
            data, empty, AugmentedProjectionCache.from_cycle(data, empty), sigmas, X0, R0
        )
        plain_cache = ProjectionCache.from_arnoldi(data)
        for i, sigma in enumerate(sigmas):
            plain = project_shift(data, plain_cache, sigma, X0[:, i], R0[:, i])
            assert np.linalg.norm(aug[i].r - plain.r) <= 1e-10 * np.linalg.norm(b)

    def test_initial_projection_is_noop(self, rng):
        x, r = random_vector(rng, 8), random_vector(rng, 8)
        out = initial_shift_projection(RecycleSpace.empty(8), 0.5, x, r)
        np.testing.assert_array_equal(out.r, r)
        np.testing.assert_array_equal(out.x, x)


class TestSrgmresSolve:
    """The full shifted recycled GMRES solver."""

    @pytest.fixture
    def family(self, convdiff, rng):
        return ShiftedFamily.create(convdiff, random_vector(rng, convdiff.nrows), DESK_SHIFTS)

    @pytest.fixture
    def precond(self, family):
        return build_preconditioner(family.op, family.shifts, "ilu0")

    def test_all_shifts_converge(self, family, precond):
        report, rspace = srgmres_solve(family, precond, None, 30, 10, 1e-8, 200, verify=True)
        assert report.converged
        assert not report.flags
        assert report.method == "srgmres"
        assert report.recycle_dim == rspace.k
        assert 0 < rspace.k <= 10
        for system in report.systems:
            assert system.true_relres <= 1e-7

    def test_histories_nonincreasing(self, family, precond):
        report, _ = srgmres_solve(family, precond, None, 20, 5, 1e-8, 200)
        for system in report.systems:
            h = np.asarray(system.history)
            assert np.all(h[1:] <= h[:-1] * (1 + 1e-12))

    def test_first_member_needs_no_setup(self, family, precond):
        report, _ = srgmres_solve(family, precond, None, 30, 10, 1e-8, 200)
        assert report.setup_matvecs == 0
        for system in report.systems:
            assert system.matvecs == system.precond_applies

    def test_new_operator_rebuilds_once(self, family, precond, rng):
        """Entering a new matrix costs k setup applications, charged apart from iterations."""
        _, rspace = srgmres_solve(family, precond, None, 30, 10, 1e-8, 200)
        op = synthetic_convdiff(20, 10.0, 0.0)
        second = ShiftedFamily.create(op, random_vector(rng, op.nrows), DESK_SHIFTS)
        p = build_preconditioner(op, second.shifts, "ilu0")
        report, _ = srgmres_solve(second, p, rspace, 30, 10, 1e-8, 200)
        assert report.converged
        assert report.setup_matvecs == rspace.k
        assert report.total_matvecs == report.iteration_matvecs + rspace.k

    def test_same_operator_reuses_space(self, family, precond, rng):
        _, rspace = srgmres_solve(family, precond, None, 30, 10, 1e-8, 200)
        second = ShiftedFamily.create(
            family.op, random_vector(rng, family.op.nrows), DESK_SHIFTS
        )
        report, _ = srgmres_solve(second, precond, rspace, 30, 10, 1e-8, 200)
        assert report.converged
        assert report.setup_matvecs == 0

    def test_black_box_rebuild(self, family, precond, rng):
        """Without rebasing every new base shift pays for a rebuild."""
        _, rspace = srgmres_solve(family, precond, None, 30, 10, 1e-8, 200)
        second = ShiftedFamily.create(family.op, random_vector(rng, family.op.nrows), [0.05])
        report, _ = srgmres_solve(
            second, precond, rspace, 30, 10, 1e-8, 200, rebase_recycle=False
        )
        assert report.setup_matvecs == rspace.k

    def test_augmented_relation_every_cycle(self, family, precond):
        """(A + s I) [Z_U Z] = [C V] G holds for each recycled cycle."""
        events = []
        srgmres_solve(family, precond, None, 20, 5, 1e-8, 200, observer=events.append)
        recycled = [e for e in events if e.rspace is not None and not e.rspace.is_empty()]
        assert recycled
        for event in recycled:
            sigma = family.shifts[event.base]
            S = np.hstack([event.rspace.Z_U, event.data.Z])
            lhs = np.column_stack([spmv(family.op, S[:, i], sigma) for i in range(S.shape[1])])
            rhs = np.hstack([event.rspace.C, event.data.V]) @ event.data.G
            scale = family.op.shifted_norm1(sigma) * np.linalg.norm(S)
            assert np.linalg.norm(lhs - rhs) <= 1e-9 * scale

    def test_no_recycling_matches_sgmres(self, convdiff, rng):
        b = random_vector(rng, convdiff.nrows)
        plain = ShiftedFamily.create(convdiff, b, DESK_SHIFTS)
        p = build_preconditioner(convdiff, DESK_SHIFTS, "ilu0")
        expected = sgmres_solve(plain, p, 20, 1e-8, 200)
        recycled = ShiftedFamily.create(convdiff, b, DESK_SHIFTS)
        report, rspace = srgmres_solve(recycled, p, None, 20, 0, 1e-8, 200)
        assert rspace.is_empty()
        assert [s.matvecs for s in report.systems] == [s.matvecs for s in expected.systems]
        assert [s.precond_applies for s in report.systems] == [
            s.precond_applies for s in expected.systems
        ]
        assert report.setup_matvecs == 0
        for got, want in zip(report.systems, expected.systems):
            assert len(got.history) == len(want.history)
            np.testing.assert_allclose(
                got.history, want.history, rtol=0, atol=1e-12 * want.r0_norm
            )

    def test_harmonic_failure_is_flagged(self, family, precond):
        with mock.patch(
            "shiftkrylov.shifted_rgmres.harmonic_ritz_update",
            side_effect=HarmonicRitzError("no finite harmonic Ritz values"),
        ):
            report, rspace = srgmres_solve(family, precond, None, 30, 10, 1e-8, 200)
        assert "harmonic_ritz_failure" in report.flags
        assert rspace.is_empty()
        assert report.converged

    def test_invalid_parameters(self, family, precond):
        with pytest.raises(ValueError):
            srgmres_solve(family, precond, None, 30, -1, 1e-8, 200)
