import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factorcov import (
    InputError,
    LowRankComponent,
    SymMatrix,
    matrix_norm,
    project_off_colspace,
    soft_threshold_offdiag,
    svt,
    sym_eig,
)


def rand_sym(rng, p, scale=1.0):
    a = rng.standard_normal((p, p)) * scale
    return SymMatrix(a + a.T)


class TestSymMatrix:
    def test_symmetrizes_input(self):
        m = SymMatrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        assert m.values[0, 1] == m.values[1, 0] == 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(InputError):
            SymMatrix(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(InputError):
            SymMatrix(np.zeros((2, 3)))

    def test_values_read_only(self):
        m = SymMatrix(np.eye(3))
        with pytest.raises(ValueError):
            m.values[0, 0] = 5.0


class TestSymEig:
    def test_identity(self):
        eig = sym_eig(SymMatrix(np.eye(3)))
        assert np.allclose(eig.values, [1.0, 1.0, 1.0])
        assert np.allclose(eig.vectors, np.eye(3))

    def test_diagonal_case(self):
        eig = sym_eig(SymMatrix(np.diag([3.0, 1.0])))
        assert np.allclose(eig.values, [3.0, 1.0])

    def test_reconstruction_oracle(self):
        # oracle: rebuild with an explicit outer-product sum
        rng = np.random.default_rng(1)
        m = rand_sym(rng, 5)
        eig = sym_eig(m)
        rebuilt = sum(
            eig.values[i] * np.outer(eig.vectors[:, i], eig.vectors[:, i])
            for i in range(5)
        )
        rel = np.linalg.norm(rebuilt - m.values) / np.linalg.norm(m.values)
        assert rel < 1e-8

    def test_descending_and_orthogonal(self):
        rng = np.random.default_rng(2)
        m = rand_sym(rng, 7)
        eig = sym_eig(m)
        assert np.all(np.diff(eig.values) <= 0)
        assert np.max(np.abs(eig.vectors.T @ eig.vectors - np.eye(7))) < 1e-10

    def test_sign_convention(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            eig = sym_eig(rand_sym(rng, 6))
            for col in eig.vectors.T:
                assert col[np.argmax(np.abs(col))] > 0

    def test_deterministic_bits(self):
        rng = np.random.default_rng(4)
        m = rand_sym(rng, 8)
        e1, e2 = sym_eig(m), sym_eig(m)
        assert np.array_equal(e1.values, e2.values)
        assert np.array_equal(e1.vectors, e2.vectors)


class TestNorms:
    def test_identity_nuclear(self):
        assert matrix_norm(SymMatrix(np.eye(3)), "nuclear") == pytest.approx(3.0)

    def test_l1_off_single_pair(self):
        m = SymMatrix(np.array([[1.0, 0.5], [0.5, 2.0]]))
        assert matrix_norm(m, "l1_off") == pytest.approx(0.5)

    def test_spectral_2x2_closed_form(self):
        # oracle: quadratic formula for the top eigenvalue of [[a,b],[b,c]]
        def top(a, b, c):
            return (a + c) / 2 + np.sqrt(((a - c) / 2) ** 2 + b * b)

        m = SymMatrix(np.array([[1.0, 0.5], [0.5, 2.0]]))
        assert matrix_norm(m, "spectral") == pytest.approx(top(1, 0.5, 2))
        assert matrix_norm(m, "spectral") == pytest.approx((3 + np.sqrt(2)) / 2)
        # the (3+sqrt(5))/2 figure belongs to off-diagonal 1
        m2 = SymMatrix(np.array([[1.0, 1.0], [1.0, 2.0]]))
        assert matrix_norm(m2, "spectral") == pytest.approx(top(1, 1, 2))
        assert matrix_norm(m2, "spectral") == pytest.approx((3 + np.sqrt(5)) / 2)

    def test_catalog_on_small_matrix(self):
        m = SymMatrix(np.array([[1.0, 0.0, -2.0], [0.0, 0.0, 3.0], [-2.0, 3.0, 1.0]]))
        assert matrix_norm(m, "l0") == 6
        assert matrix_norm(m, "l1") == pytest.approx(12.0)
        assert matrix_norm(m, "max") == pytest.approx(3.0)
        assert matrix_norm(m, "frobenius") == pytest.approx(np.sqrt(1 + 4 + 9 + 4 + 9 + 1))
        assert matrix_norm(m, "degree_max") == 3
        assert matrix_norm(m, "l1_row_max") == pytest.approx(6.0)

    def test_nuclear_equals_trace_on_psd(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = rng.standard_normal((6, 6))
            m = SymMatrix(a @ a.T)
            assert matrix_norm(m, "nuclear") == pytest.approx(np.trace(m.values), rel=1e-10)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            matrix_norm(SymMatrix(np.eye(2)), "operator")


class TestSvt:
    def test_diagonal_example(self):
        lr = svt(SymMatrix(np.diag([3.0, 1.0])), 2.0)
        assert lr.rank == 1
        assert np.allclose(lr.eigvals, [1.0])
        assert np.allclose(np.abs(lr.basis[:, 0]), [1.0, 0.0])

    def test_psd_zero_threshold_full_decomposition(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((5, 5))
        m = SymMatrix(a @ a.T + 0.1 * np.eye(5))
        lr = svt(m, 0.0)
        assert lr.rank == 5
        assert np.allclose(lr.reconstruct(), m.values, atol=1e-10)

    def test_three_eigenvalues(self):
        lr = svt(SymMatrix(np.diag([5.0, 4.0, 1.0])), 1.5)
        assert np.allclose(lr.eigvals, [3.5, 2.5])

    def test_rank_zero_allowed(self):
        lr = svt(SymMatrix(np.eye(4)), 2.0)
        assert lr.rank == 0
        assert lr.reconstruct().shape == (4, 4)
        assert np.all(lr.reconstruct() == 0)

    def test_negative_threshold(self):
        with pytest.raises(InputError):
            svt(SymMatrix(np.eye(2)), -0.1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
    def test_spectral_bound_property(self, seed, psi):
        rng = np.random.default_rng(seed)
        m = rand_sym(rng, 6)
        lr = svt(m, psi)
        top = np.max(np.linalg.eigvalsh(m.values))
        bound = max(top - psi, 0.0)
        rebuilt_norm = np.max(np.abs(np.linalg.eigvalsh(lr.reconstruct())))
        assert rebuilt_norm <= bound + 1e-10


class TestSoftThresholdOffdiag:
    def test_componentwise_shrink(self):
        m = SymMatrix(np.array([[1.0, 0.5], [0.5, 2.0]]))
        sp = soft_threshold_offdiag(m, 0.3)
        assert np.allclose(sp.matrix.values, [[1.0, 0.2], [0.2, 2.0]])

    def test_zero_threshold_identity_map(self):
        rng = np.random.default_rng(7)
        m = rand_sym(rng, 5)
        sp = soft_threshold_offdiag(m, 0.0)
        assert np.array_equal(sp.matrix.values, m.values)

    def test_full_kill(self):
        m = SymMatrix(np.array([[1.0, 0.1], [0.1, 1.0]]))
        sp = soft_threshold_offdiag(m, 0.2)
        assert np.allclose(sp.matrix.values, np.eye(2))
        assert sp.support == frozenset()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
    def test_entrywise_contraction(self, seed, rho):
        rng = np.random.default_rng(seed)
        m = rand_sym(rng, 5)
        sp = soft_threshold_offdiag(m, rho)
        assert np.all(np.abs(sp.matrix.values) <= np.abs(m.values) + 1e-15)
        assert np.array_equal(sp.matrix.values, sp.matrix.values.T)

    def test_support_matches_nonzeros(self):
        m = SymMatrix(np.array([[1.0, 0.4, 0.0], [0.4, 1.0, 0.05], [0.0, 0.05, 1.0]]))
        sp = soft_threshold_offdiag(m, 0.1)
        assert sp.support == frozenset({(0, 1)})


class TestProjectOffColspace:
    def test_axis_projector(self):
        u = np.array([[1.0], [0.0]])
        out = project_off_colspace(u, SymMatrix(np.eye(2)))
        assert np.allclose(out.values, np.diag([0.0, 1.0]))

    def test_annihilates_sandwich(self):
        rng = np.random.default_rng(8)
        basis, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        core = rng.standard_normal((2, 2))
        m = SymMatrix(basis @ (core + core.T) @ basis.T)
        out = project_off_colspace(basis, m)
        assert np.max(np.abs(out.values)) < 1e-12

    def test_matches_explicit_product(self):
        rng = np.random.default_rng(9)
        basis, _ = np.linalg.qr(rng.standard_normal((4, 2)))
        m = rand_sym(rng, 4)
        proj = np.eye(4) - basis @ basis.T
        expected = proj @ m.values @ proj
        out = project_off_colspace(basis, m)
        assert np.allclose(out.values, expected, atol=1e-12)

    def test_output_orthogonal_to_basis(self):
        rng = np.random.default_rng(10)
        basis, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        out = project_off_colspace(basis, rand_sym(rng, 8))
        assert np.max(np.abs(basis.T @ out.values)) < 1e-8

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InputError):
            project_off_colspace(np.ones((3, 2)), SymMatrix(np.eye(3)))


class TestLowRankComponent:
    def test_empty(self):
        lr = LowRankComponent.empty(4)
        assert lr.rank == 0 and lr.dim == 4
        assert lr.trace() == 0.0

    def test_diag_matches_reconstruct(self):
        rng = np.random.default_rng(11)
        basis, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        lr = LowRankComponent(basis=basis, eigvals=np.array([3.0, 1.0]))
        assert np.allclose(lr.diagonal(), np.diag(lr.reconstruct()))

    def test_rejects_bad_eigvals(self):
        basis = np.eye(3)[:, :2]
        with pytest.raises(InputError):
            LowRankComponent(basis=basis, eigvals=np.array([1.0, 2.0]))  # ascending
        with pytest.raises(InputError):
            LowRankComponent(basis=basis, eigvals=np.array([1.0, -2.0]))

    def test_rejects_non_orthonormal_basis(self):
        with pytest.raises(InputError):
            LowRankComponent(basis=np.ones((3, 2)), eigvals=np.array([2.0, 1.0]))


class TestSvtLargeDimension:
    def test_partial_spectrum_path_matches_full(self):
        # above the subset-driver cutoff the result must agree with the
        # dense path and stay deterministic
        rng = np.random.default_rng(20)
        basis, _ = np.linalg.qr(rng.standard_normal((160, 3)))
        m = SymMatrix(basis @ np.diag([9.0, 6.0, 4.0]) @ basis.T + np.eye(160))
        a = svt(m, 2.0)
        b = svt(m, 2.0)
        assert a.rank == 3
        assert np.array_equal(a.basis, b.basis)
        assert np.array_equal(a.eigvals, b.eigvals)
        w, v = np.linalg.eigh(m.values)
        dense = sum(max(w[i] - 2.0, 0.0) * np.outer(v[:, i], v[:, i])
                    for i in range(160))
        assert np.max(np.abs(a.reconstruct() - dense)) < 1e-10
