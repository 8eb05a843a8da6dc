import numpy as np
import pytest

from factorcov import (
    CollinearityError,
    DegenerateSpectrumError,
    InputError,
    NumericError,
    SparseComponent,
    SymMatrix,
    bartlett_scores,
    communalities,
    ols_factors_v1,
    ols_factors_v2,
    rotation_to_truth,
    sample_covariance,
    thompson_scores,
)
from factorcov.scores import align_signs_to


def sparse_identity(p, scale=1.0):
    return SparseComponent(SymMatrix(scale * np.eye(p)))


def random_pd_sparse(rng, p):
    a = rng.standard_normal((p, p)) * 0.1
    s = a @ a.T + np.diag(rng.uniform(0.5, 2.0, p))
    return SparseComponent(SymMatrix(s))


class TestOlsV1:
    def test_score_normalization_forced(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((40, 7))
        fit = ols_factors_v1(x, r=3)
        assert np.allclose(fit.scores.T @ fit.scores / 40, np.eye(3), atol=1e-8)

    def test_exact_rank_one_recovery(self):
        rng = np.random.default_rng(1)
        f = rng.standard_normal(30)
        b = rng.standard_normal(5)
        x = np.outer(f, b)
        fit = ols_factors_v1(x, r=1)
        fc = f - f.mean()
        cos = abs(fit.scores[:, 0] @ fc) / (np.linalg.norm(fit.scores[:, 0]) * np.linalg.norm(fc))
        assert cos > 0.999
        cos_b = abs(fit.loadings[:, 0] @ b) / (np.linalg.norm(fit.loadings[:, 0]) * np.linalg.norm(b))
        assert cos_b > 0.999

    def test_two_by_one_closed_form(self):
        # demeaned column (a, b) -> (h, -h); the Gram matrix eigenvector is
        # (1, -1)/sqrt(2) so scores are +-1 after the sqrt(n) scaling
        x = np.array([[3.0], [1.0]])
        fit = ols_factors_v1(x, r=1)
        assert np.allclose(np.abs(fit.scores[:, 0]), [1.0, 1.0])
        assert fit.scores[0, 0] * fit.scores[1, 0] < 0
        h = (3.0 - 1.0) / 2
        assert np.allclose(np.abs(fit.loadings), [[h]])

    def test_r_too_large(self):
        with pytest.raises(InputError):
            ols_factors_v1(np.zeros((4, 3)), r=4)


class TestOlsV2:
    def test_loadings_gram_diagonal(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((50, 6))
        xc = x - x.mean(0)
        sigma = sample_covariance(xc, "ml")
        fit = ols_factors_v2(sigma, x, r=2)
        gram = fit.loadings.T @ fit.loadings
        assert np.max(np.abs(gram - np.diag(np.diag(gram)))) < 1e-8

    def test_diagonal_covariance(self):
        sigma = SymMatrix(np.diag([4.0, 1.0, 0.25]))
        x = np.random.default_rng(3).standard_normal((20, 3))
        fit = ols_factors_v2(sigma, x, r=2)
        assert np.allclose(np.abs(fit.loadings[:, 0]), [2.0, 0.0, 0.0], atol=1e-12)
        assert np.allclose(np.abs(fit.loadings[:, 1]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_matches_v1_scaling(self):
        # with the 1/n covariance convention, sqrt(n) * v2 scores = v1 scores
        rng = np.random.default_rng(4)
        x = rng.standard_normal((30, 5))
        xc = x - x.mean(0)
        sigma = sample_covariance(xc, "ml")
        f1 = ols_factors_v1(xc, r=2).scores
        f2 = ols_factors_v2(sigma, xc, r=2).scores
        aligned = align_signs_to(f1, f2 * np.sqrt(30))
        assert np.max(np.abs(aligned - f1)) < 1e-8

    def test_degenerate_spectrum(self):
        sigma = SymMatrix(np.diag([1.0, 0.0, 0.0]))
        with pytest.raises(DegenerateSpectrumError):
            ols_factors_v2(sigma, np.zeros((5, 3)), r=2)


class TestBartlett:
    def test_identity_residual_reduces_to_ols(self):
        rng = np.random.default_rng(5)
        b = rng.standard_normal((6, 2))
        x = rng.standard_normal((25, 6))
        fit = bartlett_scores(b, sparse_identity(6), x)
        xc = x - x.mean(0)
        expected = xc @ b @ np.linalg.inv(b.T @ b)
        assert np.max(np.abs(fit.scores - expected)) < 1e-10

    def test_hand_computed_average(self):
        # p=2, r=1, B=(1,1)', S=I: score is the coordinate average
        b = np.array([[1.0], [1.0]])
        x = np.array([[2.0, 4.0], [-2.0, -4.0]])
        fit = bartlett_scores(b, sparse_identity(2), x)
        assert np.allclose(fit.scores[:, 0], [(2 + 4) / 2, (-2 - 4) / 2])

    def test_unbiased_at_truth(self):
        rng = np.random.default_rng(6)
        b = rng.standard_normal((8, 3))
        f = rng.standard_normal((40, 3))
        x = f @ b.T
        fit = bartlett_scores(b, random_pd_sparse(rng, 8), x)
        fc = f - f.mean(0)
        assert np.max(np.abs(fit.scores - fc)) < 1e-8

    def test_non_pd_error_names_eigenvalue(self):
        s = SparseComponent(SymMatrix(np.diag([1.0, -0.5])))
        with pytest.raises(NumericError, match="-5"):
            bartlett_scores(np.ones((2, 1)), s, np.zeros((4, 2)))

    def test_collinear_loadings(self):
        b = np.ones((4, 2))  # two identical columns
        with pytest.raises(CollinearityError):
            bartlett_scores(b, sparse_identity(4), np.zeros((5, 4)))


class TestThompson:
    def test_hand_computed_shrunk_average(self):
        # p=2, r=1, B=(1,1)', S=I: BB'+I = [[2,1],[1,2]], score = (x1+x2)/3
        b = np.array([[1.0], [1.0]])
        x = np.array([[3.0, 3.0], [-3.0, -3.0]])
        fit = thompson_scores(b, sparse_identity(2), x)
        assert np.allclose(fit.scores[:, 0], [2.0, -2.0])

    def test_woodbury_identity_against_bartlett(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            p = rng.integers(3, 12)
            r = rng.integers(1, min(4, p))
            b = rng.standard_normal((p, r))
            sp = random_pd_sparse(rng, p)
            x = rng.standard_normal((15, p))
            fb = bartlett_scores(b, sp, x).scores
            ft = thompson_scores(b, sp, x).scores
            m = b.T @ np.linalg.solve(sp.matrix.values, b)
            expected = fb @ (np.linalg.solve(np.eye(r) + m, m)).T
            assert np.max(np.abs(ft - expected)) < 1e-10

    def test_limit_small_residual(self):
        rng = np.random.default_rng(8)
        b = rng.standard_normal((5, 2))
        x = rng.standard_normal((10, 5))
        tiny = sparse_identity(5, scale=1e-8)
        fb = bartlett_scores(b, tiny, x).scores
        ft = thompson_scores(b, tiny, x).scores
        assert np.max(np.abs(fb - ft)) < 1e-6


class TestRotationAndCommunalities:
    def test_consistent_toy_gives_identity(self):
        # scores with F'F/n = Lambda (B'B)^-1 ... choose B'B = Lambda and
        # F_hat = F_true with F'F/n = I so H = Lambda^-1 I Lambda = I
        rng = np.random.default_rng(9)
        n, r = 200, 3
        f = rng.standard_normal((n, r))
        f = f @ np.linalg.inv(np.linalg.cholesky(f.T @ f / n)).T  # F'F/n = I
        lam = np.array([5.0, 3.0, 2.0])
        basis, _ = np.linalg.qr(rng.standard_normal((10, r)))
        b_true = basis * np.sqrt(lam)  # B'B = diag(lam)
        h = rotation_to_truth(lam, f, f, b_true)
        assert np.allclose(h, np.eye(r), atol=1e-10)

    def test_orthogonal_scores_give_zero(self):
        f_true = np.array([[1.0, 0.0]]).T @ np.ones((1, 1))
        f_true = np.array([[1.0], [0.0], [-1.0], [0.0]])
        f_hat = np.array([[0.0], [1.0], [0.0], [-1.0]])
        b_true = np.ones((3, 1))
        h = rotation_to_truth(np.array([2.0]), f_hat, f_true, b_true)
        assert np.allclose(h, 0.0)

    def test_zero_eigenvalue_rejected(self):
        with pytest.raises(InputError):
            rotation_to_truth(np.array([0.0]), np.ones((3, 1)), np.ones((3, 1)),
                              np.ones((2, 1)))

    def test_communalities_zero_scores(self):
        out = communalities(np.ones((4, 2)), np.zeros((6, 2)))
        assert out.shape == (6, 4)
        assert np.all(out == 0)

    def test_communalities_exact_model(self):
        rng = np.random.default_rng(10)
        b = rng.standard_normal((5, 2))
        f = rng.standard_normal((8, 2))
        assert np.allclose(communalities(b, f), f @ b.T)

    def test_communalities_hand_product(self):
        b = np.array([[1.0], [2.0]])
        f = np.array([[3.0], [-1.0]])
        assert np.allclose(communalities(b, f), [[3.0, 6.0], [-1.0, -2.0]])

    def test_dimension_mismatch_is_loud(self):
        with pytest.raises(InputError):
            communalities(np.ones((4, 2)), np.ones((6, 3)))
