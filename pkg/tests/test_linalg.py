import numpy as np
import numpy.testing as npt
import pytest

from faceverify.linalg import derive_seed, gaussian_matrix, l2_normalize, make_rng, matmul, outer


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


class TestMatmul:
    def test_identity(self):
        rng = make_rng(0)
        a = rng.standard_normal((3, 3))
        npt.assert_array_equal(matmul(np.eye(3), a), a)

    def test_hand_example(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.0], [1.0]]))
        npt.assert_array_equal(out, [[2.0], [4.0]])

    def test_against_naive_loop(self):
        rng = make_rng(1)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        npt.assert_allclose(matmul(a, b), naive_matmul(a, b), rtol=1e-13, atol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_associativity(self):
        rng = make_rng(2)
        for _ in range(5):
            a = rng.standard_normal((4, 5))
            b = rng.standard_normal((5, 6))
            c = rng.standard_normal((6, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            npt.assert_allclose(left, right, rtol=1e-12)


class TestOuter:
    def test_basis_vectors(self):
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
        out = outer(e1, e2)
        expected = np.zeros((3, 3))
        expected[0, 1] = 1.0
        npt.assert_array_equal(out, expected)

    def test_hand_example(self):
        npt.assert_array_equal(outer([1.0, 2.0], [3.0, 4.0]), [[3.0, 4.0], [6.0, 8.0]])

    def test_self_outer_symmetric_psd(self):
        rng = make_rng(3)
        u = rng.standard_normal(6)
        m = outer(u, u)
        npt.assert_array_equal(m, m.T)
        assert np.linalg.eigvalsh(m).min() >= -1e-12

    def test_transpose_identity(self):
        rng = make_rng(4)
        u = rng.standard_normal(5)
        v = rng.standard_normal(5)
        npt.assert_array_equal(outer(u, v).T, outer(v, u))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            outer([1.0, 2.0], [1.0, 2.0, 3.0])


class TestGaussianMatrix:
    def test_determinism(self):
        a = gaussian_matrix(make_rng(42), 4, 5)
        b = gaussian_matrix(make_rng(42), 4, 5)
        npt.assert_array_equal(a, b)

    def test_shape(self):
        assert gaussian_matrix(make_rng(0), 3, 4).shape == (3, 4)

    def test_moments(self):
        # CLT bounds at 1e5 samples
        m = gaussian_matrix(make_rng(7), 500, 200)
        assert abs(m.mean()) < 0.02
        assert abs(m.var() - 1.0) < 0.05

    def test_bad_dims(self):
        with pytest.raises(ValueError):
            gaussian_matrix(make_rng(0), 0, 3)


class TestL2Normalize:
    def test_three_four_five(self):
        npt.assert_allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_idempotent_to_one_ulp(self):
        rng = make_rng(5)
        for _ in range(20):
            x = rng.standard_normal(8) * rng.uniform(0.01, 100)
            once = l2_normalize(x)
            twice = l2_normalize(once)
            assert np.all(np.abs(twice - once) <= np.spacing(np.abs(once)))

    def test_unit_vector_unchanged(self):
        e = np.zeros(4)
        e[2] = 1.0
        npt.assert_array_equal(l2_normalize(e), e)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            l2_normalize(np.zeros(3))

    def test_rowwise(self):
        rng = make_rng(6)
        x = rng.standard_normal((10, 4))
        norms = np.linalg.norm(l2_normalize(x), axis=1)
        npt.assert_allclose(norms, 1.0, atol=1e-12)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(1, 1) != derive_seed(0, 1)
