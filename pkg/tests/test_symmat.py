import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from spdhgr.errors import InvalidInput, NotSPD, RankDeficient
from spdhgr.symmat import (
    EigPair,
    assert_spd,
    degeneracy_count,
    eig_backprop,
    eigh,
    qr_orthonormalize,
    rectify_eigs,
    reset_degeneracy_count,
    spd_exp,
    spd_log,
    sym_unvectorize_grad,
    sym_vectorize,
    symmetrize,
    tri_length,
)

SQRT2 = np.sqrt(2.0)


def random_sym(rng, n, scale=1.0):
    return symmetrize(rng.standard_normal((n, n)) * scale)


def random_spd(rng, n, lo=0.1, hi=5.0):
    q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    vals = rng.uniform(lo, hi, size=n)
    return symmetrize((q * vals) @ q.T)


sym_matrices = st.integers(min_value=1, max_value=8).flatmap(
    lambda n: st.lists(
        st.floats(min_value=-10.0, max_value=10.0, allow_nan=False),
        min_size=n * n, max_size=n * n,
    ).map(lambda vals: symmetrize(np.array(vals).reshape(n, n)))
)


class TestEigh:
    def test_identity(self):
        eig = eigh(np.eye(3))
        np.testing.assert_allclose(eig.vals, np.ones(3))
        np.testing.assert_allclose(eig.vecs @ np.diag(eig.vals) @ eig.vecs.T, np.eye(3))

    def test_already_diagonal(self):
        eig = eigh(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(eig.vals, [3.0, 1.0])
        np.testing.assert_allclose(eig.vecs, np.eye(2), atol=1e-14)

    def test_reconstruction_random(self, rng):
        a = random_sym(rng, 6)
        eig = eigh(a)
        err = np.linalg.norm(eig.vecs @ np.diag(eig.vals) @ eig.vecs.T - a)
        assert err < 1e-10 * np.linalg.norm(a)

    def test_descending_and_orthogonal(self, rng):
        eig = eigh(random_sym(rng, 7))
        assert np.all(np.diff(eig.vals) <= 0)
        assert np.linalg.norm(eig.vecs @ eig.vecs.T - np.eye(7)) <= 1e-10 * 7

    def test_sign_convention(self, rng):
        for _ in range(10):
            eig = eigh(random_sym(rng, 5))
            for col in eig.vecs.T:
                lead = col[np.abs(col) > 1e-12 * np.abs(col).max()][0]
                assert lead > 0

    def test_deterministic(self, rng):
        a = random_sym(rng, 6)
        e1, e2 = eigh(a), eigh(a)
        assert np.array_equal(e1.vals, e2.vals)
        assert np.array_equal(e1.vecs, e2.vecs)

    def test_non_finite_rejected(self):
        a = np.eye(3)
        a[0, 1] = np.nan
        with pytest.raises(InvalidInput):
            eigh(a)

    def test_non_square_rejected(self):
        with pytest.raises(InvalidInput):
            eigh(np.ones((2, 3)))

    @given(sym_matrices)
    def test_reconstruction_property(self, a):
        eig = eigh(a)
        err = np.linalg.norm(eig.vecs @ np.diag(eig.vals) @ eig.vecs.T - a)
        assert err <= 1e-8 * max(np.linalg.norm(a), 1e-30)


class TestSpdLog:
    def test_identity_maps_to_zero(self):
        np.testing.assert_allclose(spd_log(np.eye(4)), np.zeros((4, 4)), atol=1e-14)

    def test_diagonal(self):
        out = spd_log(np.diag([np.e, np.e**2]))
        np.testing.assert_allclose(out, np.diag([1.0, 2.0]), atol=1e-12)

    def test_against_scipy_logm(self, rng):
        a = random_spd(rng, 5)
        np.testing.assert_allclose(spd_log(a), scipy.linalg.logm(a), atol=1e-8)

    def test_exp_log_roundtrip(self, rng):
        a = random_spd(rng, 5)
        err = np.linalg.norm(spd_exp(spd_log(a)) - a) / np.linalg.norm(a)
        assert err < 1e-8

    def test_log_exp_roundtrip_bounded_spectrum(self, rng):
        for _ in range(20):
            n = int(rng.integers(1, 7))
            q = np.linalg.qr(rng.standard_normal((n, n)))[0]
            s = symmetrize((q * rng.uniform(-5, 5, n)) @ q.T)
            err = np.linalg.norm(spd_log(spd_exp(s)) - s)
            assert err <= 1e-8 * max(np.linalg.norm(s), 1.0)

    def test_rejects_indefinite(self):
        with pytest.raises(NotSPD):
            spd_log(np.diag([1.0, -0.5]))


class TestRectifyEigs:
    def test_clamps_small_eigenvalue(self):
        out = rectify_eigs(np.diag([5.0, 1e-9]), 1e-4)
        np.testing.assert_allclose(out, np.diag([5.0, 1e-4]), atol=1e-12)

    def test_noop_when_spectrum_above_eps(self, rng):
        a = random_spd(rng, 4, lo=2.0, hi=6.0)
        np.testing.assert_allclose(rectify_eigs(a, 1e-4), a, atol=1e-10)

    def test_negative_eigenvalue_becomes_eps(self, rng):
        q = np.linalg.qr(rng.standard_normal((4, 4)))[0]
        a = symmetrize((q * np.array([3.0, 2.0, 1.0, -0.7])) @ q.T)
        out = rectify_eigs(a, 1e-4)
        vals = eigh(out).vals
        assert vals.min() == pytest.approx(1e-4, rel=1e-9)
        assert_spd(out)

    def test_invalid_eps(self):
        with pytest.raises(InvalidInput):
            rectify_eigs(np.eye(2), 0.0)

    def test_output_passes_assert_spd_with_margin(self, rng):
        for _ in range(10):
            a = random_sym(rng, 5)
            eps = 1e-4
            out = rectify_eigs(a, eps)
            assert eigh(out).vals.min() >= eps / 2
            assert_spd(out)


class TestSymVectorize:
    def test_two_by_two(self):
        a, b, c = 1.5, -0.7, 2.25
        np.testing.assert_allclose(
            sym_vectorize(np.array([[a, b], [b, c]])), [a, SQRT2 * b, c]
        )

    def test_identity3(self):
        np.testing.assert_allclose(sym_vectorize(np.eye(3)), [1, 0, 0, 1, 0, 1])

    def test_norm_preserved(self, rng):
        a = random_sym(rng, 10)
        v = sym_vectorize(a)
        assert v.shape == (55,)
        assert abs(np.linalg.norm(v) - np.linalg.norm(a)) <= 1e-12 * np.linalg.norm(a)

    @given(sym_matrices, st.integers(0, 2**31))
    def test_isometry_property(self, a, seed):
        b = random_sym(np.random.default_rng(seed), a.shape[0])
        lhs = sym_vectorize(a) @ sym_vectorize(b)
        rhs = np.sum(a * b)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


class TestSymUnvectorizeGrad:
    def test_diagonal_entries_raw(self):
        np.testing.assert_allclose(sym_unvectorize_grad(np.array([1.0, 0.0, 1.0])), np.eye(2))

    def test_off_diagonal_split(self):
        out = sym_unvectorize_grad(np.array([0.0, 1.0, 0.0]))
        s = 1.0 / SQRT2
        np.testing.assert_allclose(out, [[0.0, s], [s, 0.0]])

    def test_adjoint_identity(self, rng):
        for _ in range(10):
            n = int(rng.integers(2, 8))
            g = rng.standard_normal(tri_length(n))
            da = random_sym(rng, n)
            lhs = np.sum(sym_unvectorize_grad(g) * da)
            rhs = g @ sym_vectorize(da)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))

    def test_bad_length(self):
        with pytest.raises(InvalidInput):
            sym_unvectorize_grad(np.ones(4))


class TestEigBackprop:
    def test_eigenvalue_only_gradient_gives_identity(self, rng):
        eig = eigh(random_spd(rng, 4))
        out = eig_backprop(eig, np.zeros((4, 4)), np.ones(4))
        np.testing.assert_allclose(out, np.eye(4), atol=1e-12)

    def test_matrix_dl_dvals_uses_diagonal(self, rng):
        eig = eigh(random_spd(rng, 3))
        full = eig_backprop(eig, np.zeros((3, 3)), np.diag([1.0, 2.0, 3.0]))
        vec = eig_backprop(eig, np.zeros((3, 3)), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(full, vec)

    def test_shape_mismatch(self, rng):
        eig = eigh(random_spd(rng, 3))
        with pytest.raises(InvalidInput):
            eig_backprop(eig, np.zeros((2, 2)), np.ones(3))

    def test_log_composite_matches_fd(self, rng):
        # gradient of <R, log A> assembled through the two-step backprop
        n = 4
        a = random_spd(rng, n, lo=0.3, hi=4.0)
        r = random_sym(rng, n)

        eig = eigh(a)
        grad_vecs = 2.0 * r @ (eig.vecs * np.log(eig.vals))
        grad_vals = np.diagonal(eig.vecs.T @ r @ eig.vecs) / eig.vals
        analytic = eig_backprop(eig, grad_vecs, grad_vals)

        fd = np.zeros((n, n))
        h = 1e-6
        for i in range(n):
            for j in range(i, n):
                e = np.zeros((n, n))
                e[i, j] = e[j, i] = 1.0
                diff = (np.sum(r * spd_log(a + h * e)) - np.sum(r * spd_log(a - h * e))) / (2 * h)
                fd[i, j] = fd[j, i] = diff if i == j else diff / 2.0
        assert np.linalg.norm(analytic - fd) / np.linalg.norm(fd) < 1e-6

    def test_degenerate_pair_guarded(self):
        reset_degeneracy_count()
        eig = EigPair(vecs=np.eye(3), vals=np.array([2.0, 1.0, 1.0]))
        out = eig_backprop(eig, np.ones((3, 3)), np.zeros(3))
        assert np.all(np.isfinite(out))
        assert degeneracy_count() == 1


class TestQrOrthonormalize:
    def test_fixed_point(self, rng):
        q = qr_orthonormalize(rng.standard_normal((3, 8)))
        np.testing.assert_allclose(qr_orthonormalize(q), q, atol=1e-12)

    def test_scaling_removed(self):
        out = qr_orthonormalize(np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]))
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], atol=1e-14)

    def test_orthonormal_rows(self, rng):
        q = qr_orthonormalize(rng.standard_normal((5, 20)))
        assert np.linalg.norm(q @ q.T - np.eye(5)) <= 1e-10

    def test_row_span_preserved(self, rng):
        m = rng.standard_normal((3, 7))
        q = qr_orthonormalize(m)
        # every row of m is a combination of rows of q
        residual = m - (m @ q.T) @ q
        assert np.linalg.norm(residual) <= 1e-10 * np.linalg.norm(m)

    def test_rank_deficient(self):
        m = np.ones((2, 4))
        with pytest.raises(RankDeficient):
            qr_orthonormalize(m)

    def test_rows_exceed_cols(self):
        with pytest.raises(InvalidInput):
            qr_orthonormalize(np.ones((4, 2)))


class TestAssertSpd:
    def test_accepts_spd(self, rng):
        assert_spd(random_spd(rng, 5))

    def test_rejects_semidefinite(self):
        with pytest.raises(NotSPD):
            assert_spd(np.diag([1.0, 0.0]))

    def test_scale_relative_floor(self):
        # tiny but healthy eigenvalues pass; relatively negligible ones fail
        assert_spd(np.diag([2e-12, 1e-12 * 0.5]) + np.eye(2) * 1e-7)
        with pytest.raises(NotSPD):
            assert_spd(np.diag([1e6, 1e-7]))
