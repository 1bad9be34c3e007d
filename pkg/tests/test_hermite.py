"""Hermite values, tensors, unfoldings, and spans."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.polynomial import hermite_e

from mim.budget import MemoryBudgetError
from mim.hermite import (
    HermiteTensor,
    Subspace,
    fold,
    hermite_tensor,
    hermite_tensor_block,
    hermite_value,
    hermite_values,
    tensor_span,
    unfold,
)
from mim.rng import stream

from oracles import mc_standard_error


class TestHermiteValue:
    def test_order_zero_is_one(self):
        assert hermite_value(0, 3.7) == 1.0

    def test_order_two_at_zero(self):
        assert hermite_value(2, 0.0) == pytest.approx(-1.0 / math.sqrt(2), abs=1e-12)

    def test_order_three_at_two(self):
        assert hermite_value(3, 2.0) == pytest.approx(2.0 / math.sqrt(6), abs=1e-12)

    def test_rejects_negative_order(self):
        with pytest.raises(ValueError):
            hermite_value(-1, 0.0)

    def test_rejects_order_beyond_cap(self):
        with pytest.raises(ValueError):
            hermite_value(13, 0.0)

    @given(st.integers(min_value=0, max_value=12),
           st.floats(min_value=-10, max_value=10))
    @settings(max_examples=200, deadline=None)
    def test_matches_numpy_hermite_e(self, k, u):
        coeffs = np.zeros(k + 1)
        coeffs[k] = 1.0
        expected = hermite_e.hermeval(u, coeffs) / math.sqrt(math.factorial(k))
        got = hermite_value(k, u)
        assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)

    def test_table_consistent_with_scalar(self):
        u = np.linspace(-3, 3, 7)
        table = hermite_values(6, u)
        for k in range(7):
            for j, val in enumerate(u):
                assert table[k, j] == pytest.approx(hermite_value(k, val), rel=1e-12)


class TestHermiteTensor:
    def test_order_one_is_x(self):
        x = np.array([0.4, -2.0, 1.1])
        t = hermite_tensor(1, x)
        np.testing.assert_allclose(t.entries, x)

    def test_order_two_formula(self):
        x = np.array([0.3, -1.2, 0.7, 2.0])
        t = hermite_tensor(2, x)
        np.testing.assert_allclose(
            t.entries, (np.outer(x, x) - np.eye(4)) / math.sqrt(2), atol=1e-12
        )

    def test_order_three_zero_entry(self):
        # He_2(1) = 0 forces the (1,1,2) entry to vanish.
        t = hermite_tensor(3, np.array([1.0, 2.0]))
        assert t.entries[0, 0, 1] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_symmetric_under_permutations(self, k):
        x = stream(1, "sym", k).standard_normal(3)
        t = hermite_tensor(k, x)
        for perm in itertools.permutations(range(k)):
            np.testing.assert_allclose(t.entries, np.transpose(t.entries, perm),
                                       atol=1e-12)

    def test_multiplicity_product_formula(self):
        x = stream(2, "mult").standard_normal(4)
        k = 4
        t = hermite_tensor(k, x)
        table = hermite_values(k, x)
        rng = stream(3, "tuples")
        for _ in range(50):
            idx = tuple(rng.integers(0, 4, size=k))
            beta = np.bincount(idx, minlength=4)
            expected = 1.0
            for j, b in enumerate(beta):
                expected *= table[b, j] * math.sqrt(math.factorial(b))
            expected /= math.sqrt(math.factorial(k))
            assert t.entries[idx] == pytest.approx(expected, rel=1e-9, abs=1e-12)

    def test_entries_finite(self):
        x = np.array([50.0, -50.0])
        t = hermite_tensor(6, x)
        assert np.all(np.isfinite(t.entries))

    def test_memory_budget_enforced(self, monkeypatch):
        monkeypatch.setenv("MIM_MEM_CAP_BYTES", str(2**20))
        with pytest.raises(MemoryBudgetError):
            hermite_tensor(4, np.zeros(64))

    def test_block_matches_single(self):
        x = stream(4, "block").standard_normal((5, 3))
        block = hermite_tensor_block(x, 3)
        for i in range(5):
            np.testing.assert_allclose(block[i], hermite_tensor(3, x[i]).entries,
                                       atol=1e-12)


class TestUnfold:
    def test_order_two_unchanged(self):
        x = np.array([0.5, -0.1, 2.2])
        t = hermite_tensor(2, x)
        u = unfold(t)
        np.testing.assert_array_equal(u.data, t.entries)

    def test_order_one_is_column(self):
        t = hermite_tensor(1, np.array([1.0, 2.0, 3.0]))
        u = unfold(t)
        assert u.data.shape == (3, 1)

    def test_linearization_convention(self):
        # order 3, dim 2: tuple (1,2,1) 1-based sits at row 1, column 3.
        t = hermite_tensor(3, np.array([0.7, -1.3]))
        u = unfold(t)
        assert u.data[0, 2] == t.entries[0, 1, 0]

    @given(st.integers(min_value=1, max_value=4), st.integers(min_value=1, max_value=3))
    @settings(max_examples=20, deadline=None)
    def test_round_trip_exact(self, k, d):
        x = stream(5, "round", k, d).standard_normal(d)
        t = hermite_tensor(k, x)
        back = fold(unfold(t))
        np.testing.assert_array_equal(back.entries, t.entries)


class TestTensorSpan:
    def test_rank_one_cube(self):
        v = np.array([3.0, 4.0, 0.0]) / 5.0
        t = np.einsum("i,j,k->ijk", v, v, v)
        sub = tensor_span(t, tol=1e-8)
        assert sub.dim == 1
        assert abs(abs(sub.basis[:, 0] @ v) - 1.0) < 1e-10

    def test_symmetrized_pair(self):
        e1, e2 = np.eye(3)[0], np.eye(3)[1]
        t = 0.5 * (np.einsum("i,j->ij", e1, e2) + np.einsum("i,j->ij", e2, e1))
        sub = tensor_span(t, tol=1e-8)
        assert sub.dim == 2
        proj = sub.projector()
        np.testing.assert_allclose(proj @ e1, e1, atol=1e-10)
        np.testing.assert_allclose(proj @ e2, e2, atol=1e-10)

    def test_zero_tensor_empty(self):
        assert tensor_span(np.zeros((3, 3, 3)), tol=1e-8).dim == 0

    def test_planted_row_space_vs_svd_oracle(self):
        # Random symmetric tensor with a planted 2-dimensional span.
        rng = stream(6, "planted")
        basis = np.linalg.qr(rng.standard_normal((4, 2)))[0]
        core = rng.standard_normal((2, 2, 2))
        core = core + core.transpose(1, 0, 2)
        t = np.einsum("abc,ia,jb,kc->ijk", core, basis, basis, basis)
        t = (t + t.transpose(0, 2, 1) + t.transpose(1, 0, 2) + t.transpose(1, 2, 0)
             + t.transpose(2, 0, 1) + t.transpose(2, 1, 0)) / 6.0
        sub = tensor_span(t, tol=1e-8)
        # Oracle: full SVD of the matricization.
        u, s, _ = np.linalg.svd(t.reshape(4, 16))
        oracle_dim = int(np.sum(s > 1e-8 * s[0]))
        assert sub.dim == oracle_dim == 2
        gap = sub.projector() - basis @ basis.T
        assert np.linalg.norm(gap, 2) < 1e-8

    def test_tol_must_be_positive(self):
        with pytest.raises(ValueError):
            tensor_span(np.eye(3), tol=0.0)


class TestSubspace:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Subspace(3, np.ones((3, 2)))

    def test_rejects_too_many_columns(self):
        with pytest.raises(ValueError):
            Subspace(2, np.eye(3))

    def test_union_and_complement(self):
        s = Subspace(4, np.eye(4)[:, :1])
        t = Subspace(4, np.eye(4)[:, 1:2])
        u = s.union(t)
        assert u.dim == 2
        c = u.complement()
        assert c.dim == 2
        np.testing.assert_allclose(u.basis.T @ c.basis, 0.0, atol=1e-12)


class TestGaussianProperties:
    N = 1_000_000
    BLOCK = 1 << 14

    def test_orthonormality_monte_carlo(self):
        """Entries of different-order tensors are uncorrelated under the
        Gaussian: every cross moment E[h_j(Z)_a h_k(Z)_b] is within noise
        of zero for j != k."""
        d, kmax = 4, 4
        rng = stream(7, "ortho")
        pairs = [(j, k) for j in range(1, kmax + 1) for k in range(j + 1, kmax + 1)]
        cross = {p: np.zeros((d ** p[0], d ** p[1])) for p in pairs}
        cross_sq = {p: np.zeros((d ** p[0], d ** p[1])) for p in pairs}
        done = 0
        while done < self.N:
            b = min(self.BLOCK, self.N - done)
            z = rng.standard_normal((b, d))
            flats = {k: hermite_tensor_block(z, k).reshape(b, -1)
                     for k in range(1, kmax + 1)}
            for (j, k) in pairs:
                cross[(j, k)] += flats[j].T @ flats[k]
                cross_sq[(j, k)] += (flats[j] ** 2).T @ (flats[k] ** 2)
            done += b
        for (j, k) in pairs:
            mean = cross[(j, k)] / self.N
            var = cross_sq[(j, k)] / self.N - mean**2
            se = np.sqrt(np.maximum(var, 1e-30) / self.N)
            # 5 sigma entrywise with a tiny absolute slack; a handful of
            # 5-sigma events over ~1e5 entry pairs would still be chance,
            # so require 6 sigma to never exceed.
            worst = np.max(np.abs(mean) / (se + 1e-12))
            assert worst <= 6.0, (j, k, worst)
            frac_over = np.mean(np.abs(mean) > 5 * se + 1e-12)
            assert frac_over < 1e-3, (j, k, frac_over)

    def test_integral_representation_oracle(self):
        """h_k(x) matches E_W[(x + iW)^{tensor k}] / sqrt(k!) entrywise."""
        rng = stream(8, "intrep")
        n = 1_000_000
        for k, d in [(1, 2), (2, 3), (3, 3)]:
            x = rng.standard_normal(d)
            target = hermite_tensor(k, x).entries
            acc = np.zeros((d,) * k)
            acc_sq = np.zeros((d,) * k)
            done = 0
            while done < n:
                b = min(self.BLOCK, n - done)
                w = rng.standard_normal((b, d))
                zc = x[None, :] + 1j * w
                prod = zc
                for _ in range(k - 1):
                    prod = prod[..., None] * zc.reshape((b,) + (1,) * (prod.ndim - 1) + (d,))
                acc += prod.real.sum(axis=0)
                acc_sq += (prod.real**2).sum(axis=0)
                done += b
            mean = acc / n / math.sqrt(math.factorial(k))
            var = acc_sq / n - (acc / n) ** 2
            se = np.sqrt(np.maximum(var, 1e-30) / n) / math.sqrt(math.factorial(k))
            assert np.all(np.abs(mean - target) <= 5 * se + 1e-9), (k, d)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_frobenius_bound_stable_across_dim(self, k):
        """max ||h_k(x)||_F / (||x||^k + d^{k/4}) is flat in the dimension."""
        fitted = {}
        for d in (4, 16, 64):
            rng = stream(9, "frob", k, d)
            x = rng.standard_normal((2000, d))
            norms = np.concatenate([
                np.linalg.norm(hermite_tensor_block(x[s : s + 128], k).reshape(-1, d**k), axis=1)
                for s in range(0, 2000, 128)
            ])
            denom = np.linalg.norm(x, axis=1) ** k + d ** (k / 4.0)
            fitted[d] = float(np.max(norms / denom))
        values = np.array(list(fitted.values()))
        assert values.max() <= 2.0 * values.min(), fitted

    def test_correlation_identity_two_frames(self):
        """Operator norm of E[h_k(Wx) (x) h_k(W'x)] equals ||W W'^T||_op^k."""
        from mim.models import plant_subspace

        r, d, n = 2, 8, 400_000
        for pair_seed, k in [(0, 1), (1, 2), (2, 3)]:
            w1 = plant_subspace(d, r, seed=100 + pair_seed)
            w2 = plant_subspace(d, r, seed=200 + pair_seed)
            target = np.linalg.norm(w1 @ w2.T, 2) ** k
            rng = stream(10, "correl", k, pair_seed)
            dim = r**k
            acc = np.zeros((dim, dim))
            batch_vals = []
            block = 1 << 14
            done = 0
            batch_acc = np.zeros((dim, dim))
            batch_count = 0
            while done < n:
                b = min(block, n - done)
                x = rng.standard_normal((b, d))
                h1 = hermite_tensor_block(x @ w1.T, k).reshape(b, -1)
                h2 = hermite_tensor_block(x @ w2.T, k).reshape(b, -1)
                acc += h1.T @ h2
                batch_acc += h1.T @ h2
                batch_count += b
                if batch_count >= n // 10:
                    batch_vals.append(batch_acc / batch_count)
                    batch_acc = np.zeros((dim, dim))
                    batch_count = 0
                done += b
            mean = acc / n
            u, s, vt = np.linalg.svd(mean)
            estimate = s[0]
            # Scalar projections of the batch means onto the top singular
            # pair give a CLT-scale standard error for the norm estimate.
            tops = [float(u[:, 0] @ m @ vt[0]) for m in batch_vals]
            se = np.std(tops, ddof=1) / math.sqrt(len(tops))
            assert abs(estimate - target) <= 3 * se + 5e-3, (k, estimate, target, se)
