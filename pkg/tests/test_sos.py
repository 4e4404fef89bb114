import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosrom.clustering import ClusterSelection, dense_selection, select_clusters
from sosrom.monomials import eval_basis, eval_gradient, eval_polynomial, euler_weights, full_basis
from sosrom.sos import (CoefficientMapError, assemble_positivity_constraints,
                        build_coefficient_map, check_certificate, positivity_offsets, sos_value)

SIGMA = np.array([10.0, 7.0, 5.0, 3.0, 2.0, 1.0])


def random_psd(rng, n, rank=None):
    A = rng.standard_normal((n, rank or n))
    return A @ A.T


def random_grams(rng, sizes):
    return [random_psd(rng, n) for n in sizes]


class TestCoefficientMap:
    def test_single_variable(self):
        sel = ClusterSelection.from_clusters(1, 4, [(0,)])
        cmap = build_coefficient_map(sel)
        assert sel.phi.entries == ((2,), (3,), (4,))
        # lower triangle (0,0), (1,0), (1,1) -> x^2, 2 x^3, x^4
        np.testing.assert_array_equal(cmap.matrix.toarray(), [[1, 0, 0], [0, 2, 0], [0, 0, 1]])

    def test_pair_hits_full_basis(self):
        sel = ClusterSelection.from_clusters(2, 4, [(0, 1)])
        cmap = build_coefficient_map(sel)
        assert cmap.n_gram == 15
        assert sel.phi == full_basis(2, 4)
        hit = np.unique(cmap.matrix.tocoo().row)
        assert hit.size == 12

    def test_identity_gram(self):
        sel = ClusterSelection.from_clusters(1, 4, [(0,)])
        k = build_coefficient_map(sel).apply([np.eye(2)])
        np.testing.assert_array_equal(k, [1, 0, 1])

    def test_stack_round_trip(self):
        rng = np.random.default_rng(0)
        sel = select_clusters(SIGMA, 4, 2, 4)
        cmap = build_coefficient_map(sel)
        G = random_grams(rng, cmap.sizes)
        for a, b in zip(cmap.unstack(cmap.stack(G)), G):
            np.testing.assert_allclose(a, b, rtol=1e-15)

    def test_missing_product_monomial(self):
        sel = ClusterSelection.from_clusters(2, 4, [(0, 1)])
        trimmed = ClusterSelection(r=sel.r, d=sel.d, clusters=sel.clusters,
                                   phi=full_basis(2, 2), psi_bases=sel.psi_bases, theta=sel.theta)
        with pytest.raises(CoefficientMapError):
            build_coefficient_map(trimmed)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 5), st.integers(1, 3), st.sampled_from([2, 4]), st.integers(0, 2**31 - 1))
    def test_reconstruction(self, r, theta, d, seed):
        theta = min(theta, r)
        rng = np.random.default_rng(seed)
        sel = select_clusters(SIGMA[:r], r, theta, d)
        cmap = build_coefficient_map(sel)
        G = random_grams(rng, cmap.sizes)
        coef = cmap.apply(G)
        X = rng.standard_normal((r, 100))
        direct = sos_value(sel, G, X)
        via_map = eval_polynomial(sel.phi, coef, X)
        np.testing.assert_allclose(via_map, direct, rtol=1e-10, atol=1e-12)


class TestOffsets:
    def test_split_sums_to_eps(self):
        sel = select_clusters(SIGMA, 4, 2, 4)
        eps = 0.3
        D, quad = positivity_offsets(sel, eps)
        per_var = np.zeros(4)
        for c, psi, Di in zip(sel.clusters, sel.psi_bases, D):
            for j in c:
                e = [0] * 4
                e[j] = 1
                per_var[j] += Di[psi.index(e), psi.index(e)]
        np.testing.assert_allclose(per_var, eps)
        # the offsets themselves are a certificate of eps * ||x||^2
        np.testing.assert_allclose(build_coefficient_map(sel).apply(D), quad, rtol=1e-15)

    def test_quad_entries(self):
        sel = dense_selection(3, 2)
        _, quad = positivity_offsets(sel, 2.0)
        for e, q in zip(sel.phi.entries, quad):
            assert q == (2.0 if sorted(e) == [0, 0, 2] else 0.0)


class TestAssembly:
    def selection(self):
        sel = select_clusters(SIGMA[:5], 3, 2, 4)
        assert [len(p) for p in sel.psi_bases] == [5, 5]
        return sel

    def test_bounded_structure(self):
        sel = self.selection()
        pc = assemble_positivity_constraints(sel, 1e-3, "bounded")
        assert pc.psd_blocks == [("G", 0, 5), ("G", 1, 5)]
        assert pc.n_equalities == sel.n_phi == 21

    def test_iss_structure(self):
        sel = self.selection()
        pc = assemble_positivity_constraints(sel, 1e-3, "iss")
        assert len(pc.psd_blocks) == 4
        assert pc.n_equalities == 2 * sel.n_phi

    def test_negative_eps(self):
        with pytest.raises(ValueError):
            assemble_positivity_constraints(self.selection(), -1.0, "bounded")

    def test_unconstrained_mode_rejected(self):
        with pytest.raises(ValueError):
            assemble_positivity_constraints(self.selection(), 1e-3, "unconstrained")

    def test_zero_eps_is_plain_sos(self):
        pc = assemble_positivity_constraints(self.selection(), 0.0, "iss")
        assert np.all(pc.quad == 0)

    def test_equality_system_satisfied_by_consistent_point(self):
        rng = np.random.default_rng(3)
        sel = self.selection()
        eps = 0.05
        pc = assemble_positivity_constraints(sel, eps, "iss")
        cmap = pc.coef_map
        G = random_grams(rng, cmap.sizes)
        k = cmap.apply(G) + pc.quad
        # pick H so that the Euler-weighted family matches as well
        H_coef = pc.weights * k - pc.quad
        n_g = cmap.n_gram
        n_phi = sel.n_phi
        A, b = pc.equality_system(n_phi + 2 * n_g, 0, {"G": n_phi, "H": n_phi + n_g})
        x = np.concatenate([k, cmap.stack(G), np.zeros(n_g)])
        res = A @ x - b
        np.testing.assert_allclose(res[:n_phi], 0, atol=1e-10)
        # H part: residual equals the coefficients H must reproduce
        np.testing.assert_allclose(-res[n_phi:], H_coef, atol=1e-10)


class TestPointwise:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2**31 - 1))
    def test_certified_polynomial_nonnegative(self, r, seed):
        rng = np.random.default_rng(seed)
        sel = select_clusters(SIGMA[:r], r, 2, 4)
        cmap = build_coefficient_map(sel)
        eps = 0.1
        _, quad = positivity_offsets(sel, eps)
        # low-rank blocks sit on the boundary of the PSD cone
        G = [random_psd(rng, n, rank=1) for n in cmap.sizes]
        k = cmap.apply(G) + quad
        X = rng.standard_normal((r, 10_000))
        vals = eval_polynomial(sel.phi, k, X) - eps * np.sum(X**2, axis=0)
        assert np.min(vals) >= -1e-9

    def test_euler_encoding(self):
        rng = np.random.default_rng(4)
        sel = select_clusters(SIGMA, 4, 2, 4)
        k = rng.standard_normal(sel.n_phi)
        w = euler_weights(sel.phi)
        X = rng.standard_normal((4, 100))
        lhs = eval_basis(sel.phi, X).T @ (w * k)
        rhs = np.sum(X * eval_gradient(sel.phi, k, X), axis=0)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-12)


class TestCheckCertificate:
    def single(self):
        return ClusterSelection.from_clusters(1, 4, [(0,)])

    def test_identity_passes(self):
        rep = check_certificate(self.single(), [1.0, 0.0, 1.0], [np.eye(2)], 0.0)
        assert rep.passed
        assert rep.gram_min_eig == [pytest.approx(1.0)]

    def test_negative_eigenvalue_fails(self):
        G = np.diag([1.0, -0.1])
        k = build_coefficient_map(self.single()).apply([G])
        rep = check_certificate(self.single(), k, [G], 0.0)
        assert not rep.checks["gram_psd"]
        assert rep.checks["gram_match"]
        assert "gram_psd" in rep.failures()

    def test_mismatch_fails(self):
        rep = check_certificate(self.single(), [1.0, 0.5, 1.0], [np.eye(2)], 0.0)
        assert not rep.checks["gram_match"]

    def test_iss_checks(self):
        sel = self.single()
        eps = 0.5
        # k = x^2 + x^4: x k'(x) = 2x^2 + 4x^4
        k = np.array([1.0, 0.0, 1.0])
        G = np.diag([1.0 - eps, 1.0])
        H = np.diag([2.0 - eps, 4.0])
        rep = check_certificate(sel, k, [G], eps, [H])
        assert rep.passed
        assert set(rep.checks) >= {"h_psd", "h_match", "sampled_euler"}
        assert rep.to_dict()["passed"] is True
