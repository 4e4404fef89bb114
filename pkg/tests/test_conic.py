import numpy as np
import pytest
import scipy.sparse as sp

from sosrom import conic
from sosrom.conic import (ConicProblem, InvalidProblemError, SolverSettings, least_squares,
                          solve, sym_from_tri, tri_from_sym, tri_indices)


def nonneg_example():
    # minimize x s.t. x - 1 >= 0
    p = ConicProblem.empty(1)
    p.c[0] = 1.0
    p.add_cone("nonneg", 1, [[1.0]], [-1.0])
    return p


def soc_example():
    # minimize t s.t. (t, 3, 4) in SOC
    p = ConicProblem.empty(1)
    p.c[0] = 1.0
    p.add_cone("soc", 3, [[1.0], [0.0], [0.0]], [0.0, 3.0, 4.0])
    return p


def psd_example():
    # variables: lower triangle (X11, X21, X22); minimize X11 + X22 with X21 = 1
    p = ConicProblem.empty(3)
    p.c[:] = [1.0, 0.0, 1.0]
    p.add_equalities([[0.0, 1.0, 0.0]], [1.0])
    p.add_cone("psd", 2, np.eye(3))
    return p


class TestTrivialPrograms:
    def test_nonneg(self):
        sol = solve(nonneg_example())
        assert sol.optimal
        assert sol.x[0] == pytest.approx(1.0, abs=1e-6)

    def test_soc(self):
        sol = solve(soc_example())
        assert sol.optimal
        assert sol.objective == pytest.approx(5.0, abs=1e-6)

    def test_psd(self):
        sol = solve(psd_example())
        assert sol.optimal
        assert sol.objective == pytest.approx(2.0, abs=1e-6)
        np.testing.assert_allclose(sym_from_tri(sol.x, 2), [[1, 1], [1, 1]], atol=1e-4)

    @pytest.mark.parametrize("make", [nonneg_example, soc_example, psd_example])
    def test_tolerances_and_determinism(self, make):
        s = SolverSettings()
        a, b = solve(make(), s), solve(make(), s)
        assert a.eq_residual <= s.feas_tol
        assert a.cone_margin >= -s.feas_tol
        assert abs(a.objective - b.objective) <= s.gap_tol


class TestStatuses:
    def test_primal_infeasible(self):
        p = ConicProblem.empty(1)
        p.add_equalities([[1.0]], [-1.0])
        p.add_cone("nonneg", 1, [[1.0]])
        assert solve(p).status == conic.PRIMAL_INFEASIBLE

    def test_unbounded(self):
        p = ConicProblem.empty(1)
        p.c[0] = -1.0
        p.add_cone("nonneg", 1, [[1.0]])
        assert solve(p).status == conic.DUAL_INFEASIBLE

    def test_inconsistent_empty_row(self):
        p = ConicProblem.empty(1)
        p.add_equalities(sp.csr_matrix((1, 1)), [1.0])
        assert solve(p).status == conic.PRIMAL_INFEASIBLE

    def test_iteration_cap(self, monkeypatch):
        monkeypatch.setenv(conic.MAX_ITER_ENV, "1")
        assert SolverSettings().iteration_cap() == 1
        assert solve(psd_example()).status == conic.MAX_ITER


class TestValidation:
    def test_bad_kind(self):
        p = ConicProblem.empty(1)
        p.add_cone("exp", 1, [[1.0]])
        with pytest.raises(InvalidProblemError):
            solve(p)

    def test_bad_psd_rows(self):
        p = ConicProblem.empty(2)
        p.add_cone("psd", 2, np.eye(2))
        with pytest.raises(InvalidProblemError):
            p.validate()

    def test_objective_length(self):
        p = ConicProblem.empty(2)
        p.c = np.zeros(3)
        with pytest.raises(InvalidProblemError):
            p.validate()


class TestHelpers:
    def test_triangle_round_trip(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((4, 4))
        S = A + A.T
        np.testing.assert_array_equal(sym_from_tri(tri_from_sym(S), 4), S)
        i, j = tri_indices(3)
        assert list(zip(i, j)) == [(0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]

    def test_dump(self, tmp_path):
        path = tmp_path / "prob.txt"
        psd_example().dump(path)
        text = path.read_text()
        assert text.startswith("# conic problem: 3 variables, 1 equalities")
        assert "psd 2 rows=3" in text


class TestLeastSquares:
    def test_identity(self):
        b = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(least_squares(np.eye(3), b), b)

    def test_consistent(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((20, 4))
        v = rng.standard_normal(4)
        x = least_squares(A, A @ v)
        np.testing.assert_allclose(x, v, rtol=1e-10)
        assert np.linalg.norm(A @ x - A @ v) < 1e-10

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(2)
        A = rng.standard_normal((50, 10))
        b = rng.standard_normal(50)
        oracle = np.linalg.solve(A.T @ A, A.T @ b)
        np.testing.assert_allclose(least_squares(A, b), oracle, rtol=1e-8)

    def test_rank_deficient_min_norm(self):
        A = np.array([[1.0, 1.0], [1.0, 1.0]])
        np.testing.assert_allclose(least_squares(A, [2.0, 2.0]), [1.0, 1.0], atol=1e-12)
