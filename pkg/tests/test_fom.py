import numpy as np
import pytest

from sosrom.fom import (ChainModel, FomDivergedError, assemble_chain_operators, input_profile,
                        internal_force, mechanical_energy, potential_energy, simulate_fom)
from sosrom.monomials import eval_basis, full_basis

from oracles import modal_response


class TestInputProfile:
    def test_values(self):
        assert input_profile("inference", 2.5) == pytest.approx(4.0)
        assert input_profile("inference", 10.0) == pytest.approx(0.0, abs=1e-12)
        assert input_profile("validation", 0.0) == 0.0
        assert input_profile("validation", 3.0) == pytest.approx(
            2.5 * np.sin((0.1 + 0.1 * np.cos(3.0)) * 3.0))
        assert input_profile("custom", 0.5, amplitude=2.0, omega=np.pi) == pytest.approx(2.0)
        assert input_profile("zero", 1.7) == 0.0

    def test_vectorized(self):
        t = np.linspace(0, 5, 11)
        np.testing.assert_allclose(input_profile("inference", t), 4 * np.sin(0.2 * np.pi * t))

    def test_unknown(self):
        with pytest.raises(ValueError):
            input_profile("step", 1.0)
        with pytest.raises(ValueError):
            input_profile("custom", 1.0)


class TestChainModel:
    @pytest.mark.parametrize("kw", [{"n_nodes": 1}, {"mass": 0.0}, {"k1": -1.0},
                                    {"alpha": -0.1}, {"law": "cubic"}, {"input_node": 40}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ChainModel(**kw)

    def test_defaults(self):
        c = ChainModel()
        assert c.n_dof == 29 and c.mass == 1.0 and c.k3 == 0.5


class TestOperators:
    def test_two_node_chain(self):
        ops = assemble_chain_operators(ChainModel(n_nodes=2, k1=3.0))
        np.testing.assert_array_equal(ops.K1, [[3.0]])

    def test_tridiagonal(self):
        K = assemble_chain_operators(ChainModel(n_nodes=6)).K1
        assert np.all(np.triu(K, 2) == 0) and np.all(np.tril(K, -2) == 0)
        np.testing.assert_array_equal(np.diag(K), [2, 2, 2, 2, 1])

    def test_duffing_force_matches_direct(self):
        chain = ChainModel(n_nodes=9, k1=1.3, k3=0.7)
        ops = assemble_chain_operators(chain)
        rng = np.random.default_rng(0)
        for _ in range(20):
            y = rng.standard_normal(chain.n_dof)
            via_ops = ops.K1 @ y + ops.k3 * ops.D.T @ (ops.D @ y) ** 3
            # direct: spring i joins nodes i-1 and i
            ext = np.concatenate([[0.0], y])
            f = chain.spring_force(np.diff(ext))
            direct = f.copy()
            direct[:-1] -= f[1:]
            np.testing.assert_allclose(via_ops, direct, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(internal_force(chain, y), direct, rtol=1e-12, atol=1e-12)

    def test_sinh_has_no_cubic(self):
        ops = assemble_chain_operators(ChainModel(law="sinh", a=2.0))
        assert not ops.has_cubic and ops.k3 is None

    def test_force_is_potential_gradient(self):
        chain = ChainModel(n_nodes=5, law="sinh", a=1.5)
        y = np.random.default_rng(1).standard_normal(4) * 0.5
        h = 1e-6
        fd = [(potential_energy(chain, y + h * e) - potential_energy(chain, y - h * e)) / (2 * h)
              for e in np.eye(4)]
        np.testing.assert_allclose(internal_force(chain, y), fd, rtol=1e-7, atol=1e-9)

    def test_quartic_potential_representable(self):
        chain = ChainModel(n_nodes=4)
        basis = full_basis(chain.n_dof, 4)
        rng = np.random.default_rng(2)
        Y = rng.standard_normal((chain.n_dof, 200))
        A = eval_basis(basis, Y).T
        target = potential_energy(chain, Y)
        coef, *_ = np.linalg.lstsq(A, target, rcond=None)
        assert np.max(np.abs(A @ coef - target)) < 1e-10


class TestSimulateFom:
    def test_zero_input(self):
        snaps = simulate_fom(ChainModel(n_nodes=5), "zero", T=2.0, n_snap=20)
        assert np.all(snaps.Y == 0) and np.all(snaps.U == 0)

    def test_snapshot_grid(self):
        snaps = simulate_fom(ChainModel(n_nodes=5), "inference", T=2.0, n_snap=20)
        np.testing.assert_allclose(snaps.times, 0.1 * np.arange(20))
        np.testing.assert_allclose(snaps.U[0], input_profile("inference", snaps.times))
        assert snaps.Y.shape == (4, 20)

    def test_bad_internal_step(self):
        with pytest.raises(ValueError):
            simulate_fom(ChainModel(n_nodes=3), "inference", T=1.0, n_snap=10, dt_int=0.03)

    def test_linear_chain_modal_closed_form(self):
        chain = ChainModel(n_nodes=10, k3=0.0)
        snaps = simulate_fom(chain, "inference")
        exact = modal_response(chain, 4.0, 0.2 * np.pi, snaps.times)
        assert np.linalg.norm(snaps.Y - exact) <= 1e-6 * np.linalg.norm(exact)

    def test_recorded_derivatives(self):
        chain = ChainModel(n_nodes=10, k3=0.0)
        snaps = simulate_fom(chain, "inference", T=5.0, n_snap=50, record_derivatives=True)
        h = 1e-6
        t = snaps.times
        exact_v = (modal_response(chain, 4.0, 0.2 * np.pi, t + h)
                   - modal_response(chain, 4.0, 0.2 * np.pi, t - h)) / (2 * h)
        np.testing.assert_allclose(snaps.Ydot, exact_v, atol=1e-6)
        ops = assemble_chain_operators(chain)
        lhs = ops.M @ snaps.Yddot + ops.C @ snaps.Ydot + ops.K1 @ snaps.Y
        np.testing.assert_allclose(lhs, ops.B @ snaps.U, atol=1e-12)

    @pytest.mark.parametrize("k3", [0.0, 0.5])
    def test_dissipative_after_input_off(self, k3):
        chain = ChainModel(n_nodes=6, k3=k3, alpha=0.05, beta=0.05)
        snaps = simulate_fom(chain, lambda t: np.where(t < 0.5, 2.0, 0.0), T=4.0, n_snap=4000,
                             record_derivatives=True)
        E = mechanical_energy(chain, snaps.Y, snaps.Ydot)
        off = snaps.times >= 0.5 + 1e-9
        E_off = E[off]
        assert E_off[0] > 0
        assert np.all(np.diff(E_off) <= 1e-8 * E_off[:-1])

    def test_divergence(self):
        # a huge constant load pushes the undamped chain past a lowered threshold
        chain = ChainModel(n_nodes=3, k3=0.0, alpha=0.0, beta=0.0)
        with pytest.raises(FomDivergedError):
            simulate_fom(chain, lambda t: 1e10 * np.ones_like(t), T=2.0, n_snap=20, blowup=1e9)

    def test_deterministic(self):
        a = simulate_fom(ChainModel(n_nodes=5), "validation", T=2.0, n_snap=20)
        b = simulate_fom(ChainModel(n_nodes=5), "validation", T=2.0, n_snap=20)
        np.testing.assert_array_equal(a.Y, b.Y)
