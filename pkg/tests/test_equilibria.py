import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp

from chemostat.equilibria import (
    assemble_B,
    break_even,
    cep_equilibrium,
    coexistence_equilibrium,
    residual_bound,
    u_crit,
    washout_equilibrium,
    xi,
)
from chemostat.errors import DomainError, NoCoexistenceError
from chemostat.model import ChemostatModel, MonodKinetics, NeumannLaplacian, rhs_batch
from chemostat.spectral import mu_hat, spectral_abscissa

CASE1_PAPER = (0.48, 0.11, 0.04, 0.03, 0.03, 0.37)
CASE2_PAPER = (0.57, 0.04, 0.006, 0.04, 0.15, 0.31)


def scipy_steady_state(model):
    """Long integration from an interior point with an independent solver."""
    def f(t, y):
        return rhs_batch(model, y[None, :], model.u, model.epsilon)[0]

    sol = solve_ivp(f, (0, 3000), [0.15] * model.n + [0.25], method="LSODA", rtol=1e-11, atol=1e-13)
    return sol.y[:, -1]


class TestBreakEven:
    def test_table1(self, case1):
        t = break_even(case1)
        assert t.entries[0] == pytest.approx(0.112 / 0.44, abs=1e-14)
        assert t.entries[1] == math.inf and t.entries[2] == math.inf
        assert t.entries[3] == pytest.approx(0.45, abs=1e-14)
        assert t.entries[4] == pytest.approx(0.4, abs=1e-14)
        assert t.winner == 1 and t.phi == t.entries[0]

    def test_all_unattainable(self, case1):
        t = break_even(case1, 0.7)
        assert all(e == math.inf for e in t.entries)
        assert t.winner is None and t.phi == math.inf

    def test_tie_has_no_winner(self):
        k = MonodKinetics(1.0, 1.0)
        m = ChemostatModel(n=2, s_in=1.0, u=0.2, epsilon=0.0, yields=(1.0, 2.0),
                           kinetics=(k, k), perturbation=NeumannLaplacian())
        assert break_even(m).winner is None

    def test_nonpositive_u(self, case1):
        with pytest.raises(DomainError):
            break_even(case1, 0.0)

    @given(u=st.floats(0.01, 0.9))
    def test_invariant(self, case1, u):
        t = break_even(case1, u)
        for k, e, top in zip(case1.kinetics, t.entries, case1.mu(1.0)):
            assert math.isfinite(e) == (u < top)
            if math.isfinite(e):
                assert k.value(e) == pytest.approx(u, abs=1e-12)


class TestCEP:
    def test_species_one(self, case1):
        eq = cep_equilibrium(case1, 1)
        assert eq.state.x[0] == pytest.approx(0.745454545454, abs=1e-10)
        assert eq.state.s == pytest.approx(0.254545454545, abs=1e-10)
        assert eq.label == "cep:1" and eq.residual <= 1e-10

    def test_species_four(self, case1):
        eq = cep_equilibrium(case1, 4)
        assert eq.state.s == pytest.approx(0.45, abs=1e-14)
        assert eq.state.x[3] == pytest.approx(2.5 * 0.55, abs=1e-13)

    @pytest.mark.parametrize("i", [0, 6, 2])
    def test_invalid_species(self, case1, i):
        with pytest.raises(DomainError):
            cep_equilibrium(case1, i)

    def test_break_even_at_inflow(self):
        k = MonodKinetics(1.0, 1.0)
        m = ChemostatModel(n=2, s_in=1.0, u=k.value(1.0), epsilon=0.0, yields=(1.0, 1.0),
                           kinetics=(k, MonodKinetics(2.0, 1.0)), perturbation=NeumannLaplacian())
        eq = cep_equilibrium(m, 1)
        assert np.array_equal(eq.state.as_vector(), m.washout.as_vector())

    def test_washout(self, either_case):
        eq = washout_equilibrium(either_case)
        assert eq.residual == 0.0 and eq.label == "washout"


class TestCriticalRate:
    def test_unperturbed(self, either_case):
        assert u_crit(either_case, 0.0) == pytest.approx(0.65625, abs=1e-12)

    def test_limits(self, case1, case2):
        assert abs(u_crit(case1, 1e6) - 0.44) <= 0.005
        assert abs(u_crit(case2, 1e6) - 0.39) <= 0.005
        assert u_crit(case1, 1e6) == pytest.approx(mu_hat(case1), abs=1e-5)
        assert u_crit(case2, 1e6) == pytest.approx(mu_hat(case2), abs=1e-5)

    def test_nonincreasing(self, either_case):
        vals = [u_crit(either_case, e) for e in np.arange(0, 10.0001, 0.25)]
        assert all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))

    def test_negative_eps(self, case1):
        with pytest.raises(DomainError):
            u_crit(case1, -1.0)

    @given(frac=st.floats(0.01, 0.99))
    def test_xi_inverts(self, either_case, frac):
        lo, hi = mu_hat(either_case), u_crit(either_case, 0.0)
        u = lo + frac * (hi - lo)
        eps = xi(either_case, u)
        assert u_crit(either_case, eps) == pytest.approx(u, abs=1e-9)

    def test_xi_edges(self, case1):
        assert xi(case1, 0.3) == math.inf
        assert xi(case1, u_crit(case1, 0.0)) == 0.0
        with pytest.raises(DomainError):
            xi(case1, 0.7)


class TestCoexistence:
    def test_case1_matches_published(self, case1):
        eq = coexistence_equilibrium(case1)
        assert np.abs(eq.state.as_vector() - CASE1_PAPER).max() <= 5e-3
        assert eq.residual <= residual_bound(eq.state)

    def test_case2_half_eps_matches_published(self, case2):
        # the published case-2 values are reproduced at eps = 0.05, see the decision log
        eq = coexistence_equilibrium(case2.with_params(epsilon=0.05))
        assert np.abs(eq.state.as_vector() - CASE2_PAPER).max() <= 5e-3

    def test_against_independent_solver(self, either_case):
        eq = coexistence_equilibrium(either_case)
        assert np.abs(eq.state.as_vector() - scipy_steady_state(either_case)).max() <= 1e-6

    def test_case2_regression(self, case2):
        eq = coexistence_equilibrium(case2)
        want = (0.42709, 0.07016, 0.02608, 0.10701, 0.24709, 0.35569)
        assert np.abs(eq.state.as_vector() - want).max() <= 1e-5

    def test_interior(self, either_case):
        eq = coexistence_equilibrium(either_case)
        assert eq.state.x.min() > 0 and 0 < eq.state.s < 1
        assert spectral_abscissa(assemble_B(either_case, eq.state.s)) == pytest.approx(0.0, abs=1e-11)

    def test_normalization_independent(self, either_case):
        a = coexistence_equilibrium(either_case).state.as_vector()
        b = coexistence_equilibrium(either_case, normalization="l1").state.as_vector()
        assert np.abs(a - b).max() <= 1e-10
        with pytest.raises(ValueError):
            coexistence_equilibrium(either_case, normalization="max")

    def test_small_eps_continuity(self, either_case):
        eq = coexistence_equilibrium(either_case.with_params(epsilon=1e-8))
        cep = cep_equilibrium(either_case, 1)
        assert np.abs(eq.state.as_vector() - cep.state.as_vector()).max() <= 1e-4

    @pytest.mark.parametrize("eps", [0.5, 1.0, 5.0, 10.0, 50.0, 100.0])
    def test_large_eps(self, either_case, eps):
        u = min(0.3, 0.9 * u_crit(either_case, eps))
        eq = coexistence_equilibrium(either_case.with_params(u=u, epsilon=eps))
        assert eq.state.x.min() > 0
        assert eq.residual <= residual_bound(eq.state)

    def test_note_beyond_eps_bar(self, case1, case2):
        assert coexistence_equilibrium(case2.with_params(epsilon=1.0, u=0.3)).notes
        assert not coexistence_equilibrium(case1.with_params(epsilon=1.0, u=0.3)).notes

    def test_no_coexistence_above_threshold(self, either_case):
        with pytest.raises(NoCoexistenceError):
            coexistence_equilibrium(either_case.with_params(u=0.6))
        uc = u_crit(either_case)
        with pytest.raises(NoCoexistenceError):
            coexistence_equilibrium(either_case.with_params(u=uc))

    @pytest.mark.parametrize("change", [{"epsilon": 0.0}, {"u": 0.0}])
    def test_domain(self, case1, change):
        with pytest.raises(DomainError):
            coexistence_equilibrium(case1.with_params(**change))

    def test_json(self, case1):
        doc = coexistence_equilibrium(case1).to_json()
        assert set(doc) == {"kind", "x", "s", "residual", "spectral_margin"}
        assert doc["kind"] == "coexistence" and len(doc["x"]) == 5
