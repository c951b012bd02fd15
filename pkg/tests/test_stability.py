import numpy as np
import pytest
from hypothesis import given, strategies as st

from chemostat import stability
from chemostat.equilibria import assemble_B, cep_equilibrium, coexistence_equilibrium, u_crit
from chemostat.errors import InternalConsistencyError
from chemostat.model import State
from chemostat.spectral import spectral_abscissa
from chemostat.stability import StabilityReport, classify, fd_discrepancy, jacobian

state_x = st.lists(st.floats(0, 10), min_size=5, max_size=5)


@given(x=state_x, s=st.floats(0, 1), eps=st.floats(0, 10))
def test_matches_finite_differences(either_case, x, s, eps):
    m = either_case.with_params(epsilon=eps)
    assert fd_discrepancy(m, State(x, s)) <= 1e-5


@pytest.mark.parametrize("eps", [0.0, 0.1, 1.0, 10.0])
def test_washout_block(either_case, eps):
    m = either_case.with_params(epsilon=eps)
    J = jacobian(m, m.washout)
    assert np.allclose(J[:5, :5], assemble_B(m, 1.0), atol=1e-15)
    assert spectral_abscissa(J[:5, :5]) == pytest.approx(u_crit(m) - m.u, abs=1e-12)
    assert spectral_abscissa(J) == pytest.approx(max(u_crit(m) - m.u, -m.u), abs=1e-9)


def test_empty_reactor_substrate_column(case2):
    J = jacobian(case2.with_params(epsilon=0.0), State(np.zeros(5), 0.3))
    assert np.array_equal(J[:5, 5], np.zeros(5))


def test_cep_hurwitz(case1):
    m = case1.with_params(epsilon=0.0)
    eq = cep_equilibrium(m, 1)
    report = classify(m, eq)
    assert report.hurwitz and report.status == "hurwitz"
    assert eq.spectral_margin == report.margin < 0


def test_coexistence_hurwitz(either_case):
    report = classify(either_case, coexistence_equilibrium(either_case))
    assert report.hurwitz
    assert report.fd_discrepancy <= 1e-5


@pytest.mark.parametrize("margin,status", [(-1.0, "hurwitz"), (-1e-10, "marginal"), (5e-10, "marginal"), (1e-3, "unstable")])
def test_status(margin, status):
    r = StabilityReport(jacobian=np.zeros((1, 1)), margin=margin, hurwitz=margin < -1e-9, fd_discrepancy=0.0)
    assert r.status == status


def test_fd_guard(case1, monkeypatch):
    real = stability.jacobian
    monkeypatch.setattr(stability, "jacobian", lambda m, s: real(m, s) + 1e-3)
    with pytest.raises(InternalConsistencyError):
        classify(case1, case1.washout)


def test_accepts_plain_state(case1):
    assert classify(case1, case1.washout).margin == pytest.approx(u_crit(case1) - case1.u, abs=1e-12)
