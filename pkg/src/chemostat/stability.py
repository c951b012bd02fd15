"""Jacobian of the chemostat vector field and local stability margins."""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import InternalConsistencyError
from .model import ChemostatModel, State, eval_rhs
from .spectral import spectral_abscissa

__all__ = ["StabilityReport", "jacobian", "fd_jacobian", "fd_discrepancy", "classify"]

FD_TOL = 1e-5
HURWITZ_TOL = 1e-9


def jacobian(model: ChemostatModel, state: State) -> np.ndarray:
    n = model.n
    x, s = state.x, state.s
    mu, dmu = model.mu(s), model.dmu(s)
    eps, u = model.epsilon, model.u
    J = np.empty((n + 1, n + 1))
    J[:n, :n] = np.diag(mu) - u * np.eye(n) + eps * model.T(s)
    J[:n, n] = dmu * x + eps * (model.dT(s) @ x)
    J[n, :n] = -mu / model.Y
    J[n, n] = -float(np.sum(dmu * x / model.Y)) - u
    return J


def fd_jacobian(model: ChemostatModel, state: State) -> np.ndarray:
    """Central differences, step 1e-6 * max(1, |component|)."""
    y = state.as_vector()
    d = y.size
    J = np.empty((d, d))
    for k in range(d):
        step = 1e-6 * max(1.0, abs(y[k]))
        yp, ym = y.copy(), y.copy()
        yp[k] += step
        ym[k] -= step
        J[:, k] = (eval_rhs(model, State.from_vector(yp)) - eval_rhs(model, State.from_vector(ym))) / (2 * step)
    return J


def fd_discrepancy(model: ChemostatModel, state: State, J: np.ndarray | None = None) -> float:
    """Largest entrywise gap between analytic and FD Jacobians, relative to
    max(1, max |J|)."""
    J = jacobian(model, state) if J is None else J
    return float(np.abs(J - fd_jacobian(model, state)).max() / max(1.0, np.abs(J).max()))


@dataclasses.dataclass
class StabilityReport:
    jacobian: np.ndarray
    margin: float
    hurwitz: bool
    fd_discrepancy: float
    tol: float = HURWITZ_TOL

    @property
    def status(self) -> str:
        if self.margin < -self.tol:
            return "hurwitz"
        if self.margin <= self.tol:
            return "marginal"
        return "unstable"


def classify(model: ChemostatModel, eq, tol: float = HURWITZ_TOL) -> StabilityReport:
    """Spectral abscissa of the Jacobian at ``eq`` (an Equilibrium or State);
    fills ``eq.spectral_margin`` when given an Equilibrium."""
    state = eq.state if hasattr(eq, "state") else eq
    J = jacobian(model, state)
    gap = fd_discrepancy(model, state, J)
    if gap > FD_TOL:
        raise InternalConsistencyError(f"analytic and finite-difference Jacobians differ by {gap:.3g}")
    margin = spectral_abscissa(J)
    if hasattr(eq, "spectral_margin"):
        eq.spectral_margin = margin
    return StabilityReport(jacobian=J, margin=margin, hurwitz=margin < -tol, fd_discrepancy=gap, tol=tol)
