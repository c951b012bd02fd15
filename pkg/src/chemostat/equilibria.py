"""Steady states: washout, competitive-exclusion equilibria, coexistence.

Species are numbered from 1, as in the model tables.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import DomainError, InternalConsistencyError, NoCoexistenceError, NumericError
from .model import ChemostatModel, State, a6_eps_bar, eval_rhs
from .spectral import mu_hat, perron_pair, spectral_abscissa

__all__ = [
    "Equilibrium",
    "BreakEvenTable",
    "break_even",
    "washout_equilibrium",
    "cep_equilibrium",
    "assemble_B",
    "u_crit",
    "xi",
    "coexistence_equilibrium",
    "residual_bound",
]

TIE_TOL = 1e-12
LAMBDA_TOL = 1e-11
XI_TOL = 1e-10


def residual_bound(state: State) -> float:
    return 1e-8 * (1.0 + float(np.linalg.norm(state.as_vector())))


@dataclasses.dataclass
class Equilibrium:
    kind: str                 # "washout" | "cep" | "coexistence"
    state: State
    residual: float
    species: int | None = None
    spectral_margin: float | None = None
    notes: tuple = ()

    @property
    def label(self) -> str:
        return f"cep:{self.species}" if self.kind == "cep" else self.kind

    def to_json(self) -> dict:
        return {
            "kind": self.label,
            "x": [float(v) for v in self.state.x],
            "s": float(self.state.s),
            "residual": float(self.residual),
            "spectral_margin": None if self.spectral_margin is None else float(self.spectral_margin),
        }


@dataclasses.dataclass(frozen=True)
class BreakEvenTable:
    entries: tuple   # mu_i^{-1}(u) restricted to [0, s_in], inf when unattainable
    phi: float
    winner: int | None

    def __len__(self):
        return len(self.entries)


def break_even(model: ChemostatModel, u: float | None = None) -> BreakEvenTable:
    u = model.u if u is None else float(u)
    if not u > 0:
        raise DomainError("break-even concentrations need u > 0")
    entries = []
    top = model.mu(model.s_in)
    for k, mu_top in zip(model.kinetics, top):
        entries.append(k.inverse(u) if u < mu_top else math.inf)
    phi = min(entries)
    winner = None
    if math.isfinite(phi):
        close = [i for i, e in enumerate(entries) if abs(e - phi) <= TIE_TOL]
        if len(close) == 1:
            winner = close[0] + 1
    return BreakEvenTable(entries=tuple(entries), phi=phi, winner=winner)


def _make(model: ChemostatModel, kind: str, state: State, species=None, epsilon=None) -> Equilibrium:
    res = float(np.linalg.norm(eval_rhs(model, state, epsilon_override=epsilon)))
    return Equilibrium(kind=kind, state=state, residual=res, species=species)


def washout_equilibrium(model: ChemostatModel) -> Equilibrium:
    return _make(model, "washout", model.washout)


def cep_equilibrium(model: ChemostatModel, species: int) -> Equilibrium:
    """E_i of the unperturbed system: s = mu_i^{-1}(u), x_i = Y_i (s_in - s)."""
    if not 1 <= species <= model.n:
        raise DomainError(f"species must be in 1..{model.n}, got {species}")
    table = break_even(model)
    s = table.entries[species - 1]
    if model.kinetics[species - 1].value(model.s_in) == model.u:
        s = model.s_in   # break-even exactly at s_in: E_i coincides with E_wo
    if not math.isfinite(s):
        raise DomainError(f"species {species} cannot break even at u={model.u}")
    x = np.zeros(model.n)
    x[species - 1] = model.yields[species - 1] * (model.s_in - s)
    eq = _make(model, "cep", State(x, s), species=species, epsilon=0.0)
    if eq.residual > 1e-10:
        raise InternalConsistencyError(f"E_{species} residual {eq.residual:.3g} exceeds 1e-10")
    return eq


def assemble_B(model: ChemostatModel, s: float, u: float | None = None, epsilon: float | None = None) -> np.ndarray:
    """B(s, u, eps) = D(s) - u I + eps T(s)."""
    u = model.u if u is None else u
    eps = model.epsilon if epsilon is None else epsilon
    return model.D(s) - u * np.eye(model.n) + eps * model.T(s)


def u_crit(model: ChemostatModel, epsilon: float | None = None) -> float:
    """Critical dilution rate lambda(D(s_in) + eps T(s_in))."""
    eps = model.epsilon if epsilon is None else float(epsilon)
    if eps < 0:
        raise DomainError("epsilon must be >= 0")
    return spectral_abscissa(model.D(model.s_in) + eps * model.T(model.s_in))


def xi(model: ChemostatModel, u: float) -> float:
    """Inverse of u_c: the eps with u_c(eps) = u, +inf for u <= mu_hat."""
    if u < 0:
        raise DomainError("u must be >= 0")
    top = u_crit(model, 0.0)
    if u > top:
        raise DomainError(f"u={u} exceeds u_c(0)={top}")
    if u <= mu_hat(model):
        return math.inf
    if u == top:
        return 0.0
    lo, hi = 0.0, 1.0
    while u_crit(model, hi) > u:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise NumericError(f"cannot bracket u_c(eps) = {u}")
    while True:
        mid = 0.5 * (lo + hi)
        val = u_crit(model, mid) - u
        if abs(val) <= XI_TOL or mid in (lo, hi):
            return mid
        if val > 0:
            lo = mid
        else:
            hi = mid


def coexistence_equilibrium(model: ChemostatModel, normalization: str = "l2") -> Equilibrium:
    """Steady state with every species present, for 0 < u < u_c(eps), eps > 0.

    s solves lambda(B(s, u, eps)) = 0 by bisection; x is the Perron vector of
    that B scaled so that total uptake balances u (s_in - s).
    """
    u, eps = model.u, model.epsilon
    if not u > 0:
        raise DomainError("coexistence needs u > 0")
    if not eps > 0:
        raise DomainError("coexistence needs eps > 0; use cep_equilibrium at eps = 0")
    uc = u_crit(model)
    if u >= uc:
        raise NoCoexistenceError(f"u={u} >= u_c({eps})={uc}: washout is the only equilibrium")

    def lam(s):
        return spectral_abscissa(assemble_B(model, s))

    lo, hi = 0.0, model.s_in
    f_lo, f_hi = lam(lo), lam(hi)
    if not (f_lo < 0 < f_hi):
        raise NumericError(f"invalid bracket: lambda(B(0))={f_lo}, lambda(B(s_in))={f_hi}")
    s, f_s = hi, f_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = lam(mid)
        if abs(f_mid) < abs(f_s):
            s, f_s = mid, f_mid
        if abs(f_mid) <= LAMBDA_TOL or mid in (lo, hi):
            break
        if f_mid < 0:
            lo = mid
        else:
            hi = mid

    pair = perron_pair(assemble_B(model, s))
    a = pair.v
    if normalization == "l1":
        a = a / a.sum()
    elif normalization != "l2":
        raise ValueError(f"unknown normalization {normalization!r}")
    mu_s = model.mu(s)
    tau = float(np.sum(mu_s * a / model.Y))
    alpha = u * (model.s_in - s) / tau
    state = State(alpha * a, s)
    eq = _make(model, "coexistence", state)
    if eq.residual > residual_bound(state):
        raise InternalConsistencyError(f"coexistence residual {eq.residual:.3g} too large")
    if not (np.all(state.x > 0) and 0 < s < model.s_in):
        raise InternalConsistencyError("coexistence state is not interior")
    bar = a6_eps_bar(model)
    if eps > bar:
        eq.notes = (f"eps={eps} exceeds the checked monotonicity bound eps_bar={bar:.6g}",)
    return eq
