"""Named invariant checks across all modules, run by ``chemostat verify``.

Each check takes a model and a seeded generator and returns (ok, detail).
Hard checks decide the exit status; heuristic ones only warn. A check whose
preconditions do not hold for the given model is reported as skipped.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from . import analysis
from .equilibria import (
    break_even,
    cep_equilibrium,
    coexistence_equilibrium,
    residual_bound,
    u_crit,
    washout_equilibrium,
    assemble_B,
)
from .integrator import IntegratorSettings, solve_batch
from .model import (
    ChemostatModel,
    NeumannLaplacian,
    State,
    check_hypotheses,
    eval_perturbation,
    eval_rhs,
)
from .spectral import collatz_wielandt_bounds, perron_pair, spectral_abscissa
from .stability import classify, fd_discrepancy, jacobian

__all__ = ["Outcome", "PROPERTIES", "run_properties"]


class Skip(Exception):
    """Raised by a check whose preconditions do not hold for the model."""


@dataclasses.dataclass
class Outcome:
    name: str
    module: str
    status: str    # "pass" | "fail" | "warn" | "skip"
    detail: str
    seconds: float

    @property
    def line(self) -> str:
        return f"{self.status.upper():4s} {self.module}.{self.name}: {self.detail}"


@dataclasses.dataclass(frozen=True)
class _Property:
    name: str
    module: str
    func: object
    hard: bool = True


PROPERTIES: list[_Property] = []


def _prop(module: str, hard: bool = True):
    def deco(func):
        PROPERTIES.append(_Property(func.__name__, module, func, hard))
        return func
    return deco


def _random_states(model, rng, count, x_hi=10.0):
    x = x_hi * rng.random((count, model.n))
    s = model.s_in * rng.random(count)
    return x, s


def _coexistence(model: ChemostatModel):
    if not (model.epsilon > 0 and 0 < model.u < u_crit(model)):
        raise Skip(f"no coexistence at u={model.u}, eps={model.epsilon}")
    return coexistence_equilibrium(model)


# -- model -------------------------------------------------------------------


@_prop("model")
def perturbation_conserves_mass(model, rng):
    x, s = _random_states(model, rng, 1000)
    eps = 10.0 * rng.random(1000)
    worst = 0.0
    for xi, si, ei in zip(x, s, eps):
        h = eval_perturbation(model, xi, si, ei)
        worst = max(worst, abs(h.sum()) / ((1 + np.linalg.norm(xi)) * max(ei, 1e-300)))
    return worst <= 1e-10, f"max |sum h|/((1+|x|) eps) = {worst:.3g} over 1000 samples"


@_prop("model")
def perturbation_preserves_zero_faces(model, rng):
    worst = 0.0
    for _ in range(200):
        x, s = _random_states(model, rng, 1)
        x, s = x[0], float(s[0])
        i = int(rng.integers(model.n))
        x[i] = 0.0
        h = eval_perturbation(model, x, s, float(10 * rng.random() + 1e-3))
        worst = min(worst, float(h[i]))
    return worst >= -1e-12, f"min h_i at x_i = 0: {worst:.3g}"


@_prop("model")
def washout_is_stationary(model, rng):
    worst = max(float(np.abs(eval_rhs(model, model.washout, epsilon_override=e)).max())
                for e in np.concatenate([[0.0, 10.0], 10 * rng.random(50)]))
    return worst <= 1e-14, f"max |f(E_wo)| = {worst:.3g}"


@_prop("model")
def perturbation_matrix_structure(model, rng):
    T = model.T(model.s_in)
    col = float(np.abs(T.sum(axis=0)).max())
    ok = col <= 1e-14
    detail = f"max |column sum| = {col:.3g}"
    if isinstance(model.perturbation, NeumannLaplacian):
        row = float(np.abs(T.sum(axis=1)).max())
        sym = bool(np.array_equal(T, T.T))
        ok = ok and sym and row <= 1e-14
        detail += f", max |row sum| = {row:.3g}, symmetric = {sym}"
    return ok, detail


@_prop("model")
def hypotheses_hold(model, rng):
    report = check_hypotheses(model)
    failed = [c.name for c in report.failed()]
    return not failed, ("A1-A6, CS-pos hold" if not failed else f"failed: {', '.join(failed)}") + \
        f"; eps_bar = {report.eps_bar:.6g}"


@_prop("model")
def kinetics_invariants(model, rng):
    s = np.linspace(0.0, 10 * model.s_in, 1001)
    mu = np.array([model.mu(si) for si in s])
    ok = bool(np.all(mu[0] == 0) and np.all(np.diff(mu, axis=0) > 0) and np.all(mu < model.a))
    return ok, "mu(0) = 0, strictly increasing, below a on [0, 10 s_in]"


# -- spectral ----------------------------------------------------------------


def _random_column_zero(rng, n):
    A = rng.random((n, n))
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -A.sum(axis=0))
    return A


def _perron_ok(A, pair) -> float:
    norm = max(np.linalg.norm(A, 2), np.finfo(float).tiny)
    r1, r2 = pair.residuals(A)
    bad = max(r1, r2) / norm
    if min(pair.v.min(), pair.w.min()) <= 0:
        bad = math.inf
    if abs(pair.w @ pair.v - 1) > 1e-12 or abs(np.linalg.norm(pair.v) - 1) > 1e-12:
        bad = math.inf
    return bad


@_prop("spectral")
def column_sum_zero_has_zero_abscissa(model, rng):
    worst = 0.0
    for _ in range(200):
        worst = max(worst, abs(spectral_abscissa(_random_column_zero(rng, model.n))))
    for s in np.linspace(0.0, model.s_in, 101)[1:]:
        worst = max(worst, abs(spectral_abscissa(model.T(s))))
    return worst <= 1e-9, f"max |lambda| = {worst:.3g} (200 random matrices, T(s) on 100 s-values)"


@_prop("spectral")
def perron_residuals(model, rng):
    mats = [_random_column_zero(rng, model.n) for _ in range(50)]
    mats.append(model.T(model.s_in))
    mats += [assemble_B(model, s) for s in np.linspace(0.0, model.s_in, 11)[1:]]
    if model.n == 1:
        raise Skip("n = 1 has no irreducible perturbation")
    worst = max(_perron_ok(A, perron_pair(A)) for A in mats)
    return worst <= 1e-10, f"max relative residual {worst:.3g} on {len(mats)} matrices; v, w > 0; normalized"


@_prop("spectral")
def transpose_invariance(model, rng):
    worst = 0.0
    for _ in range(100):
        A = rng.standard_normal((model.n, model.n))
        worst = max(worst, abs(spectral_abscissa(A) - spectral_abscissa(A.T)))
    return worst <= 1e-10, f"max |lambda(A) - lambda(A^T)| = {worst:.3g}"


@_prop("spectral")
def collatz_wielandt_sandwich(model, rng):
    worst = 0.0
    for _ in range(100):
        A = rng.random((model.n, model.n))
        np.fill_diagonal(A, rng.standard_normal(model.n))
        lam = spectral_abscissa(A)
        rows = A.sum(axis=1)
        lo, hi = collatz_wielandt_bounds(A)
        worst = max(worst, rows.min() - lam, lam - rows.max(), lo - lam, lam - hi)
    return worst <= 1e-10, f"max bound violation {worst:.3g}"


# -- integrator --------------------------------------------------------------


def _b(model, y):
    return y[..., model.n] + y[..., :model.n].sum(axis=-1) / model.y_plus


@_prop("integrator")
def mass_balance_bound(model, rng):
    x, s = _random_states(model, rng, 50)
    y0 = np.column_stack([x, s])
    settings = IntegratorSettings()
    sol = solve_batch(model, y0, settings)
    b0 = _b(model, y0)[:, None]
    bound = model.s_in + (b0 - model.s_in) * np.exp(-model.u * sol.times)[None, :] + 1e-6
    excess = float((_b(model, sol.y) - bound).max())
    return excess <= 0, f"max excess over bound {excess + 1e-6:.3g} (allowance 1e-6), 50 trajectories"


@_prop("integrator")
def delta_forward_invariance(model, rng):
    region = analysis.BasinRegion("delta", 1, 1e-12)
    y0 = analysis.sample_region(model, region, 50, seed=int(rng.integers(2**32)))
    sol = solve_batch(model, y0, IntegratorSettings())
    over = float((_b(model, sol.y) - model.s_in).max())
    under = float(-sol.y.min())
    worst = max(over, under)
    return worst <= 1e-8, f"max excursion outside Delta {worst:.3g}"


@_prop("integrator")
def positivity_from_boundary(model, rng):
    if model.epsilon <= 0:
        raise Skip("positivity needs eps > 0")
    if not check_hypotheses(model)["CS-pos"].passed:
        raise Skip("CS-pos does not hold")
    region = analysis.BasinRegion("delta", 1, 1e-12)
    y0 = analysis.sample_region(model, region, 20, seed=int(rng.integers(2**32)))
    for row in y0:
        k = int(rng.integers(1, model.n)) if model.n > 1 else 0
        row[rng.permutation(model.n)[:k]] = 0.0
    sol = solve_batch(model, y0, IntegratorSettings())
    late = sol.times >= 1.0
    low = float(sol.y[:, late, :model.n].min())
    return low > 0, f"min x_i(t) for t >= 1: {low:.3g}"


@_prop("integrator")
def tolerance_refinement(model, rng):
    coarse = IntegratorSettings(sample_count=2)
    fine = IntegratorSettings(rtol=coarse.rtol / 2, atol=coarse.atol / 2, sample_count=2)
    y0 = np.array([[analysis.FIG9_INITIAL[0]] * model.n + [analysis.FIG9_INITIAL[1]]])
    a = solve_batch(model, y0, coarse).final[0]
    b = solve_batch(model, y0, fine).final[0]
    tol = 10 * (coarse.atol + coarse.rtol * float(np.abs(a).max()))
    gap = float(np.abs(a - b).max())
    return gap < tol, f"final-state change {gap:.3g} vs 10x tolerance {tol:.3g}"


# -- equilibria --------------------------------------------------------------


@_prop("equilibria")
def equilibrium_residuals(model, rng):
    eqs = [washout_equilibrium(model)]
    if model.u > 0:
        table = break_even(model)
        eqs += [cep_equilibrium(model, i + 1) for i, e in enumerate(table.entries) if math.isfinite(e)]
    try:
        eqs.append(_coexistence(model))
    except Skip:
        pass
    bad = [e.label for e in eqs if e.residual > residual_bound(e.state)]
    worst = max(e.residual for e in eqs)
    return not bad, f"{len(eqs)} equilibria, max residual {worst:.3g}" + (f"; failing: {bad}" if bad else "")


@_prop("equilibria")
def break_even_inverts_kinetics(model, rng):
    worst = 0.0
    for u in np.linspace(0.01, float(model.mu(model.s_in).max()) * 1.1, 50):
        table = break_even(model, u)
        top = model.mu(model.s_in)
        for i, e in enumerate(table.entries):
            if math.isfinite(e) != (u < top[i]):
                return False, f"finiteness mismatch for species {i + 1} at u={u}"
            if math.isfinite(e):
                worst = max(worst, abs(model.kinetics[i].value(e) - u))
    return worst <= 1e-12, f"max |mu_i(entry) - u| = {worst:.3g}"


@_prop("equilibria")
def coexistence_is_interior(model, rng):
    eq = _coexistence(model)
    ok = bool(np.all(eq.state.x > 0) and 0 < eq.state.s < model.s_in)
    return ok, f"min x = {eq.state.x.min():.3g}, s = {eq.state.s:.6g}"


@_prop("equilibria")
def lambda_b_increasing(model, rng):
    scan_eps = [0, 0.5, 1, 5, 10, 50, 100]
    bad = []
    for u in (0.4, 1.5):
        scan = analysis.lambda_scan(model, u, scan_eps)
        bad += [(u, e) for e, ok in zip(scan_eps, scan.strictly_increasing()) if not ok]
    return not bad, "strictly increasing for all (u, eps)" if not bad else f"not increasing at {bad}"


@_prop("equilibria")
def coexistence_is_fixed_point(model, rng):
    eq = _coexistence(model)
    y0 = eq.state.as_vector()[None, :]
    sol = solve_batch(model, y0, IntegratorSettings(t_final=50.0, sample_count=2))
    moved = float(np.linalg.norm(sol.final[0] - y0[0]))
    return moved < 1e-6, f"drift over t = 50: {moved:.3g}"


@_prop("equilibria")
def normalization_independence(model, rng):
    eq = _coexistence(model)
    alt = coexistence_equilibrium(model, normalization="l1")
    gap = float(np.abs(eq.state.as_vector() - alt.state.as_vector()).max())
    return gap <= 1e-10, f"l1 vs l2 Perron scaling differ by {gap:.3g}"


@_prop("equilibria")
def coexistence_for_large_eps(model, rng):
    failures = []
    for eps in (0.5, 1, 5, 10, 50, 100):
        uc = u_crit(model, eps)
        u = model.u if 0 < model.u < uc else 0.9 * uc
        try:
            coexistence_equilibrium(model.with_params(u=u, epsilon=float(eps)))
        except Exception as exc:  # noqa: BLE001 - report every failure mode
            failures.append(f"eps={eps}: {exc}")
    return not failures, "solver succeeds for eps up to 100" if not failures else "; ".join(failures)


@_prop("equilibria")
def continuity_at_small_eps(model, rng):
    if model.u <= 0:
        raise Skip("u = 0")
    winner = break_even(model).winner
    if winner is None:
        raise Skip("no unique competitive-exclusion winner")
    cep = cep_equilibrium(model, winner)
    coex = coexistence_equilibrium(model.with_params(epsilon=1e-8))
    gap = float(np.abs(cep.state.as_vector() - coex.state.as_vector()).max())
    return gap <= 1e-4, f"|E(1e-8) - E_{winner}| = {gap:.3g}"


# -- stability ---------------------------------------------------------------


@_prop("stability")
def jacobian_matches_finite_differences(model, rng):
    x, s = _random_states(model, rng, 100)
    eps = 10.0 * rng.random(100)
    worst = max(fd_discrepancy(model.with_params(epsilon=float(e)), State(xi, float(si)))
                for xi, si, e in zip(x, s, eps))
    return worst <= 1e-5, f"max relative gap {worst:.3g} at 100 random states"


@_prop("stability")
def washout_margin(model, rng):
    worst = 0.0
    for eps in (0.0, 0.1, 1.0, 10.0):
        m = model.with_params(epsilon=eps)
        margin = spectral_abscissa(jacobian(m, m.washout))
        worst = max(worst, abs(margin - max(u_crit(m) - m.u, -m.u)))
    return worst <= 1e-9, f"max |margin - max(u_c - u, -u)| = {worst:.3g}"


@_prop("stability")
def cep_is_hurwitz(model, rng):
    if model.u <= 0:
        raise Skip("u = 0")
    winner = break_even(model).winner
    if winner is None:
        raise Skip("no unique competitive-exclusion winner")
    m = model.with_params(epsilon=0.0)
    report = classify(m, cep_equilibrium(m, winner))
    return report.margin < 0, f"margin at E_{winner} = {report.margin:.6g}"


@_prop("stability")
def coexistence_is_hurwitz(model, rng):
    report = classify(model, _coexistence(model))
    return report.hurwitz, f"margin = {report.margin:.6g}"


# -- analysis ----------------------------------------------------------------


@_prop("analysis")
def diagram_order_invariance(model, rng):
    settings = IntegratorSettings(t_final=50.0)
    res = analysis.operating_diagram(model, resolution=4, settings=settings)
    y0 = np.tile([analysis.FIG9_INITIAL[0]] * model.n + [analysis.FIG9_INITIAL[1]], (16, 1))
    eps = np.array([r[0] for r in res.rows])
    u = np.array([r[1] for r in res.rows])
    perm = rng.permutation(16)
    sol = solve_batch(model, y0, dataclasses.replace(settings, sample_count=2), u=u[perm], epsilon=eps[perm])
    dist = np.empty(16)
    dist[perm] = np.linalg.norm(sol.final - model.washout.as_vector(), axis=1)
    ok = bool(np.array_equal(dist, np.array([r[2] for r in res.rows])))
    return ok, "permuted evaluation reproduces every cell bit for bit" if ok else "cells differ under permutation"


@_prop("analysis", hard=False)
def washout_distance_monotone(model, rng):
    res = analysis.operating_diagram(model, resolution=(6, 20))
    return not res.warnings, "no violations" if not res.warnings else f"{len(res.warnings)} violations: {res.warnings[0]}"


@_prop("analysis")
def malkin_gorshin_gap(model, rng):
    winner = break_even(model).winner if model.u > 0 else None
    if winner is None:
        raise Skip("no unique competitive-exclusion winner")
    eps = [0.2, 0.1, 0.05, 0.025]
    g = analysis.gap_study(model, eps, count=20, seed=int(rng.integers(2**32)), species=winner)
    trend = all(b <= a * 1.05 for a, b in zip(g, g[1:]))
    return bool(trend and g[-1] < g[0]), "g = " + ", ".join(f"{x:.4g}" for x in g)


def run_properties(model: ChemostatModel, seed: int = 0, names=None, progress=None) -> list[Outcome]:
    out = []
    for prop in PROPERTIES:
        if names and prop.name not in names:
            continue
        rng = np.random.Generator(np.random.Philox(seed))
        t0 = time.perf_counter()
        try:
            ok, detail = prop.func(model, rng)
            status = "pass" if ok else ("fail" if prop.hard else "warn")
        except Skip as exc:
            status, detail = "skip", str(exc)
        except Exception as exc:  # noqa: BLE001 - a crash is a failure of that check
            status, detail = ("fail" if prop.hard else "warn"), f"{type(exc).__name__}: {exc}"
        outcome = Outcome(prop.name, prop.module, status, detail, time.perf_counter() - t0)
        if progress:
            progress(outcome)
        out.append(outcome)
    return out
