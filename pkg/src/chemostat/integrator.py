"""Adaptive Dormand-Prince 5(4) integration of the chemostat vector field.

The stepper advances a stack of independent trajectories at once. Every row
keeps its own time, step size and error history, and all arithmetic is
elementwise, so a row's result does not depend on which other rows share the
batch. Sweeps rely on that for worker-count-independent output.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, StiffnessError
from .model import ChemostatModel, State, rhs_batch

__all__ = [
    "IntegratorSettings",
    "Trajectory",
    "BatchSolution",
    "solve_batch",
    "integrate",
    "trajectory_gap",
    "write_trajectory_csv",
    "fmt",
]

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]
# fifth-order minus embedded fourth-order weights, 7th stage is f(y_new)
_E = [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
# Shampine's continuous extension, columns multiply theta^1..theta^4
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

# step-size controller (Hairer, Norsett & Wanner, DOPRI5)
_SAFE = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
MIN_STEP = 1e-14
EVENT_TIME_TOL = 1e-9
# Components that have decayed to ~0 jitter at the atol scale; anything past
# this many atol below the invariant box is treated as a defect.
UNDERSHOOT_FACTOR = 10.0


def fmt(x: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return format(float(x), ".17g")


@dataclasses.dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-8
    atol: float = 1e-10
    t_final: float = 200.0
    max_step: float | None = None
    sample_count: int = 400

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.t_final > 0):
            raise ConfigurationError("rtol, atol and t_final must be > 0")
        if self.sample_count < 2:
            raise ConfigurationError("sample_count must be >= 2")
        if self.max_step is not None and not self.max_step > 0:
            raise ConfigurationError("max_step must be > 0")

    @property
    def step_cap(self) -> float:
        return self.t_final / 10 if self.max_step is None else self.max_step

    @property
    def sample_times(self) -> np.ndarray:
        times = np.linspace(0.0, self.t_final, self.sample_count)
        times[-1] = self.t_final
        return times

    def to_dict(self) -> dict:
        return {
            "rtol": self.rtol,
            "atol": self.atol,
            "t_final": self.t_final,
            "max_step": self.step_cap,
            "sample_count": self.sample_count,
        }


@dataclasses.dataclass
class BatchSolution:
    times: np.ndarray       # (K,)
    y: np.ndarray           # (m, K, n+1)
    delta_entry: np.ndarray  # (m,), nan when the row never entered Delta
    steps: np.ndarray       # accepted steps per row
    rejected: np.ndarray
    lowest: np.ndarray      # smallest component seen at any step endpoint

    @property
    def final(self) -> np.ndarray:
        return self.y[:, -1, :]


def _rms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.mean(v * v, axis=1))


def _weighted(coeffs, stages):
    out = None
    for c, k in zip(coeffs, stages):
        if c == 0.0:
            continue
        out = c * k if out is None else out + c * k
    return out


def _dense(y_old, h, stages, theta):
    """Interpolant at fractions theta (r,) of steps h (r,) for rows y_old (r, d)."""
    powers = [theta, theta ** 2, theta ** 3, theta ** 4]
    acc = None
    for i, k in enumerate(stages):
        coef = _P[i, 0] * powers[0] + _P[i, 1] * powers[1] + _P[i, 2] * powers[2] + _P[i, 3] * powers[3]
        term = coef[:, None] * k
        acc = term if acc is None else acc + term
    return y_old + h[:, None] * acc


def _mass_gap(model: ChemostatModel, y: np.ndarray) -> np.ndarray:
    """b - s_in with b = s + sum(x) / Y_+, computed row by row."""
    n = model.n
    total = y[:, 0].copy()
    for j in range(1, n):
        total = total + y[:, j]
    return y[:, n] + total / model.y_plus - model.s_in


def _initial_step(f, y0, f0, settings, t_final):
    sc = settings.atol + settings.rtol * np.abs(y0)
    d0 = _rms(y0 / sc)
    d1 = _rms(f0 / sc)
    small = (d0 < 1e-5) | (d1 < 1e-5)
    h0 = np.where(small, 1e-6, 0.01 * d0 / np.where(small, 1.0, d1))
    h0 = np.minimum(h0, settings.step_cap)
    f1 = f(y0 + h0[:, None] * f0, np.arange(y0.shape[0]))
    d2 = _rms((f1 - f0) / sc) / h0
    dmax = np.maximum(d1, d2)
    flat = dmax <= 1e-15
    h1 = np.where(flat, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.where(flat, 1.0, dmax)) ** 0.2)
    return np.minimum.reduce([100 * h0, h1, np.full_like(h0, settings.step_cap), np.full_like(h0, t_final)])


def solve_batch(
    model: ChemostatModel,
    y0,
    settings: IntegratorSettings | None = None,
    u=None,
    epsilon=None,
    check_bounds: bool = True,
) -> BatchSolution:
    """Integrate rows of y0 (m, n+1) to settings.t_final.

    ``u`` and ``epsilon`` default to the model's values and may be per-row
    arrays. Samples are taken at ``settings.sample_times`` from the dense
    output; the last sample is the exact step endpoint at t_final.
    """
    settings = settings or IntegratorSettings()
    y0 = np.array(y0, dtype=float, ndmin=2)
    m, d = y0.shape
    n = model.n
    if d != n + 1:
        raise ConfigurationError(f"states have dimension {d}, model needs {n + 1}")
    u_rows = np.broadcast_to(np.asarray(model.u if u is None else u, dtype=float), (m,)).copy()
    eps_rows = np.broadcast_to(np.asarray(model.epsilon if epsilon is None else epsilon, dtype=float), (m,)).copy()
    t_final = float(settings.t_final)
    times = settings.sample_times
    K = times.size
    atol, rtol = settings.atol, settings.rtol
    cap = settings.step_cap

    def f(y, rows):
        out = rhs_batch(model, y, u_rows[rows], eps_rows[rows])
        if not np.all(np.isfinite(out)):
            bad = rows[np.flatnonzero(~np.all(np.isfinite(out), axis=1))[0]]
            raise NumericError(f"non-finite derivative in trajectory {bad}")
        return out

    out = np.empty((m, K, d))
    out[:, 0, :] = y0
    next_sample = np.ones(m, dtype=np.int64)
    delta_entry = np.where(_mass_gap(model, y0) <= 0, 0.0, np.nan)

    t = np.zeros(m)
    y = y0.copy()
    all_rows = np.arange(m)
    fy = f(y, all_rows)
    h = _initial_step(f, y, fy, settings, t_final)
    errold = np.full(m, 1e-4)
    last_rejected = np.zeros(m, dtype=bool)
    steps = np.zeros(m, dtype=np.int64)
    rejections = np.zeros(m, dtype=np.int64)
    active = np.ones(m, dtype=bool)
    lowest = y0.min(axis=1)

    while active.any():
        rows = np.flatnonzero(active)
        yy, tt, f1 = y[rows], t[rows], fy[rows]
        remaining = t_final - tt
        hh = np.minimum(h[rows], remaining)
        if np.any(hh < MIN_STEP):
            bad = rows[np.argmin(hh)]
            raise StiffnessError(f"step size {hh.min():.3g} below {MIN_STEP} at t={t[bad]:.6g} in trajectory {bad}")
        hc = hh[:, None]
        stages = [f1]
        for i in range(1, 6):
            incr = _weighted(_A[i], stages)
            stages.append(f(yy + hc * incr, rows))
        y_new = yy + hc * _weighted(_B, stages)
        f_new = f(y_new, rows)
        stages.append(f_new)
        err = hc * _weighted(_E, stages)
        sc = atol + rtol * np.maximum(np.abs(yy), np.abs(y_new))
        errn = _rms(err / sc)
        if not np.all(np.isfinite(errn)):
            raise NumericError("non-finite error estimate")
        ok = errn <= 1.0
        fac11 = errn ** _EXPO

        # rejected rows: shrink and retry
        rej = ~ok
        if rej.any():
            r_rows = rows[rej]
            h[r_rows] = hh[rej] / np.minimum(1 / _FAC_MIN, fac11[rej] / _SAFE)
            last_rejected[r_rows] = True
            rejections[r_rows] += 1

        if not ok.any():
            continue
        a_rows = rows[ok]
        ends = hh[ok] >= remaining[ok]
        t_new = np.where(ends, t_final, tt[ok] + hh[ok])
        ya = y_new[ok]
        lowest[a_rows] = np.minimum(lowest[a_rows], ya.min(axis=1))

        if check_bounds:
            slack = UNDERSHOOT_FACTOR * atol
            lo = min(ya[:, :n].min(), ya[:, n].min())
            if lo < -slack:
                k = int(np.argmin(np.minimum(ya[:, :n].min(axis=1), ya[:, n])))
                raise NumericError(
                    f"state left the invariant box beyond tolerance at t={t_new[k]:.6g} in trajectory {a_rows[k]}: "
                    f"{np.array2string(ya[k], precision=3)}"
                )

        # dense samples in (t_old, t_new]
        acc_stages = [st[ok] for st in stages]
        t_old = tt[ok]
        h_ok = hh[ok]
        while True:
            idx = next_sample[a_rows]
            has = idx < K
            due = np.zeros_like(has)
            due[has] = times[idx[has]] <= t_new[has]
            if not due.any():
                break
            sel = np.flatnonzero(due)
            tau = times[idx[sel]]
            exact = (tau >= t_new[sel])
            theta = np.clip((tau - t_old[sel]) / h_ok[sel], 0.0, 1.0)
            vals = _dense(yy[ok][sel], h_ok[sel], [st[sel] for st in acc_stages], theta)
            vals[exact] = ya[sel][exact]
            out[a_rows[sel], idx[sel], :] = vals
            next_sample[a_rows[sel]] += 1

        # first entry into Delta: b(t) - s_in changes sign within the step
        pending = np.isnan(delta_entry[a_rows])
        if pending.any():
            g_new = _mass_gap(model, ya)
            hit = np.flatnonzero(pending & (g_new <= 0))
            for j in hit:
                y_old_j = yy[ok][j:j + 1]
                st_j = [st[j:j + 1] for st in acc_stages]
                h_j = h_ok[j:j + 1]
                lo_th, hi_th = 0.0, 1.0
                while (hi_th - lo_th) * h_j[0] > EVENT_TIME_TOL:
                    mid = 0.5 * (lo_th + hi_th)
                    g_mid = _mass_gap(model, _dense(y_old_j, h_j, st_j, np.array([mid])))[0]
                    if g_mid <= 0:
                        hi_th = mid
                    else:
                        lo_th = mid
                delta_entry[a_rows[j]] = t_old[j] + hi_th * h_j[0]

        # step-size update for accepted rows (PI control)
        fac = fac11[ok] / errold[a_rows] ** _BETA
        fac = np.clip(fac / _SAFE, 1 / _FAC_MAX, 1 / _FAC_MIN)
        h_next = h_ok / fac
        h_next = np.where(last_rejected[a_rows], np.minimum(h_next, h_ok), h_next)
        h[a_rows] = np.minimum(h_next, cap)
        errold[a_rows] = np.maximum(errn[ok], 1e-4)
        last_rejected[a_rows] = False
        y[a_rows] = ya
        t[a_rows] = t_new
        fy[a_rows] = f_new[ok]
        steps[a_rows] += 1
        active[a_rows[ends]] = False

    return BatchSolution(times=times, y=out, delta_entry=delta_entry, steps=steps, rejected=rejections, lowest=lowest)


@dataclasses.dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (K, n+1), rows (x_1..x_n, s)
    delta_entry_time: float | None
    final_distance_to: dict

    @property
    def final(self) -> State:
        return State.from_vector(self.states[-1])

    def state(self, k: int) -> State:
        return State.from_vector(self.states[k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_trajectory_csv(self, buf)
        return buf.getvalue()


def write_trajectory_csv(traj: Trajectory, dest) -> None:
    """Header t,x1,...,xn,s; one row per sample, 17 significant digits."""
    n = traj.states.shape[1] - 1
    own = isinstance(dest, (str, Path))
    fh = open(dest, "w", newline="") if own else dest
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *(f"x{i + 1}" for i in range(n)), "s"])
        for t, row in zip(traj.times, traj.states):
            writer.writerow([fmt(t), *(fmt(v) for v in row)])
    finally:
        if own:
            fh.close()


def integrate(
    model: ChemostatModel,
    initial: State,
    settings: IntegratorSettings | None = None,
    targets: dict | None = None,
    epsilon: float | None = None,
) -> Trajectory:
    """Integrate one initial state.

    ``targets`` maps names to States; the final Euclidean distance to each is
    recorded, and the washout is always included.
    """
    initial.validate(model)
    settings = settings or IntegratorSettings()
    sol = solve_batch(model, initial.as_vector()[None, :], settings, epsilon=epsilon)
    states = sol.y[0]
    entry = sol.delta_entry[0]
    named = {"washout": model.washout}
    named.update(targets or {})
    final = states[-1]
    dist = {name: float(np.linalg.norm(final - st.as_vector())) for name, st in named.items()}
    return Trajectory(
        times=sol.times,
        states=states,
        delta_entry_time=None if math.isnan(entry) else float(entry),
        final_distance_to=dist,
    )


def trajectory_gap(
    model: ChemostatModel,
    initial_set,
    epsilon_values,
    settings: IntegratorSettings | None = None,
) -> np.ndarray:
    """g(eps) = max over initials of sup over sample times of |y_eps(t) - y_0(t)|."""
    settings = settings or IntegratorSettings()
    initial_set = list(initial_set)
    if not initial_set:
        raise ConfigurationError("initial_set must be nonempty")
    eps_list = [float(e) for e in epsilon_values]
    if any(e < 0 for e in eps_list):
        raise ConfigurationError("epsilon values must be >= 0")
    y0 = np.array([st.validate(model).as_vector() for st in initial_set])
    k = len(initial_set)
    all_eps = [0.0] + eps_list
    stacked = np.tile(y0, (len(all_eps), 1))
    eps_rows = np.repeat(all_eps, k)
    sol = solve_batch(model, stacked, settings, epsilon=eps_rows)
    base = sol.y[:k]
    gaps = []
    for i in range(1, len(all_eps)):
        pert = sol.y[i * k:(i + 1) * k]
        gaps.append(float(np.linalg.norm(pert - base, axis=2).max()))
    return np.array(gaps)
