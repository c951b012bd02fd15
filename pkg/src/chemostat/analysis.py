"""Parameter sweeps and batch experiments over the (eps, u) plane."""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .equilibria import (
    Equilibrium,
    assemble_B,
    break_even,
    cep_equilibrium,
    coexistence_equilibrium,
    residual_bound,
    u_crit,
)
from .errors import ChemostatError, ConfigurationError, DomainError, NoCoexistenceError
from .integrator import IntegratorSettings, fmt, solve_batch, trajectory_gap
from .model import ChemostatModel, State
from .spectral import spectral_abscissa
from .stability import classify

__all__ = [
    "FIG9_INITIAL",
    "BOUNDARY_BAND",
    "SweepResult",
    "BasinRegion",
    "BasinStudy",
    "LambdaScan",
    "grid",
    "ucrit_curve",
    "operating_diagram",
    "stability_map",
    "lambda_scan",
    "sample_region",
    "basin_study",
    "basin_from_initials",
    "gap_study",
    "default_jobs",
    "write_sweep_csv",
    "write_ucrit_csv",
    "write_lambda_scan_csv",
    "gnuplot_script",
]

# fixed initial condition of the operating diagram: all species 0.15, s = 0.25
FIG9_INITIAL = (0.15, 0.25)
# cells this close to u_c(eps) are left unclassified
BOUNDARY_BAND = 0.02
MAX_REJECTIONS = 100_000


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("CHEMOSTAT_JOBS", "1")))
    except ValueError:
        raise ConfigurationError("CHEMOSTAT_JOBS must be an integer") from None


def grid(lo: float, hi: float, resolution: int) -> np.ndarray:
    if resolution < 1:
        raise ConfigurationError("resolution must be >= 1")
    if resolution == 1:
        return np.array([float(lo)])
    return np.linspace(float(lo), float(hi), int(resolution))


def _check_range(name, rng):
    lo, hi = rng
    if lo < 0 or hi < lo:
        raise ConfigurationError(f"{name} range must satisfy 0 <= lo <= hi, got {rng}")


@dataclasses.dataclass
class SweepResult:
    kind: str
    columns: tuple
    rows: list
    eps_range: tuple
    u_range: tuple
    resolution: tuple
    fingerprint: str
    seed: int = 0
    ucrit: list = dataclasses.field(default_factory=list)
    warnings: list = dataclasses.field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows])

    def meta(self) -> dict:
        return {
            "kind": self.kind,
            "eps_range": list(self.eps_range),
            "u_range": list(self.u_range),
            "resolution": list(self.resolution),
            "fingerprint": self.fingerprint,
            "seed": self.seed,
        }


def ucrit_curve(model: ChemostatModel, eps_values) -> list:
    return [(float(e), u_crit(model, e)) for e in eps_values]


def _regime(u: float, uc: float) -> str:
    if u >= uc + BOUNDARY_BAND:
        return "washout"
    if u <= uc - BOUNDARY_BAND:
        return "persistence"
    return "boundary"


def _solve_chunk(args):
    model, y0, settings, u, eps = args
    return solve_batch(model, y0, settings, u=u, epsilon=eps).final


def _chunks(m: int, jobs: int):
    size = max(1, math.ceil(m / jobs))
    return [(i, min(m, i + size)) for i in range(0, m, size)]


def _resolution(resolution) -> tuple[int, int]:
    if isinstance(resolution, (tuple, list)):
        return int(resolution[0]), int(resolution[1])
    return int(resolution), int(resolution)


def operating_diagram(
    model: ChemostatModel,
    eps_range=(0.0, 10.0),
    u_range=(0.0, 0.8),
    resolution=100,
    fixed_initial: State | None = None,
    settings: IntegratorSettings | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Distance to the washout at t_final from one initial state, per (eps, u) cell.

    Rows are (epsilon, u, distance, regime) with regime "washout" above
    u_c + 0.02, "persistence" below u_c - 0.02 and "boundary" in between.
    """
    _check_range("eps", eps_range)
    _check_range("u", u_range)
    ne, nu = _resolution(resolution)
    settings = settings or IntegratorSettings()
    settings = dataclasses.replace(settings, sample_count=2)
    if fixed_initial is None:
        fixed_initial = State([FIG9_INITIAL[0]] * model.n, FIG9_INITIAL[1])
    fixed_initial.validate(model)
    eps_g, u_g = grid(*eps_range, ne), grid(*u_range, nu)
    E, U = np.meshgrid(eps_g, u_g, indexing="ij")
    eps_rows, u_rows = E.ravel(), U.ravel()
    y0 = np.tile(fixed_initial.as_vector(), (eps_rows.size, 1))

    spans = _chunks(eps_rows.size, max(1, jobs))
    tasks = [(model, y0[a:b], settings, u_rows[a:b], eps_rows[a:b]) for a, b in spans]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            finals = list(pool.map(_solve_chunk, tasks))
    else:
        finals = [_solve_chunk(t) for t in tasks]
    final = np.concatenate(finals)
    dist = np.linalg.norm(final - model.washout.as_vector(), axis=1)

    curve = ucrit_curve(model, eps_g)
    uc_of = dict(curve)
    rows = [
        (float(e), float(u), float(d), _regime(float(u), uc_of[float(e)]))
        for e, u, d in zip(eps_rows, u_rows, dist)
    ]
    result = SweepResult(
        kind="operating_diagram",
        columns=("epsilon", "u", "distance", "status"),
        rows=rows,
        eps_range=tuple(eps_range),
        u_range=tuple(u_range),
        resolution=(ne, nu),
        fingerprint=model.fingerprint(),
        ucrit=curve,
    )
    result.warnings = _washout_monotone_warnings(result, nu, floor=100 * settings.atol)
    return result


def _washout_monotone_warnings(result: SweepResult, nu: int, floor: float = 0.0) -> list:
    """Heuristic: above the boundary band, distance should not grow with u
    (5% slack). Distances below ``floor`` are solver noise and skipped.
    Violations are warnings, not failures."""
    out = []
    rows = result.rows
    for start in range(0, len(rows), nu):
        col = [r for r in rows[start:start + nu] if r[3] == "washout"]
        for prev, cur in zip(col, col[1:]):
            if cur[2] > floor and cur[2] > prev[2] * 1.05:
                out.append(f"distance grows with u at eps={fmt(cur[0])}: u={fmt(prev[1])}->{fmt(cur[1])}")
    return out


def _stability_cell(args):
    model, eps, u = args
    if not u > 0:
        return (eps, u, math.nan, "degenerate")
    cell = model.with_params(u=u, epsilon=eps)
    try:
        if eps == 0.0:
            if u >= u_crit(cell, 0.0):
                return (eps, u, math.nan, "no-coexistence")
            winner = break_even(cell).winner
            if winner is None:
                return (eps, u, math.nan, "no-unique-winner")
            eq = cep_equilibrium(cell, winner)
        else:
            eq = coexistence_equilibrium(cell)
        report = classify(cell, eq)
    except NoCoexistenceError:
        return (eps, u, math.nan, "no-coexistence")
    except ChemostatError as exc:
        return (eps, u, math.nan, f"solver-error: {type(exc).__name__}")
    return (eps, u, report.margin, report.status)


def stability_map(
    model: ChemostatModel,
    eps_range=(0.0, 5.0),
    u_range=(0.0, 0.7),
    resolution=50,
    jobs: int = 1,
) -> SweepResult:
    """Spectral abscissa of the Jacobian at the persisting equilibrium per cell.

    eps = 0 cells use the competitive-exclusion winner; cells with
    u >= u_c(eps) are "no-coexistence". Status "unstable" marks a cell whose
    Jacobian is not Hurwitz. Failures never abort the sweep.
    """
    _check_range("eps", eps_range)
    _check_range("u", u_range)
    ne, nu = _resolution(resolution)
    eps_g, u_g = grid(*eps_range, ne), grid(*u_range, nu)
    tasks = [(model, float(e), float(u)) for e in eps_g for u in u_g]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_stability_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        rows = [_stability_cell(t) for t in tasks]
    return SweepResult(
        kind="stability_map",
        columns=("epsilon", "u", "lambda_J", "status"),
        rows=rows,
        eps_range=tuple(eps_range),
        u_range=tuple(u_range),
        resolution=(ne, nu),
        fingerprint=model.fingerprint(),
        ucrit=ucrit_curve(model, eps_g),
    )


@dataclasses.dataclass
class LambdaScan:
    u: float
    s: np.ndarray
    eps: np.ndarray
    values: np.ndarray   # (len(s), len(eps))

    def strictly_increasing(self) -> np.ndarray:
        return np.all(np.diff(self.values, axis=0) > 0, axis=0)


def lambda_scan(model: ChemostatModel, u: float, eps_values, s_resolution: int = 100) -> LambdaScan:
    """lambda(B(s, u, eps)) on a uniform s-grid of [0, s_in], one column per eps."""
    s = grid(0.0, model.s_in, s_resolution)
    eps = np.asarray(list(eps_values), dtype=float)
    vals = np.array([[spectral_abscissa(assemble_B(model, si, u, e)) for e in eps] for si in s])
    return LambdaScan(u=float(u), s=s, eps=eps, values=vals)


# -- basin experiments -------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class BasinRegion:
    kind: str                 # "full" | "delta" | "delta-minus"
    species: int | None = None
    alpha: float | None = None

    @classmethod
    def parse(cls, text: str) -> "BasinRegion":
        parts = text.split(":")
        if parts == ["full"]:
            return cls("full")
        if len(parts) == 3 and parts[0] in ("delta", "delta-minus"):
            try:
                return cls(parts[0], int(parts[1]), float(parts[2]))
            except ValueError:
                pass
        raise ConfigurationError(f"region must be full, delta:i:alpha or delta-minus:i:alpha, got {text!r}")

    def __str__(self):
        return "full" if self.kind == "full" else f"{self.kind}:{self.species}:{self.alpha:g}"

    def contains(self, model: ChemostatModel, y: np.ndarray) -> np.ndarray:
        x, s = y[:, :model.n], y[:, model.n]
        if self.kind == "full":
            return np.all((x > 0) & (x <= 10), axis=1) & (s >= 0) & (s <= model.s_in)
        in_delta = np.all(x >= 0, axis=1) & (s >= 0) & (s + x.sum(axis=1) / model.y_plus <= model.s_in)
        xi_ = x[:, self.species - 1]
        return in_delta & (xi_ >= self.alpha if self.kind == "delta" else xi_ < self.alpha)


def sample_region(model: ChemostatModel, region: BasinRegion, count: int, seed: int = 0) -> np.ndarray:
    """Draw ``count`` initial states (rows x_1..x_n, s) uniformly in the region.

    Delta is the simplex {s + sum(x)/Y_+ <= s_in}: uniform points come from a
    flat Dirichlet over n+2 parts (the last is slack), then the x_i >= alpha
    (or < alpha) constraint is enforced by rejection.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    n = model.n
    rng = np.random.Generator(np.random.Philox(seed))
    if region.kind == "full":
        x = 10.0 * (1.0 - rng.random((count, n)))
        s = model.s_in * rng.random(count)
        return np.column_stack([x, s])
    if region.species is None or not 1 <= region.species <= n or region.alpha is None or region.alpha <= 0:
        raise ConfigurationError(f"invalid region {region}")
    kept = []
    drawn = 0
    while sum(len(k) for k in kept) < count:
        if drawn >= MAX_REJECTIONS:
            raise ConfigurationError(f"region {region} is empty after {MAX_REJECTIONS} draws")
        batch = min(4 * count, MAX_REJECTIONS - drawn)
        z = rng.dirichlet(np.ones(n + 2), size=batch)[:, :n + 1] * model.s_in
        y = np.column_stack([z[:, :n] * model.y_plus, z[:, n]])
        drawn += batch
        kept.append(y[region.contains(model, y)])
    out = np.concatenate(kept)[:count]
    assert np.all(region.contains(model, out))
    return out


@dataclasses.dataclass
class BasinStudy:
    region: str
    count: int
    seed: int
    initials: np.ndarray
    final_distances: np.ndarray
    target: Equilibrium

    @property
    def max_distance(self) -> float:
        return float(self.final_distances.max())


def basin_from_initials(model, initials, target: Equilibrium, settings=None, region="explicit", seed=0) -> BasinStudy:
    settings = dataclasses.replace(settings or IntegratorSettings(), sample_count=2)
    if target.residual > residual_bound(target.state):
        raise DomainError(f"target residual {target.residual:.3g} is not an equilibrium residual")
    initials = np.array(initials, dtype=float, ndmin=2)
    final = solve_batch(model, initials, settings).final
    dist = np.linalg.norm(final - target.state.as_vector(), axis=1)
    return BasinStudy(region=str(region), count=len(initials), seed=seed, initials=initials,
                      final_distances=dist, target=target)


def basin_study(model, region: BasinRegion, count: int, target: Equilibrium, seed: int = 0,
                settings: IntegratorSettings | None = None) -> BasinStudy:
    initials = sample_region(model, region, count, seed)
    return basin_from_initials(model, initials, target, settings, region=region, seed=seed)


def gap_study(model, eps_values, count: int = 20, seed: int = 0, alpha: float = 0.05,
              species: int | None = None, settings: IntegratorSettings | None = None) -> np.ndarray:
    """Empirical Malkin-Gorshin gaps g(eps) over random initials in Delta_{i*, alpha}."""
    if species is None:
        species = break_even(model).winner
        if species is None:
            raise DomainError("no unique competitive-exclusion winner to anchor the gap study")
    initials = sample_region(model, BasinRegion("delta", species, alpha), count, seed)
    return trajectory_gap(model, [State.from_vector(y) for y in initials], eps_values, settings)


# -- output ------------------------------------------------------------------


def _cell(v) -> str:
    return fmt(v) if isinstance(v, (float, np.floating, int)) and not isinstance(v, bool) else str(v)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(result.columns)
        for row in result.rows:
            w.writerow([_cell(v) for v in row])


def write_ucrit_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "u_c"])
        for e, uc in curve:
            w.writerow([fmt(e), fmt(uc)])


def write_lambda_scan_csv(scan: LambdaScan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", *(f"eps={fmt(e)}" for e in scan.eps)])
        for s, row in zip(scan.s, scan.values):
            w.writerow([fmt(s), *(fmt(v) for v in row)])


def gnuplot_script(outputs: dict) -> str:
    """Plotting script for whichever CSVs are present in ``outputs``
    (keys: operating_diagram, ucrit_curve, stability_map, lambda_scan)."""
    lines = ["set datafile separator ','", "set key off", "set terminal pngcairo size 900,700", ""]
    if "operating_diagram" in outputs:
        lines += [
            "set output 'operating_diagram.png'",
            "set xlabel 'epsilon'; set ylabel 'u'; set cblabel 'distance to washout'",
            f"plot '{outputs['operating_diagram']}' every ::1 using 1:2:3 with image"
            + (f", '{outputs['ucrit_curve']}' every ::1 using 1:2 with lines lw 2 lc rgb 'red'"
               if "ucrit_curve" in outputs else ""),
            "",
        ]
    elif "ucrit_curve" in outputs:
        lines += [
            "set output 'ucrit_curve.png'",
            "set xlabel 'epsilon'; set ylabel 'u_c'",
            f"plot '{outputs['ucrit_curve']}' every ::1 using 1:2 with lines lw 2",
            "",
        ]
    if "stability_map" in outputs:
        lines += [
            "set output 'stability_map.png'",
            "set xlabel 'epsilon'; set ylabel 'u'; set cblabel 'lambda(J)'",
            f"plot '{outputs['stability_map']}' every ::1 using 1:2:3 with image",
            "",
        ]
    if "lambda_scan" in outputs:
        lines += [
            "set output 'lambda_scan.png'",
            "set xlabel 's'; set ylabel 'lambda(B)'",
            f"plot for [k=2:*] '{outputs['lambda_scan']}' every ::1 using 1:k with lines",
            "",
        ]
    return "\n".join(lines)
