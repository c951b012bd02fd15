"""Perturbed chemostat model: Monod kinetics, exchange matrices, vector field.

The exchange term is linear in the species vector, h(x, s, eps) = eps * T(s) x,
with every built-in T(s) written as

    T(s)[i, j] = C[i, j] + P[i, j] * mu_j(s)

so a constant matrix has P = 0 and the mutation circulant has C = 0.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from functools import cached_property, lru_cache
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np

from .errors import ConfigurationError
from .spectral import is_essentially_nonnegative, is_irreducible

__all__ = [
    "MonodKinetics",
    "NeumannLaplacian",
    "MutationCirculant",
    "ConstantMatrix",
    "ChemostatModel",
    "State",
    "eval_rhs",
    "eval_perturbation",
    "rhs_batch",
    "check_hypotheses",
    "a6_eps_bar",
    "HypothesisReport",
    "load_model",
    "model_from_dict",
    "bundled_models",
]

COLUMN_SUM_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class MonodKinetics:
    """mu(s) = a s / (b + s).

    Only finiteness is enforced here; sign conditions are hypothesis A1 and
    are reported by :func:`check_hypotheses` (the JSON loader rejects them).
    """

    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigurationError(f"non-finite Monod parameters a={self.a}, b={self.b}")
        if self.b == 0:
            raise ConfigurationError("Monod half-saturation b must be nonzero")

    def value(self, s):
        return self.a * s / (self.b + s)

    def derivative(self, s):
        return self.a * self.b / (self.b + s) ** 2

    def inverse(self, u: float) -> float:
        """Unrestricted inverse u*b/(a-u); callers restrict to [0, s_in]."""
        if u >= self.a:
            return math.inf
        return u * self.b / (self.a - u)

    def to_dict(self) -> dict:
        return {"type": "monod", "a": self.a, "b": self.b}


# -- exchange matrices -------------------------------------------------------


def _neumann_laplacian(n: int) -> np.ndarray:
    theta = np.zeros((n, n))
    for i in range(n - 1):
        theta[i, i + 1] = 1.0
        theta[i + 1, i] = 1.0
    theta -= np.diag(theta.sum(axis=0))
    return theta


def _circulant_pattern(n: int) -> np.ndarray:
    # Column j carries -2 mu_j on the diagonal and mu_j on its two cyclic
    # neighbours. n = 2 collapses both neighbours onto one entry.
    pattern = np.zeros((n, n))
    for j in range(n):
        pattern[j, j] -= 2.0
        pattern[(j - 1) % n, j] += 1.0
        pattern[(j + 1) % n, j] += 1.0
    return pattern


@dataclasses.dataclass(frozen=True)
class NeumannLaplacian:
    """Constant tridiagonal matrix with rows (.., 1, -2, 1, ..) and -1 corners."""

    kind = "neumann_laplacian"

    def split(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return _neumann_laplacian(n), np.zeros((n, n))

    def to_dict(self) -> dict:
        return {"type": self.kind}


@dataclasses.dataclass(frozen=True)
class MutationCirculant:
    """Substrate-dependent mutation matrix, column j scaled by mu_j(s)."""

    kind = "mutation_circulant"

    def split(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((n, n)), _circulant_pattern(n)

    def to_dict(self) -> dict:
        return {"type": self.kind}


@dataclasses.dataclass(frozen=True, eq=False)
class ConstantMatrix:
    matrix: tuple

    kind = "constant_matrix"

    def __post_init__(self):
        try:
            arr = np.array(self.matrix, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"constant_matrix is not numeric: {exc}") from None
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ConfigurationError(f"constant_matrix must be square, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError("constant_matrix has non-finite entries")
        if not is_essentially_nonnegative(arr):
            raise ConfigurationError("constant_matrix has a negative off-diagonal entry (A5)")
        scale = max(1.0, float(np.abs(arr).max()))
        col = np.abs(arr.sum(axis=0)).max()
        if col > COLUMN_SUM_TOL * scale:
            raise ConfigurationError(f"constant_matrix columns must sum to 0 (A5), max |sum| = {col:.3g}")
        if arr.shape[0] > 1 and not is_irreducible(arr):
            raise ConfigurationError("constant_matrix is reducible (A5)")
        object.__setattr__(self, "matrix", tuple(tuple(float(v) for v in row) for row in arr))

    def __eq__(self, other):
        return isinstance(other, ConstantMatrix) and self.matrix == other.matrix

    def __hash__(self):
        return hash(self.matrix)

    def split(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.matrix, dtype=float), np.zeros((n, n))

    def to_dict(self) -> dict:
        return {"type": self.kind, "matrix": [list(r) for r in self.matrix]}


Perturbation = Union[NeumannLaplacian, MutationCirculant, ConstantMatrix]


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True)
class ChemostatModel:
    n: int
    s_in: float
    u: float
    epsilon: float
    yields: tuple
    kinetics: tuple
    perturbation: Perturbation

    def __post_init__(self):
        object.__setattr__(self, "yields", tuple(float(y) for y in self.yields))
        object.__setattr__(self, "kinetics", tuple(self.kinetics))
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {self.n!r}")
        for name in ("s_in", "u", "epsilon"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.s_in <= 0:
            raise ConfigurationError("s_in must be > 0")
        if self.u < 0:
            raise ConfigurationError("u must be >= 0")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if len(self.yields) != self.n or len(self.kinetics) != self.n:
            raise ConfigurationError(
                f"expected {self.n} yields and kinetics, got {len(self.yields)} and {len(self.kinetics)}"
            )
        if not all(y > 0 and math.isfinite(y) for y in self.yields):
            raise ConfigurationError("yields must be positive and finite")
        if not all(isinstance(k, MonodKinetics) for k in self.kinetics):
            raise ConfigurationError("kinetics must be MonodKinetics instances")
        if isinstance(self.perturbation, ConstantMatrix) and len(self.perturbation.matrix) != self.n:
            raise ConfigurationError(
                f"constant_matrix is {len(self.perturbation.matrix)}x{len(self.perturbation.matrix)}, expected n={self.n}"
            )

    # cached numeric views (cached_property writes to __dict__, so frozen is fine)

    @cached_property
    def a(self) -> np.ndarray:
        return _frozen(np.array([k.a for k in self.kinetics]))

    @cached_property
    def b(self) -> np.ndarray:
        return _frozen(np.array([k.b for k in self.kinetics]))

    @cached_property
    def Y(self) -> np.ndarray:
        return _frozen(np.array(self.yields))

    @property
    def y_plus(self) -> float:
        return max(self.yields)

    @cached_property
    def _split(self) -> tuple[np.ndarray, np.ndarray]:
        C, P = self.perturbation.split(self.n)
        return _frozen(C), _frozen(P)

    @property
    def dim(self) -> int:
        return self.n + 1

    def mu(self, s) -> np.ndarray:
        return self.a * s / (self.b + s)

    def dmu(self, s) -> np.ndarray:
        return self.a * self.b / (self.b + s) ** 2

    def D(self, s) -> np.ndarray:
        return np.diag(self.mu(s))

    def T(self, s) -> np.ndarray:
        C, P = self._split
        return C + P * self.mu(s)[None, :]

    def dT(self, s) -> np.ndarray:
        _, P = self._split
        return P * self.dmu(s)[None, :]

    def with_params(self, **changes) -> "ChemostatModel":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "n": int(self.n),
            "s_in": self.s_in,
            "u": self.u,
            "epsilon": self.epsilon,
            "yields": list(self.yields),
            "kinetics": [k.to_dict() for k in self.kinetics],
            "perturbation": self.perturbation.to_dict(),
        }

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    @property
    def washout(self) -> "State":
        return State(np.zeros(self.n), self.s_in)


@dataclasses.dataclass(frozen=True, eq=False)
class State:
    x: np.ndarray
    s: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "s", float(self.s))

    def as_vector(self) -> np.ndarray:
        return np.append(self.x, self.s)

    @classmethod
    def from_vector(cls, y) -> "State":
        y = np.asarray(y, dtype=float)
        return cls(y[:-1].copy(), float(y[-1]))

    def mass(self, model: ChemostatModel) -> float:
        """b = s + sum(x) / Y_+, the quantity bounded by s_in on Delta."""
        return self.s + float(self.x.sum()) / model.y_plus

    def validate(self, model: ChemostatModel) -> "State":
        if self.x.shape != (model.n,):
            raise ConfigurationError(f"state has {self.x.size} species, model has {model.n}")
        if not (np.all(np.isfinite(self.x)) and math.isfinite(self.s)):
            raise ConfigurationError("state has non-finite entries")
        if np.any(self.x < 0):
            raise ConfigurationError("species concentrations must be >= 0")
        if not 0 <= self.s <= model.s_in:
            raise ConfigurationError(f"substrate must lie in [0, {model.s_in}], got {self.s}")
        return self


# -- vector field ------------------------------------------------------------


def _apply_columns(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows of X times M^T, accumulated column by column.

    Elementwise accumulation keeps each row's result independent of the batch
    size (BLAS kernels are not), which the sweep determinism contract needs.
    """
    out = X[:, 0:1] * M[:, 0]
    for j in range(1, M.shape[1]):
        out = out + X[:, j:j + 1] * M[:, j]
    return out


def rhs_batch(model: ChemostatModel, y: np.ndarray, u, epsilon) -> np.ndarray:
    """Vector field for a stack of states y of shape (m, n+1).

    ``u`` and ``epsilon`` are scalars or per-row arrays of shape (m,).
    """
    n = model.n
    m = y.shape[0]
    u = np.broadcast_to(np.asarray(u, dtype=float), (m,))
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (m,))
    x = y[:, :n]
    s = y[:, n:n + 1]
    mu = model.a * s / (model.b + s)
    C, P = model._split
    growth = mu * x
    exchange = np.zeros_like(x)
    if np.any(C):
        exchange = exchange + _apply_columns(C, x)
    if np.any(P):
        exchange = exchange + _apply_columns(P, growth)
    out = np.empty_like(y)
    out[:, :n] = growth - u[:, None] * x + eps[:, None] * exchange
    uptake = growth[:, 0] / model.Y[0]
    for j in range(1, n):
        uptake = uptake + growth[:, j] / model.Y[j]
    out[:, n] = -uptake + u * (model.s_in - y[:, n])
    return out


def eval_perturbation(model: ChemostatModel, x, s: float, epsilon: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ConfigurationError(f"x has shape {x.shape}, expected ({model.n},)")
    return epsilon * (model.T(s) @ x)


def eval_rhs(model: ChemostatModel, state: State, epsilon_override: float | None = None) -> np.ndarray:
    if state.x.shape != (model.n,):
        raise ConfigurationError(f"state has {state.x.size} species, model has {model.n}")
    eps = model.epsilon if epsilon_override is None else epsilon_override
    return rhs_batch(model, state.as_vector()[None, :], model.u, eps)[0]


# -- JSON ingestion ----------------------------------------------------------

_PERTURBATIONS = {"neumann_laplacian": NeumannLaplacian, "mutation_circulant": MutationCirculant}


def _number(doc: dict, key: str) -> float:
    if key not in doc:
        raise ConfigurationError(f"model is missing field {key!r}")
    val = doc[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigurationError(f"field {key!r} must be a number")
    return float(val)


def model_from_dict(doc: dict) -> ChemostatModel:
    if not isinstance(doc, dict):
        raise ConfigurationError("model document must be a JSON object")
    unknown = set(doc) - {"n", "s_in", "u", "epsilon", "yields", "kinetics", "perturbation"}
    if unknown:
        raise ConfigurationError(f"unknown model fields: {sorted(unknown)}")
    n = doc.get("n")
    if isinstance(n, bool) or not isinstance(n, int):
        raise ConfigurationError("field 'n' must be an integer")
    kin = doc.get("kinetics")
    if not isinstance(kin, list):
        raise ConfigurationError("field 'kinetics' must be a list")
    kinetics = []
    for i, k in enumerate(kin):
        if not isinstance(k, dict) or k.get("type") != "monod":
            raise ConfigurationError(f"kinetics[{i}] must be {{'type': 'monod', 'a': .., 'b': ..}}")
        a, b = _number(k, "a"), _number(k, "b")
        if a <= 0 or b <= 0:
            raise ConfigurationError(f"kinetics[{i}] needs a > 0 and b > 0")
        kinetics.append(MonodKinetics(a, b))
    yields = doc.get("yields")
    if not isinstance(yields, list) or not all(
        isinstance(y, (int, float)) and not isinstance(y, bool) for y in yields
    ):
        raise ConfigurationError("field 'yields' must be a list of numbers")
    pert = doc.get("perturbation")
    if not isinstance(pert, dict) or "type" not in pert:
        raise ConfigurationError("field 'perturbation' must be an object with a 'type'")
    if pert["type"] in _PERTURBATIONS:
        perturbation = _PERTURBATIONS[pert["type"]]()
    elif pert["type"] == "constant_matrix":
        if "matrix" not in pert:
            raise ConfigurationError("constant_matrix perturbation needs 'matrix'")
        perturbation = ConstantMatrix(pert["matrix"])
    else:
        raise ConfigurationError(f"unknown perturbation type {pert['type']!r}")
    return ChemostatModel(
        n=n,
        s_in=_number(doc, "s_in"),
        u=_number(doc, "u"),
        epsilon=_number(doc, "epsilon"),
        yields=tuple(float(y) for y in yields),
        kinetics=tuple(kinetics),
        perturbation=perturbation,
    )


def bundled_models() -> list[str]:
    return sorted(p.name for p in resources.files("chemostat.data").iterdir() if p.name.endswith(".json"))


def load_model(source: str | Path) -> ChemostatModel:
    """Load a model from a JSON file path, or by the name of a bundled file."""
    path = Path(source)
    try:
        if path.exists():
            text = path.read_text()
        elif path.name in bundled_models() and path.parent == Path("."):
            text = resources.files("chemostat.data").joinpath(path.name).read_text()
        else:
            raise ConfigurationError(f"cannot read model file {str(source)!r}")
        doc = json.loads(text)
    except OSError as exc:
        raise ConfigurationError(f"cannot read model file {str(source)!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"model file {str(source)!r} is not valid JSON: {exc.msg}") from None
    return model_from_dict(doc)


# -- hypothesis checker ------------------------------------------------------


@dataclasses.dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: float | None = None


@dataclasses.dataclass
class HypothesisReport:
    checks: list
    eps_bar: float
    linear_growth_per_eps: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def _a6_holds(model: ChemostatModel, grid: np.ndarray, eps: float) -> bool:
    diag = np.array([model.mu(s) + eps * np.diag(model.T(s)) for s in grid])
    return bool(np.all(np.diff(diag, axis=0) > 0))


@lru_cache(maxsize=64)
def _eps_bar(n, s_in, kinetics, perturbation, resolution) -> float:
    model = ChemostatModel(n=n, s_in=s_in, u=0.0, epsilon=0.0, yields=(1.0,) * n,
                           kinetics=kinetics, perturbation=perturbation)
    grid = np.linspace(0.0, s_in, resolution)
    eps_grid = [2.0 ** k * 1e-3 for k in range(21)]
    holds = [_a6_holds(model, grid, e) for e in eps_grid]
    if all(holds):
        return math.inf
    if not holds[0]:
        return 0.0
    k = holds.index(False)
    lo, hi = eps_grid[k - 1], eps_grid[k]
    while hi - lo > 1e-9 * hi:
        mid = 0.5 * (lo + hi)
        if _a6_holds(model, grid, mid):
            lo = mid
        else:
            hi = mid
    return lo


def a6_eps_bar(model: ChemostatModel, grid_resolution: int = 101) -> float:
    """Largest eps for which every diagonal entry of D(s) + eps T(s) is
    increasing on the s-grid: scanned over 1e-3 * 2^k, k = 0..20, then refined
    by bisection between the last passing and first failing value. inf when
    the whole scan passes."""
    return _eps_bar(model.n, model.s_in, model.kinetics, model.perturbation, grid_resolution)


def check_hypotheses(model: ChemostatModel, grid_resolution: int = 101) -> HypothesisReport:
    """Sample s on [0, s_in] and report A1-A6 and CS-pos.

    Failures are report entries carrying the witnessing s, never exceptions.
    """
    if grid_resolution < 2:
        raise ConfigurationError("grid_resolution must be >= 2")
    n = model.n
    grid = np.linspace(0.0, model.s_in, grid_resolution)
    interior = grid[1:]
    checks = []

    def first(mask_iter, values):
        for ok, s in zip(mask_iter, values):
            if not ok:
                return s
        return None

    # A1: mu(0) = 0, non-decreasing, bounded (Monod: sup = a, finite)
    mus = np.array([model.mu(s) for s in grid])
    bad = None
    if np.any(np.abs(mus[0]) > 0):
        bad = 0.0
    diffs = np.diff(mus, axis=0)
    if bad is None:
        bad = first((np.all(d >= 0) for d in diffs), grid[1:])
    bounded = all(k.b > 0 for k in model.kinetics)
    checks.append(Check("A1", bad is None and bounded,
                        "kinetics vanish at 0, non-decreasing and bounded" if bad is None and bounded
                        else "kinetics not non-decreasing / bounded", bad))

    Ts = [model.T(s) for s in grid]
    norms = [np.linalg.norm(T, 2) for T in Ts]
    checks.append(Check("A2", True, "h(x, s, 0) = 0 and |h| <= eps * sup|T(s)| * |x|"))

    offdiag = first((is_essentially_nonnegative(T) for T in Ts[1:]), interior)
    checks.append(Check("A3", offdiag is None, "x_i = 0 implies h_i >= 0", offdiag))

    colsum = first(
        (np.abs(T.sum(axis=0)).max() <= COLUMN_SUM_TOL * max(1.0, np.abs(T).max()) for T in Ts), grid
    )
    checks.append(Check("A4", colsum is None, "columns of T(s) sum to zero", colsum))

    irreducible = first((is_irreducible(T) for T in Ts[1:]), interior)
    a5_ok = offdiag is None and colsum is None and irreducible is None
    checks.append(Check("A5", a5_ok, "T(s) essentially non-negative, irreducible, zero column sums on (0, s_in]",
                        offdiag if offdiag is not None else (colsum if colsum is not None else irreducible)))

    # A6: off-diagonals non-decreasing in s, diagonal of D + eps T increasing
    off_mask = ~np.eye(n, dtype=bool)
    mono = first((np.all(T2[off_mask] >= T1[off_mask]) for T1, T2 in zip(Ts[:-1], Ts[1:])), grid[1:])
    eps_bar = a6_eps_bar(model, grid_resolution)
    a6_ok = mono is None and eps_bar > 0
    checks.append(Check("A6", a6_ok, f"off-diagonals non-decreasing; eps_bar = {eps_bar:.6g}", mono))

    # CS-pos: x_i = h_i = 0 forces the chain neighbours to vanish, i.e. the
    # neighbour entries t_{i,i-1}, t_{i,i+1} are strictly positive.
    cs_bad = None
    for s, T in zip(interior, Ts[1:]):
        thr = 1e-13 * max(1.0, np.abs(T).max())
        for i in range(n):
            nbrs = [j for j in (i - 1, i + 1) if 0 <= j < n]
            if any(T[i, j] <= thr for j in nbrs):
                cs_bad = float(s)
                break
        if cs_bad is not None:
            break
    checks.append(Check("CS-pos", cs_bad is None, "chain neighbours feed every empty species on (0, s_in]", cs_bad))

    return HypothesisReport(checks=checks, eps_bar=eps_bar, linear_growth_per_eps=float(max(norms)))
