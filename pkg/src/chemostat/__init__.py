"""Perturbed chemostat: simulation, coexistence equilibria and operating diagrams."""

from .errors import (
    ChemostatError,
    ConfigurationError,
    DegeneracyError,
    DomainError,
    InternalConsistencyError,
    NoCoexistenceError,
    NumericError,
    StiffnessError,
)
from .model import (
    ChemostatModel,
    ConstantMatrix,
    MonodKinetics,
    MutationCirculant,
    NeumannLaplacian,
    State,
    check_hypotheses,
    eval_perturbation,
    eval_rhs,
    load_model,
)
from .spectral import PerronPair, mu_hat, perron_pair, spectral_abscissa
from .integrator import IntegratorSettings, Trajectory, integrate, solve_batch, trajectory_gap
from .equilibria import (
    Equilibrium,
    break_even,
    cep_equilibrium,
    coexistence_equilibrium,
    u_crit,
    washout_equilibrium,
    xi,
)
from .stability import StabilityReport, classify, jacobian

__version__ = "0.1.0"

__all__ = [
    "ChemostatError",
    "ConfigurationError",
    "DegeneracyError",
    "DomainError",
    "InternalConsistencyError",
    "NoCoexistenceError",
    "NumericError",
    "StiffnessError",
    "ChemostatModel",
    "ConstantMatrix",
    "MonodKinetics",
    "MutationCirculant",
    "NeumannLaplacian",
    "State",
    "check_hypotheses",
    "eval_perturbation",
    "eval_rhs",
    "load_model",
    "PerronPair",
    "mu_hat",
    "perron_pair",
    "spectral_abscissa",
    "IntegratorSettings",
    "Trajectory",
    "integrate",
    "solve_batch",
    "trajectory_gap",
    "Equilibrium",
    "break_even",
    "cep_equilibrium",
    "coexistence_equilibrium",
    "u_crit",
    "washout_equilibrium",
    "xi",
    "StabilityReport",
    "classify",
    "jacobian",
]
