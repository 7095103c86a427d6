"""Observer-based refinement of correct-by-design controllers with precision certificates."""

from .accuracy import PrecisionCertificate, certify_deterministic, certify_stochastic, epsilon_from_Q
from .matops import solve_dare_kalman, solve_dare_lq, solve_discrete_lyapunov, spectral_radius
from .model import DeterministicLti, StochasticLti, case_study_model, noiseless, planar_submodel
from .refine import InterfaceFn, Observer, compose_closed_loop, error_dynamics
from .sim import NoiseSource, empirical_epsilon, monte_carlo, simulate
from .symbolic import Grid, ReachStaySpec, abstract, controller_eval, synthesize_reach_stay

__version__ = "0.1.0"

__all__ = [
    "PrecisionCertificate",
    "certify_deterministic",
    "certify_stochastic",
    "epsilon_from_Q",
    "solve_dare_kalman",
    "solve_dare_lq",
    "solve_discrete_lyapunov",
    "spectral_radius",
    "DeterministicLti",
    "StochasticLti",
    "case_study_model",
    "noiseless",
    "planar_submodel",
    "InterfaceFn",
    "Observer",
    "compose_closed_loop",
    "error_dynamics",
    "NoiseSource",
    "empirical_epsilon",
    "monte_carlo",
    "simulate",
    "Grid",
    "ReachStaySpec",
    "abstract",
    "controller_eval",
    "synthesize_reach_stay",
]
