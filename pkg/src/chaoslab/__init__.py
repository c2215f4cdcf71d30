"""Mean-field limits of singular interacting particle systems.

Particle simulators (stochastic, deterministic and sticky), exact 1D
optimal transport, a minimizing-movement (JKO) solver for the free energy,
closed-form reference solutions and propagation-of-chaos diagnostics.
"""
from .diagnostics import (ChaosReport, chaos_sweep, contractivity_test, dissipation_certificate,
                          regularization_commutation)
from .gradient_flow import (ConvergenceError, JKOFlow, convexity_defect, evi_residual, free_energy,
                            jko_flow, jko_step, weak_mkv_residual)
from .initial import InitialMeasure
from .isotonic import pava
from .oracles import (burgers_entropy, dyson_equilibrium, heat_flow, hilbert_transform, ou_flow)
from .particles import (ParticleState, SimulationConfig, Trajectory, energy_EN, grad_EN, simulate,
                        step_deterministic, step_sticky, step_stochastic)
from .potentials import (ExternalPotential, PotentialSpec, SingularityError, certify_lambda, eval_grad_w,
                         eval_w, regularize)
from .transport import (EmpiricalMeasure, QuantileMeasure, empirical, w2_assignment, w2_distance,
                        w2_quantile, wp_discrete_1d)

__version__ = "0.1.0"

__all__ = [
    "ChaosReport", "ConvergenceError", "EmpiricalMeasure", "ExternalPotential", "InitialMeasure",
    "JKOFlow", "ParticleState", "PotentialSpec", "QuantileMeasure", "SimulationConfig",
    "SingularityError", "Trajectory", "burgers_entropy", "certify_lambda", "chaos_sweep",
    "contractivity_test", "convexity_defect", "dissipation_certificate", "dyson_equilibrium",
    "empirical", "energy_EN", "eval_grad_w", "eval_w", "evi_residual", "free_energy", "grad_EN",
    "heat_flow", "hilbert_transform", "jko_flow", "jko_step", "ou_flow", "pava",
    "regularization_commutation", "regularize", "simulate", "step_deterministic", "step_sticky",
    "step_stochastic", "w2_assignment", "w2_distance", "w2_quantile", "weak_mkv_residual",
    "wp_discrete_1d",
]
