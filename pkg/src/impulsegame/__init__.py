"""Numerical toolkit for zero-sum games between an impulse controller and a
diffusion controller: QVI solver, SDE rollouts and executable checks."""
from .grid import Grid, ValueField, canonical_grid, tolerance
from .intervention import (ImpulseGrid, InterventionResult, apply_intervention, best_impulse,
                           canonical_impulse_grid)
from .problem import (NonConformingProblemError, ProblemSpec, ValidationReport, global_bound,
                      tp0, tp1, tp2, truncation_radius, validate_problem)
from .qvi import Scheme, Solution, SolverError, convergence_study, solve, step_backward, terminal_condition

__version__ = "0.1.0"
