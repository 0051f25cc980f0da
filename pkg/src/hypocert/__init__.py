"""Convergence-rate certificates for degenerate, non-reversible diffusions."""

from .certificate import (ConditionReport, RateMap, check_1d_sufficient, check_oscillator_sufficient,
                          jacobi_eigh, oscillator_schur_check, pencil_min_eig, rate_map, read_rate_csv,
                          sweep_parameters, write_rate_csv)
from .errors import *  # noqa: F401,F403
from .fpe import FokkerPlanckSolver, FunctionalTrace, compute_functionals, run_decay_experiment, step
from .gamma_calculus import (GammaValues, GridFunction, eval_gamma_operators, fisher_dissipation_rhs,
                             verify_bochner)
from .grid import DensityField, Grid, equilibrium
from .model import (DiagonalModel, GenericModel, ModelSpec, OscillatorModel, PowerSeries, UnderdampedModel,
                    check_stationarity, check_structure_condition, compute_gamma, expansion_coefficients,
                    load_model, model_from_dict)
from .tensor import (HessianBundle, assemble, assemble_diagonal, assemble_generic, assemble_oscillator,
                     assemble_underdamped, closed_form_report)

__version__ = "0.1.0"
