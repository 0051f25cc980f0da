"""Integrate the Fokker-Planck equation for the constant-friction Langevin model and
compare Fisher information, relative entropy and L1 distance with the certified
exponential envelopes.

    python demos/decay_experiment.py [nodes-per-axis]
"""

import sys

from hypocert import FokkerPlanckSolver, rate_map, run_decay_experiment
from hypocert.fpe import mixture_density
from hypocert.grid import Grid
from hypocert.model import model_from_dict
from hypocert.cli import BUILTINS

n = int(sys.argv[1]) if len(sys.argv) > 1 else 81
model = model_from_dict(BUILTINS["constant_diffusion"])
cert = rate_map(model, Grid.make((-1, -1), (1, 1), 41))
grid = Grid.make((-5, -5), (5, 5), n)
solver = FokkerPlanckSolver(model, grid)
trace = run_decay_experiment(model, mixture_density(model, grid), 20.0, rate_certificate=cert, solver=solver)

print(f"certified rate {cert.lambda_inf:.6f}; fitted exponents "
      + ", ".join(f"{k} {v:.4f}" for k, v in trace.fitted.items()))
print(f"{'t':>6} {'I':>11} {'KL':>11} {'L1':>11}")
for i in range(0, len(trace.times), max(1, len(trace.times) // 10)):
    print(f"{trace.times[i]:6.2f} {trace.I_az[i]:11.4e} {trace.KL[i]:11.4e} {trace.L1[i]:11.4e}")
print("verdicts", trace.verdicts)
for s in trace.dissipation:
    print(f"dissipation identity at t={s['t']:.2f}: relative error {s['relative_error']:.2%}")
