"""How far the three-coupled-oscillator tensor is from positive semidefinite.

Evaluates the closed-form sufficient conditions at the reference parameters,
then the block-Schur test of the assembled tensor at a few points, then a
random search over parameters for the largest smallest eigenvalue.
"""

import numpy as np

from hypocert import assemble_oscillator, check_oscillator_sufficient, oscillator_schur_check
from hypocert.model import OscillatorModel, PowerSeries

rep = check_oscillator_sufficient(0.6, 0.65, 0.2, 1.0, 1e-7, 0.225)
print("sufficient conditions:", "PASS" if rep.passed else "FAIL",
      {k: round(v, 4) for k, v in rep.margins.items()})


def oscillator(k1, k2, z2, N):
    return OscillatorModel(PowerSeries([(k1 / 2, 2)]), PowerSeries([(k2 / 2, 2)]), z2=z2, N=N,
                           eps0=1e-7, eps2=0.0)


m = oscillator(0.6, 0.01, 0.2, 1.0)
rng = np.random.default_rng(0)
for x in rng.uniform(-np.pi, np.pi, size=(3, 6)):
    s = oscillator_schur_check(assemble_oscillator(m, x))
    print(f"R1 min {s.R1_min:+.4f}  Schur min {s.schur_min:+.4f}  full min {s.full_min:+.4f}  psd {s.psd}")

best = -np.inf
for _ in range(2000):
    mm = oscillator(rng.uniform(0.1, 3), rng.uniform(0, 1), rng.uniform(0.05, 2), rng.uniform(0.2, 3))
    best = max(best, np.linalg.eigvalsh(assemble_oscillator(mm, rng.uniform(-3, 3, 6)).R_total)[0])
print(f"largest smallest eigenvalue over 2000 random draws: {best:+.4f}")
