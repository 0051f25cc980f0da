"""Regenerate the four rate-map heatmaps (constant and variable friction, two beta each).

    python demos/rate_maps.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np

from hypocert.cli import reproduce_figure

outdir = Path(sys.argv[1] if len(sys.argv) > 1 else "rate_maps")
for which in ("const", "variable"):
    for rm in reproduce_figure(which, outdir):
        lam = rm.lambda_field
        print(f"{which:8s} beta={rm.beta:<4g} min {lam.min():.5f}  max {lam.max():.5f}  "
              f"mean {np.mean(lam):.5f}  lambda_inf {rm.lambda_inf:.5f}")
print(f"CSV and SVG files written to {outdir}/")
