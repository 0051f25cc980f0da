"""Explicit finite-volume-style solver for the Fokker-Planck equation in ratio form.

With h = p / pi and div(pi gamma) = 0 the equation becomes

    dh/dt = (1/pi) div(pi A grad h) + gamma . grad h,

so h = 1 is an exact discrete fixed point: diffusion uses face fluxes of
pi*A times differences of h, transport is a limited second-order upwind
discretization of the advective term. Time stepping is SSP-RK2.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import stencils
from .errors import CflViolation, NegativeDensity, NonPositiveDensity
from .grid import DensityField, Grid, equilibrium


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _pad(h, axis, periodic, width=2):
    mode = "wrap" if periodic else "edge"
    pads = [(0, 0)] * h.ndim
    pads[axis] = (width, width)
    return np.pad(h, pads, mode=mode)


def _take(arr, axis, start, stop):
    idx = [slice(None)] * arr.ndim
    idx[axis] = slice(start, stop if stop != 0 else None)
    return arr[tuple(idx)]


class FokkerPlanckSolver:
    """Precomputes pi, face coefficients and transport velocities on a grid."""

    def __init__(self, model, grid, cfl=0.45):
        if grid.dim > 3:
            raise ValueError("the grid solver handles at most three dimensions")
        self.model = model
        self.grid = grid
        self.cfl = cfl
        pts = grid.points()
        self.pi = equilibrium(model, grid).values
        logpi = np.asarray(model.log_pi(pts), float)
        shift = float(logpi.max())
        Z = grid.integrate(np.exp(logpi - shift))
        jet = model.jet(pts)
        A = np.einsum("...qi,...ri->...qr", jet.a, jet.a)
        B = np.einsum("...qi,...ri->...qr", jet.z, jet.z)
        self.A = A
        self.mass_matrix = A + B
        self.velocity = -jet.gamma            # dh/dt + c . grad h = diffusion
        d = grid.dim
        self.face = []                        # per axis: (pi*A[k, :]) at faces i+1/2
        for k in range(d):
            if grid.periodic[k]:
                mid = pts.copy()
                mid[..., k] = mid[..., k] + 0.5 * grid.spacing[k]
            else:
                mid = 0.5 * (_take(pts, k, 0, -1) + _take(pts, k, 1, 0))
            mj = model.jet(mid)
            Am = np.einsum("...qi,...ri->...qr", mj.a, mj.a)
            pim = np.exp(np.asarray(model.log_pi(mid), float) - shift) / Z
            self.face.append(pim[..., None] * Am[..., k, :])
        self.volume_scale = []
        for k in range(d):
            s = np.ones(grid.shape[k])
            if not grid.periodic[k]:
                s[0] = s[-1] = 2.0            # boundary nodes own half a cell
            shape = [1] * d
            shape[k] = -1
            self.volume_scale.append(s.reshape(shape))
        self.max_dt = self._stable_dt()

    # ------------------------------------------------------------------
    def _stable_dt(self):
        g = self.grid
        rate = np.zeros(g.shape)
        for k in range(g.dim):
            rate = rate + np.abs(self.velocity[..., k]) / g.spacing[k]
            fk = np.abs(self.face[k][..., k])
            if g.periodic[k]:
                both = fk + np.roll(fk, 1, axis=k)
            else:
                pad = [(0, 0)] * g.dim
                pad[k] = (1, 0)
                left = np.pad(fk, pad)
                pad[k] = (0, 1)
                right = np.pad(fk, pad)
                both = left + right
            rate = rate + both * self.volume_scale[k] / (self.pi * g.spacing[k] ** 2)
        peak = float(rate.max())
        return math.inf if peak == 0 else self.cfl / peak

    def _grad_central(self, h, l):
        g = self.grid
        if g.periodic[l]:
            return (np.roll(h, -1, l) - np.roll(h, 1, l)) / (2 * g.spacing[l])
        return np.gradient(h, g.spacing[l], axis=l, edge_order=1)

    def diffusion(self, h):
        g = self.grid
        out = np.zeros_like(h)
        grads = None
        for k in range(g.dim):
            coef = self.face[k]
            dk = g.spacing[k]
            if g.periodic[k]:
                diff = (np.roll(h, -1, k) - h) / dk
            else:
                diff = np.diff(h, axis=k) / dk
            flux = coef[..., k] * diff
            cross = [l for l in range(g.dim) if l != k and np.any(coef[..., l] != 0)]
            if cross:
                if grads is None:
                    grads = [self._grad_central(h, l) for l in range(g.dim)]
                for l in cross:
                    gl = grads[l]
                    if g.periodic[k]:
                        avg = 0.5 * (gl + np.roll(gl, -1, k))
                    else:
                        avg = 0.5 * (_take(gl, k, 0, -1) + _take(gl, k, 1, 0))
                    flux = flux + coef[..., l] * avg
            if g.periodic[k]:
                div = (flux - np.roll(flux, 1, k)) / dk
            else:
                pad = [(0, 0)] * g.dim
                pad[k] = (1, 1)
                fp = np.pad(flux, pad)         # zero flux through the box walls
                div = (_take(fp, k, 1, 0) - _take(fp, k, 0, -1)) / dk * self.volume_scale[k]
            out = out + div
        return out / self.pi

    def transport(self, h):
        """-c . grad h with minmod-limited upwind reconstruction."""
        g = self.grid
        out = np.zeros_like(h)
        for k in range(g.dim):
            dk = g.spacing[k]
            c = self.velocity[..., k]
            hp = _pad(h, k, g.periodic[k])
            n = h.shape[k]
            dm = np.diff(hp, axis=k)
            slope = _minmod(_take(dm, k, 0, n + 2), _take(dm, k, 1, n + 3))  # padded nodes 1..n+2
            center = _take(hp, k, 1, n + 3)
            left_face = center + 0.5 * slope      # left state of the face to the right of each node
            right_face = center - 0.5 * slope     # right state of the face to the left
            up = (_take(left_face, k, 1, n + 1) - _take(left_face, k, 0, n)) / dk
            down = (_take(right_face, k, 2, n + 2) - _take(right_face, k, 1, n + 1)) / dk
            out = out - np.where(c > 0, c * up, c * down)
        return out

    def rhs(self, h):
        return self.diffusion(h) + self.transport(h)

    def step_h(self, h, dt):
        if dt > self.max_dt * (1 + 1e-12):
            raise CflViolation(f"dt={dt:.3e} exceeds the stability bound {self.max_dt:.3e}")
        h1 = h + dt * self.rhs(h)
        h2 = 0.5 * (h + h1 + dt * self.rhs(h1))
        if np.any(h2 < 0):
            raise NegativeDensity("density became negative; reduce dt or refine the grid")
        return h2 / self.grid.integrate(self.pi * h2)

    def step(self, p, dt):
        h = self.step_h(p.values / self.pi, dt)
        return DensityField(self.grid, self.pi * h, p.time + dt)


def mixture_density(model, grid, weight=0.3, center=None, width=0.6):
    """(1 - weight) pi + weight * Gaussian bump, normalized on the grid.

    The bump sits at (1, 0.5, 0, ...) unless ``center`` is given.
    """
    pi = equilibrium(model, grid).values
    pts = grid.points()
    if center is None:
        c = np.zeros(grid.dim)
        c[:2] = (1.0, 0.5)[:grid.dim]
    else:
        c = np.asarray(center, float)
    bump = np.exp(-np.sum((pts - c) ** 2, -1) / (2 * width ** 2))
    bump /= grid.integrate(bump)
    return DensityField(grid, (1 - weight) * pi + weight * bump)


def step(model, p, dt, solver=None):
    """One SSP-RK2 step of the Fokker-Planck equation."""
    solver = solver or FokkerPlanckSolver(model, p.grid)
    return solver.step(p, dt)


def compute_functionals(model, p, solver=None):
    """(I_az, KL, L1) of a gridded density against the discretely normalized pi."""
    solver = solver or FokkerPlanckSolver(model, p.grid)
    if not np.all(p.values > 0):
        raise NonPositiveDensity("density must be strictly positive for log-ratio functionals")
    return _functionals(solver, p.values)


def _functionals(solver, pv):
    g = solver.grid
    f = np.log(pv / solver.pi)
    grad = np.stack([stencils.grid_diff(f, k, g.spacing[k], g.periodic[k]) for k in range(g.dim)], -1)
    I = g.integrate(np.einsum("...i,...ij,...j->...", grad, solver.mass_matrix, grad) * pv)
    KL = g.integrate(pv * f)
    L1 = g.integrate(np.abs(pv - solver.pi))
    return max(I, 0.0), max(KL, 0.0), L1


@dataclass
class FunctionalTrace:
    times: list = field(default_factory=list)
    I_az: list = field(default_factory=list)
    KL: list = field(default_factory=list)
    L1: list = field(default_factory=list)
    lam: float = 0.0
    tol: float = 0.05
    fitted: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    dissipation: list = field(default_factory=list)

    def envelopes(self):
        t = np.asarray(self.times)
        I0 = self.I_az[0]
        lam = self.lam
        env_I = np.exp(-2 * lam * t) * I0
        env_KL = np.exp(-2 * lam * t) * I0 / (2 * lam)
        env_L1 = np.sqrt(I0 / lam) * np.exp(-lam * t)
        return env_I, env_KL, env_L1

    def pointwise_pass(self):
        eI, eK, eL = self.envelopes()
        k = 1 + self.tol
        return ((np.asarray(self.I_az) <= k * eI) & (np.asarray(self.KL) <= k * eK)
                & (np.asarray(self.L1) <= k * eL))

    @property
    def passed(self):
        return all(self.verdicts.get(k, False) for k in ("A", "B", "C", "dissipation"))


def _fit_rate(t, y):
    t, y = np.asarray(t), np.asarray(y)
    ok = y > 1e-14 * max(y.max(), 1e-300)
    if ok.sum() < 2:
        return float("nan")
    slope = np.polyfit(t[ok], np.log(y[ok]), 1)[0]
    return float(-slope)


def run_decay_experiment(model, p0, t_final, dt="auto", rate_certificate=None, lam=None,
                         record_every=None, tol=0.05, samples=5, sample_window=(0.5, 4.0),
                         dissipation_tol=0.02, solver=None):
    """Integrate from p0 to t_final and check the three decay envelopes.

    The rate comes from ``rate_certificate.lambda_inf`` or ``lam``. At
    ``samples`` times inside ``sample_window`` the centered difference of
    I_az is compared with the dissipation integral.
    """
    from .gamma_calculus import fisher_dissipation_rhs

    if lam is None:
        if rate_certificate is None:
            raise ValueError("need a rate certificate or lam")
        lam = float(rate_certificate.lambda_inf)
    if not lam > 0:
        raise ValueError("certified rate must be positive")
    solver = solver or FokkerPlanckSolver(model, p0.grid)
    if dt == "auto":
        dt = solver.max_dt
    nsteps = int(math.ceil(t_final / dt - 1e-9))
    dt = t_final / nsteps
    if dt > solver.max_dt:
        raise CflViolation(f"dt={dt:.3e} exceeds the stability bound {solver.max_dt:.3e}")
    if record_every is None:
        record_every = max(1, int(round(0.1 / dt)))
    lo, hi = sample_window
    sample_steps = sorted({int(round(t / dt)) for t in np.linspace(lo, min(hi, t_final), samples)}) if samples else []
    K = max(1, int(round(0.01 / dt)))
    probe = {}
    for s in sample_steps:
        probe[s - K] = probe[s + K] = None
    trace = FunctionalTrace(lam=lam, tol=tol)
    h = p0.values / solver.pi
    h = h / solver.grid.integrate(solver.pi * h)
    rhs_at = {}
    for n in range(nsteps + 1):
        if n % record_every == 0 or n == nsteps or n in probe or n in sample_steps:
            pv = solver.pi * h
            I, KL, L1 = _functionals(solver, pv)
            if n % record_every == 0 or n == nsteps:
                trace.times.append(n * dt)
                trace.I_az.append(I)
                trace.KL.append(KL)
                trace.L1.append(L1)
            if n in probe:
                probe[n] = I
            if n in sample_steps:
                rhs_at[n] = fisher_dissipation_rhs(model, DensityField(solver.grid, pv, n * dt))
        if n < nsteps:
            h = solver.step_h(h, dt)
    for s in sample_steps:
        measured = (probe[s + K] - probe[s - K]) / (2 * K * dt)
        predicted = rhs_at[s]
        rel = abs(measured - predicted) / max(abs(predicted), 1e-300)
        trace.dissipation.append({"t": s * dt, "measured": measured, "predicted": predicted,
                                  "relative_error": rel, "pass": bool(rel <= dissipation_tol)})
    eI, eK, eL = trace.envelopes()
    k = 1 + tol
    trace.verdicts = {
        "A": bool(np.all(np.asarray(trace.I_az) <= k * eI)),
        "B": bool(np.all(np.asarray(trace.KL) <= k * eK)),
        "C": bool(np.all(np.asarray(trace.L1) <= k * eL)),
        "dissipation": all(d["pass"] for d in trace.dissipation),
    }
    trace.fitted = {"I_az": _fit_rate(trace.times, trace.I_az) / 2,
                    "KL": _fit_rate(trace.times, trace.KL) / 2,
                    "L1": _fit_rate(trace.times, trace.L1)}
    return trace


def write_trace_csv(trace, path):
    import csv
    eI, eK, eL = trace.envelopes()
    ok = trace.pointwise_pass()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "I_az", "KL", "L1", "envelope_I", "envelope_KL", "envelope_L1", "pass"])
        for row in zip(trace.times, trace.I_az, trace.KL, trace.L1, eI, eK, eL, ok):
            w.writerow([repr(float(v)) for v in row[:-1]] + [int(bool(row[-1]))])
