"""Gamma operators evaluated from derivative jets of a test function.

Everything here works on jets (U, X, T) = (grad f, Hess f, third derivatives)
and on batched model jets, so the same code serves analytic test functions
at a point and gridded densities on a whole grid.
"""

from dataclasses import dataclass

import numpy as np

from . import stencils
from .errors import NonPositiveDensity, StencilOutOfDomain
from .grid import DensityField
from .model import UnderdampedModel, diffusion_tensors
from .tensor import assemble_generic, assemble_underdamped


@dataclass
class GammaValues:
    gamma1: np.ndarray
    gamma1_z: np.ndarray
    Ltilde_f: np.ndarray
    Ltilde_z_f: np.ndarray
    gamma2_tilde: np.ndarray
    gamma2_z_pi: np.ndarray
    gamma_irrev: np.ndarray
    gamma_irrev_a: np.ndarray
    gamma_irrev_z: np.ndarray
    div_correction: np.ndarray
    hess_beta_sq: np.ndarray
    X_vec: np.ndarray

    @property
    def lhs(self):
        """Gamma_{2,a,z,gamma}: the integrand on the dissipation side."""
        return self.gamma2_tilde + self.gamma2_z_pi + self.gamma_irrev


def _field_parts(jet):
    A, dA, d2A = diffusion_tensors(jet.a, jet.da, jet.d2a)
    B, dB, d2B = diffusion_tensors(jet.z, jet.dz, jet.d2z)
    g, Hl = jet.grad_log_pi, jet.hess_log_pi
    return A, dA, d2A, B, dB, d2B, g, Hl


def _generator_terms(C, dC, d2C, g, Hl, U, X, T):
    """phi = U.C.U, its gradient and Hessian; L~ applied to phi; psi = L~ f and grad psi."""
    ein = np.einsum
    divC = ein("...jij->...i", dC)
    ddivC = ein("...rjij->...ri", d2C)                    # d_r (div C)_i
    Cg = ein("...ij,...j->...i", C, g)
    dCg = ein("...rqs,...s->...rq", dC, g) + ein("...qs,...sr->...rq", C, Hl)
    drift = divC + Cg
    CU = ein("...ij,...j->...i", C, U)
    phi = ein("...i,...i->...", U, CU)
    dphi = ein("...i,...pij,...j->...p", U, dC, U) + 2.0 * ein("...pi,...i->...p", X, CU)
    d2phi = (ein("...i,...prij,...j->...pr", U, d2C, U)
             + 2.0 * ein("...ri,...pij,...j->...pr", X, dC, U)
             + 2.0 * ein("...pi,...rij,...j->...pr", X, dC, U)
             + 2.0 * ein("...pri,...i->...pr", T, CU)
             + 2.0 * ein("...pi,...ij,...jr->...pr", X, C, X))
    L_phi = ein("...pr,...pr->...", C, d2phi) + ein("...p,...p->...", drift, dphi)
    psi = ein("...pr,...pr->...", C, X) + ein("...p,...p->...", drift, U)
    dpsi = (ein("...rpq,...pq->...r", dC, X) + ein("...pq,...pqr->...r", C, T)
            + ein("...ri,...i->...r", ddivC + dCg, U) + ein("...i,...ir->...r", drift, X))
    return phi, dphi, L_phi, psi, dpsi, CU, divC


def _weighted_div(C, dC, divC, g, F, dF):
    """(1/pi) div(pi C F) given F and its Jacobian dF[p, q] = d_p F_q."""
    ein = np.einsum
    return (ein("...q,...q->...", divC, F) + ein("...pq,...pq->...", C, dF)
            + ein("...p,...pq,...q->...", g, C, F))


def gamma_operators_from_jets(jet, U, X, T, beta=0.0, Lambda1=None, Lambda2=None, Q=None, P=None):
    """All Gamma quantities for f with jet (U, X, T) at the (possibly batched) model jet."""
    ein = np.einsum
    A, dA, d2A, B, dB, d2B, g, Hl = _field_parts(jet)
    gam = jet.gamma
    phi, dphi, L_phi, psi, dpsi, AU, divA = _generator_terms(A, dA, d2A, g, Hl, U, X, T)
    phz, dphz, L_phz, psz, _, BU, divB = _generator_terms(B, dB, d2B, g, Hl, U, X, T)
    # L~ applied to Gamma_1^z uses the a-generator
    drift_a = divA + ein("...ij,...j->...i", A, g)
    d2phz = (ein("...i,...prij,...j->...pr", U, d2B, U)
             + 2.0 * ein("...ri,...pij,...j->...pr", X, dB, U)
             + 2.0 * ein("...pi,...rij,...j->...pr", X, dB, U)
             + 2.0 * ein("...pri,...i->...pr", T, BU)
             + 2.0 * ein("...pi,...ij,...jr->...pr", X, B, X))
    L_a_phz = ein("...pr,...pr->...", A, d2phz) + ein("...p,...p->...", drift_a, dphz)
    g2 = 0.5 * L_phi - ein("...r,...r->...", dpsi, AU)
    g2z = 0.5 * L_a_phz - ein("...r,...r->...", dpsi, BU)
    # div_z^pi(Gamma_{1, grad A}) - div_a^pi(Gamma_{1, grad B})
    FA = ein("...i,...kij,...j->...k", U, dA, U)
    dFA = ein("...i,...pkij,...j->...pk", U, d2A, U) + 2.0 * ein("...pi,...kij,...j->...pk", X, dA, U)
    FB = ein("...i,...kij,...j->...k", U, dB, U)
    dFB = ein("...i,...pkij,...j->...pk", U, d2B, U) + 2.0 * ein("...pi,...kij,...j->...pk", X, dB, U)
    corr = _weighted_div(B, dB, divB, g, FA, dFA) - _weighted_div(A, dA, divA, g, FB, dFB)
    g2z = g2z + corr
    Ug = ein("...i,...i->...", U, gam)
    irr_a = psi * Ug - 0.5 * ein("...p,...p->...", dphi, gam)
    irr_z = psz * Ug - 0.5 * ein("...p,...p->...", dphz, gam)
    Xv = X.reshape(X.shape[:-2] + (-1,))
    if Q is not None:
        r1 = ein("...ij,...j->...i", Q, Xv) + (0.0 if Lambda1 is None else ein("...ij,...j->...i", Lambda1, U))
        r2 = ein("...ij,...j->...i", P, Xv) + (0.0 if Lambda2 is None else ein("...ij,...j->...i", Lambda2, U))
        hb = np.sum(r1 * r1, -1) + np.sum(r2 * r2, -1)
    else:
        hb = np.full(np.shape(phi), np.nan)
    return GammaValues(phi, phz, psi, psz, g2, g2z, irr_a + irr_z, irr_a, irr_z, corr, hb, Xv)


def function_jet(f, x, h1=1e-3, h2=None):
    """Gradient, Hessian and third derivatives of a scalar callable by stencils."""
    x = np.asarray(x, float)
    U = stencils.jacobian(f, x, h1)
    X = stencils.hessian(f, x, h2 if h2 is not None else 2e-3)
    X = 0.5 * (X + X.T)
    T = stencils.jacobian(lambda y: stencils.hessian(f, y, h2 if h2 is not None else 2e-3), x, h1 * 5)
    T = (T + np.transpose(T, (1, 0, 2)) + np.transpose(T, (1, 2, 0))
         + np.transpose(T, (2, 1, 0)) + np.transpose(T, (0, 2, 1)) + np.transpose(T, (2, 0, 1))) / 6.0
    return U, X, T


@dataclass
class GridFunction:
    """Scalar field sampled on a Grid; derivatives by nested fourth-order stencils."""
    grid: object
    values: np.ndarray

    def jets(self):
        return stencils.grid_jet(self.values, self.grid.spacing, self.grid.periodic)

    def node_index(self, x, margin=2):
        idx = []
        for k in range(self.grid.dim):
            ax = self.grid.axis(k)
            i = int(np.argmin(np.abs(ax - x[k])))
            if abs(ax[i] - x[k]) > 1e-9 * max(1.0, abs(x[k])):
                raise StencilOutOfDomain(f"x[{k}]={x[k]} is not a grid node")
            if not self.grid.periodic[k] and (i < margin or i > len(ax) - 1 - margin):
                raise StencilOutOfDomain(f"x[{k}]={x[k]} is within {margin} nodes of the boundary")
            idx.append(i)
        return tuple(idx)


def eval_gamma_operators(model, f, x, beta=0.0, jet_steps=None):
    """Gamma operators of ``f`` at ``x``.

    ``f`` is a scalar callable, a ``GridFunction`` (x must be an interior
    node), or a precomputed tuple (U, X, T).
    """
    x = np.asarray(x, float)
    if isinstance(f, GridFunction):
        idx = f.node_index(x)
        U, X, T = (arr[idx] for arr in f.jets())
    elif isinstance(f, tuple):
        U, X, T = (np.asarray(v, float) for v in f)
    else:
        U, X, T = function_jet(f, x, **(jet_steps or {}))
    b = assemble_generic(model, x, beta)
    return gamma_operators_from_jets(model.jet(x), U, X, T, beta, b.Lambda1, b.Lambda2, b.Q_mat, b.P_mat)


# ---------------------------------------------------------------------------
# weak-form identities on a grid

def _bundles_on_grid(model, grid, beta):
    pts = grid.points().reshape(-1, grid.dim)
    if isinstance(model, UnderdampedModel):
        bundles = [assemble_underdamped(model, p, beta=beta) for p in pts]
    else:
        bundles = [assemble_generic(model, p, beta) for p in pts]
    stack = lambda name: np.stack([getattr(b, name) for b in bundles]).reshape(grid.shape + getattr(bundles[0], name).shape)
    return {k: stack(k) for k in ("R_total", "Lambda1", "Lambda2", "Q_mat", "P_mat", "R_gamma_a", "R_gamma_z", "R_Ia")}


def _log_ratio(model, p):
    p.require_positive()
    logpi = np.asarray(model.log_pi(p.grid.points()), float)
    return np.log(p.values) - logpi


@dataclass
class BochnerReport:
    lhs: float
    rhs: float
    residual: float
    tol: float
    passed: bool
    grid_shape: tuple


def bochner_integrals(model, p, beta=0.0):
    """Integrals of both sides of the information Bochner identity against p."""
    grid = p.grid
    f = _log_ratio(model, p)
    U, X, T = stencils.grid_jet(f, grid.spacing, grid.periodic)
    jet = model.jet(grid.points())
    blk = _bundles_on_grid(model, grid, beta)
    vals = gamma_operators_from_jets(jet, U, X, T, beta, blk["Lambda1"], blk["Lambda2"], blk["Q_mat"], blk["P_mat"])
    rq = np.einsum("...i,...ij,...j->...", U, blk["R_total"], U)
    lhs = grid.integrate(vals.lhs * p.values)
    rhs = grid.integrate((vals.hess_beta_sq + rq) * p.values)
    return lhs, rhs, vals


def verify_bochner(model, p, beta=0.0, tol=1e-3):
    """|LHS - RHS| / (|LHS| + |RHS| + 1) for the weak-form identity with f = log(p/pi)."""
    if not isinstance(p, DensityField):
        raise TypeError("p must be a DensityField")
    lhs, rhs, _ = bochner_integrals(model, p, beta)
    res = abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1.0)
    return BochnerReport(lhs, rhs, res, tol, bool(res < tol), p.grid.shape)


def fisher_dissipation_rhs(model, p):
    """-2 * integral of Gamma_{2,a,z,gamma}(f, f) p with f = log(p/pi)."""
    grid = p.grid
    f = _log_ratio(model, p)
    U, X, T = stencils.grid_jet(f, grid.spacing, grid.periodic)
    vals = gamma_operators_from_jets(model.jet(grid.points()), U, X, T)
    return -2.0 * grid.integrate(vals.lhs * p.values)
