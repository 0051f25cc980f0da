"""SDE models dX = b dt + sqrt(2) a dB together with an auxiliary frame z.

Every model exposes a pointwise *jet*: the diffusion matrix a, the
auxiliary matrix z and their first two derivatives, the gradient and
Hessian of log pi, and the irreversible field gamma with its Jacobian.
Built-in families compute jets analytically; the generic family uses
fourth-order finite differences of user callables.

Index conventions used throughout the package:

* ``da[p, q, i]`` is the derivative along coordinate p of entry a[q, i];
  ``d2a[p, r, q, i]`` is the corresponding second derivative.
* ``dgamma[i, j]`` is the derivative along coordinate i of gamma_j.
"""

from dataclasses import dataclass, field
import csv
import json
import math
from pathlib import Path

import numpy as np

from . import stencils
from .errors import (ConfigParse, NonFiniteField, NonPositiveDiffusion, RankDeficientSpan,
                     SingularFrame, ToleranceExceeded)


# ---------------------------------------------------------------------------
# one-dimensional profiles

class PowerSeries:
    """f(x) = sum_j c_j x**e_j with exact derivatives of any order."""

    def __init__(self, terms):
        self.terms = [(float(c), float(e)) for c, e in terms]

    def __call__(self, x, order=0):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c, e in self.terms:
            coef, power = c, e
            for _ in range(order):
                coef *= power
                power -= 1.0
            if coef == 0.0:
                continue
            if power == 0.0:
                out = out + coef
            else:
                with np.errstate(invalid="ignore", divide="ignore"):
                    out = out + coef * np.power(x, power)
        return out

    def to_json(self):
        return {"terms": [[c, e] for c, e in self.terms]}

    @classmethod
    def quadratic(cls, k=1.0):
        return cls([(0.5 * k, 2)])


def _profile(spec, where):
    if isinstance(spec, PowerSeries):
        return spec
    if isinstance(spec, (int, float)):
        return PowerSeries([(spec, 0)])
    if isinstance(spec, dict) and "terms" in spec:
        try:
            return PowerSeries(spec["terms"])
        except (TypeError, ValueError) as exc:
            raise ConfigParse(f"bad power-series terms ({exc})", where)
    raise ConfigParse("expected a number or {\"terms\": [[coef, exponent], ...]}", where)


# ---------------------------------------------------------------------------
# jets

@dataclass
class Jet:
    """Pointwise (or batched, with leading axes) derivative data of a model."""
    x: np.ndarray
    a: np.ndarray
    da: np.ndarray
    d2a: np.ndarray
    z: np.ndarray
    dz: np.ndarray
    d2z: np.ndarray
    grad_log_pi: np.ndarray
    hess_log_pi: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray
    drift: np.ndarray

    def check_finite(self):
        for name in ("a", "da", "d2a", "z", "dz", "d2z", "grad_log_pi",
                     "hess_log_pi", "gamma", "dgamma", "drift"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteField(f"{name} is not finite at x={np.asarray(self.x).tolist()}")
        return self

    def point(self, index):
        """Slice one point out of a batched jet."""
        return Jet(**{k: np.asarray(v)[index] for k, v in self.__dict__.items()})


def diffusion_tensors(a, da, d2a=None):
    """A = a a^T with its first (and optionally second) derivatives."""
    A = np.einsum("...qi,...ri->...qr", a, a)
    dA = np.einsum("...pqi,...ri->...pqr", da, a)
    dA = dA + np.swapaxes(dA, -1, -2)
    if d2a is None:
        return A, dA
    d2A = np.einsum("...prqi,...si->...prqs", d2a, a)
    d2A = d2A + np.swapaxes(d2A, -1, -2)
    cross = np.einsum("...pqi,...rsi->...prqs", da, da)
    d2A = d2A + cross + np.swapaxes(cross, -1, -2)
    return A, dA, d2A


def _gamma_from_parts(a, da, d2a, g, H, b, db):
    """gamma = A grad log pi - b + div A and its Jacobian."""
    A, dA, d2A = diffusion_tensors(a, da, d2a)
    divA = np.einsum("...jij->...i", dA)
    gamma = np.einsum("...ij,...j->...i", A, g) - b + divA
    dgamma = (np.einsum("...pjs,...s->...pj", dA, g)
              + np.einsum("...js,...sp->...pj", A, H)
              - db
              + np.einsum("...pqjq->...pj", d2A))
    return gamma, dgamma


# ---------------------------------------------------------------------------
# models

def _pointwise(fn, x):
    """Apply a scalar function of one point to a point or a batch of points."""
    x = np.asarray(x, float)
    if x.ndim == 1:
        return fn(x)
    flat = x.reshape(-1, x.shape[-1])
    return np.array([fn(p) for p in flat]).reshape(x.shape[:-1])


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    periodic: tuple

    @classmethod
    def make(cls, lo, hi, periodic=None):
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        periodic = tuple(bool(v) for v in (periodic or [False] * len(lo)))
        return cls(lo, hi, periodic)

    def to_json(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "periodic": list(self.periodic)}


class ModelSpec:
    """Base class. Subclasses implement ``_jet_point`` or ``jet``."""

    family = "generic"

    def __init__(self, n, m, domain=None):
        if n < 1 or m < 0:
            raise ValueError("need n >= 1 and m >= 0")
        self.n = int(n)
        self.m = int(m)
        self.domain = domain

    @property
    def dim(self):
        return self.n + self.m

    # field maps -------------------------------------------------------
    def drift(self, x):
        return self.jet(x).drift

    def diffusion(self, x):
        return self.jet(x).a

    def auxiliary(self, x):
        return self.jet(x).z

    def log_pi(self, x):
        raise NotImplementedError

    # jets ---------------------------------------------------------------
    def jet(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"point has dimension {x.shape[-1]}, model has {self.dim}")
        if x.ndim == 1:
            return self._jet_point(x).check_finite()
        flat = x.reshape(-1, self.dim)
        jets = [self._jet_point(p) for p in flat]
        fields = {k: np.stack([getattr(j, k) for j in jets]).reshape(x.shape[:-1] + np.shape(getattr(jets[0], k)))
                  for k in jets[0].__dict__}
        return Jet(**fields).check_finite()

    def _jet_point(self, x):
        raise NotImplementedError

    def gamma_closed_form(self, x):
        """Family-specific closed form for gamma (None if unavailable)."""
        return None

    def with_auxiliary(self, **kwargs):
        raise NotImplementedError(f"{self.family} does not support replacing z")

    def to_json(self):
        raise NotImplementedError


class GenericModel(ModelSpec):
    """Model given by plain callables; derivatives by finite differences."""

    family = "generic"

    def __init__(self, n, m, drift, diffusion, auxiliary, log_pi, domain=None,
                 first_step=None, second_step=None):
        super().__init__(n, m, domain)
        self._drift = drift
        self._diffusion = diffusion
        self._auxiliary = auxiliary
        self._log_pi = log_pi
        self.first_step = first_step
        self.second_step = second_step

    def drift(self, x):
        return np.asarray(self._drift(np.asarray(x, float)), float)

    def diffusion(self, x):
        a = np.asarray(self._diffusion(np.asarray(x, float)), float)
        if a.shape != (self.dim, self.n):
            raise ValueError(f"diffusion returned shape {a.shape}, expected {(self.dim, self.n)}")
        return a

    def auxiliary(self, x):
        z = np.asarray(self._auxiliary(np.asarray(x, float)), float).reshape(self.dim, self.m)
        return z

    def log_pi(self, x):
        return _pointwise(lambda y: float(self._log_pi(y)), x)

    def _jet_point(self, x):
        h1, h2 = self.first_step, self.second_step
        a = self.diffusion(x)
        z = self.auxiliary(x)
        da = stencils.jacobian(self.diffusion, x, h1)
        d2a = stencils.hessian(self.diffusion, x, h2)
        if self.m:
            dz = stencils.jacobian(self.auxiliary, x, h1)
            d2z = stencils.hessian(self.auxiliary, x, h2)
        else:
            dz = np.zeros((self.dim, self.dim, 0))
            d2z = np.zeros((self.dim, self.dim, self.dim, 0))
        g = stencils.jacobian(self.log_pi, x, h1)
        H = stencils.hessian(self.log_pi, x, h2)
        H = 0.5 * (H + H.T)
        b = self.drift(x)
        db = stencils.jacobian(self.drift, x, h1)
        gamma, dgamma = _gamma_from_parts(a, da, d2a, g, H, b, db)
        return Jet(x, a, da, d2a, z, dz, d2z, g, H, gamma, dgamma, b)


class DiagonalModel(ModelSpec):
    """Non-degenerate diagonal diffusion a = diag(a_ii(x_i)), m = 0.

    ``potential`` is a triple (V, grad V, hess V) and ``gamma`` a pair
    (gamma, Jacobian with [i, j] = d_i gamma_j); the drift is
    b = -a a^T grad V + div(a a^T) - gamma, so pi is proportional to exp(-V)
    whenever gamma is divergence free against exp(-V).
    """

    family = "diagonal"

    def __init__(self, potential, diagonal, gamma=None, domain=None, spec=None):
        diagonal = [d if isinstance(d, PowerSeries) else _profile(d, "diagonal") for d in diagonal]
        super().__init__(len(diagonal), 0, domain)
        self.V, self.gradV, self.hessV = potential
        self.diag = diagonal
        self.gamma_fn = gamma
        self.spec = spec

    def log_pi(self, x):
        return _pointwise(lambda y: -float(self.V(y)), x)

    def _diag_values(self, x):
        vals = np.array([d(x[i]) for i, d in enumerate(self.diag)])
        d1 = np.array([d(x[i], 1) for i, d in enumerate(self.diag)])
        d2 = np.array([d(x[i], 2) for i, d in enumerate(self.diag)])
        return vals, d1, d2

    def _jet_point(self, x):
        n = self.n
        vals, d1, d2 = self._diag_values(x)
        if np.any(vals <= 0):
            raise NonPositiveDiffusion(f"a_ii <= 0 at x={x.tolist()}")
        a = np.diag(vals)
        da = np.zeros((n, n, n))
        d2a = np.zeros((n, n, n, n))
        for i in range(n):
            da[i, i, i] = d1[i]
            d2a[i, i, i, i] = d2[i]
        g = -np.asarray(self.gradV(x), float)
        H = -np.asarray(self.hessV(x), float)
        if self.gamma_fn is None:
            gamma, dgamma = np.zeros(n), np.zeros((n, n))
        else:
            gamma = np.asarray(self.gamma_fn[0](x), float)
            dgamma = np.asarray(self.gamma_fn[1](x), float)
        A = a @ a.T
        divA = 2.0 * vals * d1
        b = A @ g + divA - gamma
        return Jet(x, a, da, d2a, np.zeros((n, 0)), np.zeros((n, n, 0)),
                   np.zeros((n, n, n, 0)), g, H, gamma, dgamma, b)

    def gamma_closed_form(self, x):
        if self.gamma_fn is None:
            return np.zeros(self.n)
        return np.asarray(self.gamma_fn[0](np.asarray(x, float)), float)

    def to_json(self):
        if self.spec is None:
            raise ValueError("diagonal model built from callables cannot be serialized")
        return self.spec


def quadratic_potential(K, quartic=None):
    """V(x) = x.K.x/2 + sum_i c_i x_i^4/4 as a (value, grad, hess) triple."""
    K = np.asarray(K, float)
    c = np.zeros(len(K)) if quartic is None else np.asarray(quartic, float)

    def V(x):
        return 0.5 * x @ K @ x + 0.25 * np.sum(c * x ** 4)

    def grad(x):
        return K @ x + c * x ** 3

    def hess(x):
        return K + np.diag(3.0 * c * x ** 2)

    return V, grad, hess


def skew_gamma(potential, J, scale=1.0):
    """gamma = scale * J grad V with J antisymmetric; divergence free against exp(-V)."""
    J = np.asarray(J, float)
    _, grad, hess = potential

    def gamma(x):
        return scale * J @ grad(x)

    def jac(x):
        # [i, j] = d_i gamma_j = scale * sum_k J[j, k] hess[k, i]
        return scale * hess(x) @ J.T

    return gamma, jac


class UnderdampedModel(ModelSpec):
    """dx = v dt, dv = (-r(x) v - U'(x)) dt + sqrt(2 r(x)) dB, constant z in R^2.

    ``friction`` is ("constant", value), ("inverse_hessian",) meaning
    r = 1/U'', or ("series", PowerSeries).
    """

    family = "underdamped1d"

    def __init__(self, U, friction=("constant", 1.0), z=(1.0, 0.1), domain=None):
        super().__init__(1, 1, domain)
        self.U = U if isinstance(U, PowerSeries) else _profile(U, "params.U")
        if friction[0] not in ("constant", "inverse_hessian", "series"):
            raise ValueError(f"unknown friction kind {friction[0]!r}")
        self.friction = tuple(friction)
        self.z = np.asarray(z, float).reshape(2)

    def with_auxiliary(self, z):
        return UnderdampedModel(self.U, self.friction, z, self.domain)

    def log_pi(self, x):
        x = np.asarray(x, float)
        return -0.5 * x[..., 1] ** 2 - self.U(x[..., 0])

    def friction_derivatives(self, xs):
        """r, r', r'' at positions xs."""
        kind = self.friction[0]
        xs = np.asarray(xs, float)
        if kind == "constant":
            r = np.full_like(xs, float(self.friction[1]))
            return r, np.zeros_like(xs), np.zeros_like(xs)
        if kind == "series":
            s = self.friction[1]
            return s(xs), s(xs, 1), s(xs, 2)
        u2, u3, u4 = self.U(xs, 2), self.U(xs, 3), self.U(xs, 4)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 1.0 / u2, -u3 / u2 ** 2, -u4 / u2 ** 2 + 2.0 * u3 ** 2 / u2 ** 3

    def sqrt_friction(self, xs):
        """s = sqrt(r) with s' and s''."""
        r, r1, r2 = self.friction_derivatives(xs)
        if np.any(~(r > 0)):
            raise NonPositiveDiffusion("friction r(x) must be positive")
        s = np.sqrt(r)
        return s, r1 / (2.0 * s), r2 / (2.0 * s) - r1 ** 2 / (4.0 * s ** 3)

    def jet(self, x):
        x = np.asarray(x, float)
        if x.shape[-1] != 2:
            raise ValueError("underdamped model lives in R^2")
        B = x.shape[:-1]
        xs, vs = x[..., 0], x[..., 1]
        s, s1, s2 = self.sqrt_friction(xs)
        u1, u2 = self.U(xs, 1), self.U(xs, 2)
        a = np.zeros(B + (2, 1))
        a[..., 1, 0] = s
        da = np.zeros(B + (2, 2, 1))
        da[..., 0, 1, 0] = s1
        d2a = np.zeros(B + (2, 2, 2, 1))
        d2a[..., 0, 0, 1, 0] = s2
        z = np.broadcast_to(self.z.reshape(2, 1), B + (2, 1)).copy()
        g = np.stack([-u1, -vs], axis=-1)
        H = np.zeros(B + (2, 2))
        H[..., 0, 0] = -u2
        H[..., 1, 1] = -1.0
        gamma = np.stack([-vs, u1], axis=-1)
        dgamma = np.zeros(B + (2, 2))
        dgamma[..., 0, 1] = u2
        dgamma[..., 1, 0] = -1.0
        drift = np.stack([vs, -s * s * vs - u1], axis=-1)
        return Jet(x, a, da, d2a, z, np.zeros(B + (2, 2, 1)), np.zeros(B + (2, 2, 2, 1)),
                   g, H, gamma, dgamma, drift).check_finite()

    def gamma_closed_form(self, x):
        x = np.asarray(x, float)
        return np.stack([-x[..., 1], self.U(x[..., 0], 1)], axis=-1)

    def to_json(self):
        fr = self.friction
        if fr[0] == "constant":
            r = {"kind": "constant", "value": fr[1]}
        elif fr[0] == "series":
            r = {"kind": "series", **fr[1].to_json()}
        else:
            r = {"kind": "inverse_hessian"}
        out = {"family": self.family, "n": 1, "m": 1,
               "params": {"U": self.U.to_json(), "r": r, "z": self.z.tolist()}}
        if self.domain is not None:
            out["domain"] = self.domain.to_json()
        return out


class OscillatorModel(ModelSpec):
    """Three oscillators with nearest-neighbour coupling, heat baths on the ends.

    Coordinates are (q0, q1, q2, p0, p1, p2). The auxiliary matrix is
    z = [[z1 I, 0], [z2 I, z3]] with z3 = (z31, z32(p0, p2), z33) and
    z32 = N - eps0 p0^2/2 - eps2 p2^2/2.
    """

    family = "oscillator3"

    def __init__(self, V1, V2, xi=1.0, T=1.0, z1=1.0, z2=0.2, z31=0.0, z33=0.0,
                 N=1.0, eps0=0.0, eps2=0.0, domain=None):
        super().__init__(2, 4, domain)
        self.V1 = V1 if isinstance(V1, PowerSeries) else _profile(V1, "params.V1")
        self.V2 = V2 if isinstance(V2, PowerSeries) else _profile(V2, "params.V2")
        if xi <= 0 or T <= 0:
            raise NonPositiveDiffusion("need xi > 0 and T > 0")
        self.xi, self.T = float(xi), float(T)
        self.z1, self.z2, self.z31, self.z33 = float(z1), float(z2), float(z31), float(z33)
        self.N, self.eps0, self.eps2 = float(N), float(eps0), float(eps2)

    def _params(self):
        return dict(xi=self.xi, T=self.T, z1=self.z1, z2=self.z2, z31=self.z31, z33=self.z33,
                    N=self.N, eps0=self.eps0, eps2=self.eps2)

    def with_auxiliary(self, **kwargs):
        p = self._params()
        p.update(kwargs)
        return OscillatorModel(self.V1, self.V2, domain=self.domain, **p)

    def hamiltonian_parts(self, q):
        """grad_q H and the Hessian L = (d_{q_i q_j} H)."""
        q = np.asarray(q, float)
        d1 = q[..., 1] - q[..., 0]
        d2 = q[..., 2] - q[..., 1]
        v1p = self.V1(q, 1)
        v1pp = self.V1(q, 2)
        w1, w2 = self.V2(d1, 1), self.V2(d2, 1)
        k1, k2 = self.V2(d1, 2), self.V2(d2, 2)
        grad = np.stack([v1p[..., 0] - w1, v1p[..., 1] + w1 - w2, v1p[..., 2] + w2], axis=-1)
        L = np.zeros(q.shape[:-1] + (3, 3))
        for i in range(3):
            L[..., i, i] = v1pp[..., i]
        L[..., 0, 0] += k1
        L[..., 1, 1] += k1 + k2
        L[..., 2, 2] += k2
        L[..., 0, 1] = L[..., 1, 0] = -k1
        L[..., 1, 2] = L[..., 2, 1] = -k2
        return grad, L

    def hamiltonian(self, x):
        x = np.asarray(x, float)
        q, p = x[..., :3], x[..., 3:]
        return (0.5 * np.sum(p ** 2, -1) + np.sum(self.V1(q), -1)
                + self.V2(q[..., 1] - q[..., 0]) + self.V2(q[..., 2] - q[..., 1]))

    def log_pi(self, x):
        return -self.hamiltonian(x) / self.T

    def z32(self, p0, p2):
        return self.N - 0.5 * self.eps0 * p0 ** 2 - 0.5 * self.eps2 * p2 ** 2

    def jet(self, x):
        x = np.asarray(x, float)
        if x.shape[-1] != 6:
            raise ValueError("oscillator chain lives in R^6")
        B = x.shape[:-1]
        q, p = x[..., :3], x[..., 3:]
        gq, L = self.hamiltonian_parts(q)
        c = math.sqrt(self.xi * self.T)
        a = np.zeros(B + (6, 2))
        a[..., 3, 0] = c
        a[..., 5, 1] = c
        z = np.zeros(B + (6, 4))
        for i in range(3):
            z[..., i, i] = self.z1
            z[..., 3 + i, i] = self.z2
        z[..., 3, 3] = self.z31
        z[..., 4, 3] = self.z32(p[..., 0], p[..., 2])
        z[..., 5, 3] = self.z33
        dz = np.zeros(B + (6, 6, 4))
        dz[..., 3, 4, 3] = -self.eps0 * p[..., 0]
        dz[..., 5, 4, 3] = -self.eps2 * p[..., 2]
        d2z = np.zeros(B + (6, 6, 6, 4))
        d2z[..., 3, 3, 4, 3] = -self.eps0
        d2z[..., 5, 5, 4, 3] = -self.eps2
        g = -np.concatenate([gq, p], axis=-1) / self.T
        H = np.zeros(B + (6, 6))
        H[..., :3, :3] = -L / self.T
        for i in range(3):
            H[..., 3 + i, 3 + i] = -1.0 / self.T
        gamma = np.concatenate([-p, gq], axis=-1)
        dgamma = np.zeros(B + (6, 6))
        dgamma[..., :3, 3:] = L
        for i in range(3):
            dgamma[..., 3 + i, i] = -1.0
        fr = np.stack([p[..., 0], np.zeros_like(p[..., 0]), p[..., 2]], axis=-1)
        drift = np.concatenate([p, -gq - self.xi * fr], axis=-1)
        return Jet(x, a, np.zeros(B + (6, 6, 2)), np.zeros(B + (6, 6, 6, 2)), z, dz, d2z,
                   g, H, gamma, dgamma, drift).check_finite()

    def gamma_closed_form(self, x):
        x = np.asarray(x, float)
        gq, _ = self.hamiltonian_parts(x[..., :3])
        return np.concatenate([-x[..., 3:], gq], axis=-1)

    def to_json(self):
        out = {"family": self.family, "n": 2, "m": 4,
               "params": {"V1": self.V1.to_json(), "V2": self.V2.to_json(), **self._params()}}
        if self.domain is not None:
            out["domain"] = self.domain.to_json()
        return out


def as_generic(model, **steps):
    """Re-express a model through plain callables so its jet uses finite differences."""
    def drift(x):
        return model.jet(x).drift

    def diffusion(x):
        return model.jet(x).a

    def auxiliary(x):
        return model.jet(x).z

    return GenericModel(model.n, model.m, drift, diffusion, auxiliary, model.log_pi,
                        domain=model.domain, **steps)


# ---------------------------------------------------------------------------
# operations

def compute_gamma(model, x):
    """gamma = a a^T grad log pi - b + (sum_j d_j (a a^T)_ij)_i at x."""
    j = model.jet(x)
    A, dA = diffusion_tensors(j.a, j.da)
    divA = np.einsum("...jij->...i", dA)
    out = np.einsum("...ij,...j->...i", A, j.grad_log_pi) - j.drift + divA
    if not np.all(np.isfinite(out)):
        raise NonFiniteField(f"gamma not finite at x={np.asarray(x).tolist()}")
    return out


@dataclass
class StationarityReport:
    residual: float
    worst_point: np.ndarray
    tol: float
    passed: bool
    method: str


def _div_pi_gamma_analytic(model, pts):
    j = model.jet(pts)
    div = np.einsum("...ii->...", j.dgamma) + np.einsum("...i,...i->...", j.gamma, j.grad_log_pi)
    logp = np.asarray(model.log_pi(pts), float)
    pi = np.exp(logp)
    gnorm = np.linalg.norm(j.gamma, axis=-1)
    return np.abs(pi * div) / (1.0 + pi * gnorm)


def _div_pi_gamma_fd(model, pts, h):
    out = []
    for x in pts.reshape(-1, model.dim):
        def flux(y):
            return np.exp(model.log_pi(y)) * compute_gamma(model, y)
        J = stencils.jacobian(flux, x, h)
        div = np.trace(J)
        pi = math.exp(model.log_pi(x))
        out.append(abs(div) / (1.0 + pi * np.linalg.norm(compute_gamma(model, x))))
    return np.asarray(out).reshape(pts.shape[:-1])


def check_stationarity(model, grid, tol=1e-6, method="auto", h=None, raise_on_fail=False):
    """Max over the grid of |div(pi gamma)| / (1 + pi |gamma|).

    ``method="analytic"`` uses the jet (exact for built-in families);
    ``"fd"`` differentiates pi*gamma with the fourth-order stencil and step h.
    """
    if hasattr(grid, "points"):
        grid = grid.points()
    pts = np.asarray(grid, float).reshape(-1, model.dim)
    if method == "auto":
        method = "fd" if isinstance(model, GenericModel) else "analytic"
    if method == "analytic":
        res = _div_pi_gamma_analytic(model, pts)
    else:
        res = _div_pi_gamma_fd(model, pts, h if h is not None else 1e-3)
    k = int(np.argmax(res))
    report = StationarityReport(float(res[k]), pts[k], tol, bool(res[k] < tol), method)
    if raise_on_fail and not report.passed:
        raise ToleranceExceeded(f"div(pi gamma) residual {res[k]:.3e} exceeds {tol:g}",
                                point=pts[k], residual=float(res[k]))
    return report


@dataclass
class StructureReport:
    residual: float
    coefficients: np.ndarray   # [k, i, l]: (z_k . grad) a_i = sum_l c[k,i,l] a_l
    tol: float
    passed: bool


def check_structure_condition(model, x, tol=1e-8, jet=None):
    """Test that every (z_k . grad) a_i lies in the span of the columns of a."""
    j = model.jet(x) if jet is None else jet
    a = j.a
    n, m = model.n, model.m
    svals = np.linalg.svd(a, compute_uv=False)
    if svals.size == 0 or svals[-1] <= 1e-12 * max(svals[0], 1e-300):
        raise RankDeficientSpan(f"columns of a are dependent at x={np.asarray(x).tolist()}")
    # v[k, q, i] = sum_r z[r, k] da[r, q, i]
    v = np.einsum("rk,rqi->kqi", j.z, j.da)
    coeffs = np.zeros((m, n, n))
    worst = 0.0
    scale = max(1.0, float(np.max(np.abs(j.da))) if j.da.size else 1.0) * max(1.0, float(np.max(np.abs(j.z))) if j.z.size else 1.0)
    for k in range(m):
        for i in range(n):
            c, *_ = np.linalg.lstsq(a, v[k, :, i], rcond=None)
            coeffs[k, i] = c
            res = np.linalg.norm(a @ c - v[k, :, i])
            worst = max(worst, res / max(np.linalg.norm(v[k, :, i]), 1e-12 * scale))
    return StructureReport(float(worst), coeffs, tol, bool(worst < tol))


@dataclass
class ExpansionCoefficients:
    lam: np.ndarray     # [i', k, l]: d_{i'} a_k = sum_l lam[i',k,l] frame_l
    omega: np.ndarray   # [i', k, l]: d_{i'} z_k = sum_l omega[i',k,l] frame_l
    alpha: np.ndarray   # gamma = sum_l alpha_l frame_l
    residual: float


def expansion_coefficients(model, x, cond_cap=1e12, jet=None):
    """Expand derivatives of a, z and gamma in the frame (a_1..a_n, z_1..z_m)."""
    j = model.jet(x) if jet is None else jet
    frame = np.concatenate([j.a, j.z], axis=1)
    cond = np.linalg.cond(frame)
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularFrame(f"frame [a, z] is singular at x={np.asarray(j.x).tolist()} (cond={cond:.3e})")
    lam = np.linalg.solve(frame, np.moveaxis(j.da, 1, -1).reshape(-1, model.dim).T)
    lam = lam.T.reshape(model.dim, model.n, model.dim)
    if model.m:
        om = np.linalg.solve(frame, np.moveaxis(j.dz, 1, -1).reshape(-1, model.dim).T)
        om = om.T.reshape(model.dim, model.m, model.dim)
    else:
        om = np.zeros((model.dim, 0, model.dim))
    alpha = np.linalg.solve(frame, j.gamma)
    res = max(
        float(np.max(np.abs(np.einsum("ql,pkl->pqk", frame, lam) - j.da), initial=0.0)),
        float(np.max(np.abs(np.einsum("ql,pkl->pqk", frame, om) - j.dz), initial=0.0)),
        float(np.max(np.abs(frame @ alpha - j.gamma), initial=0.0)),
    )
    return ExpansionCoefficients(lam, om, alpha, res)


# ---------------------------------------------------------------------------
# model files

def _read_table(path, dim):
    """Tabulated field on a tensor grid: CSV with header x1..xd,value (row-major)."""
    from scipy.interpolate import RegularGridInterpolator

    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigParse(f"cannot read table ({exc})", str(path))
    header = [h.strip() for h in rows[0]]
    expected = [f"x{i + 1}" for i in range(dim)] + ["value"]
    if header != expected:
        raise ConfigParse(f"header must be {','.join(expected)}", str(path))
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], float)
    axes = [np.unique(data[:, i]) for i in range(dim)]
    shape = tuple(len(ax) for ax in axes)
    if data.shape[0] != int(np.prod(shape)):
        raise ConfigParse("table is not a full tensor grid", str(path))
    order = np.lexsort([data[:, i] for i in reversed(range(dim))])
    values = data[order, dim].reshape(shape)
    method = "quintic" if min(shape) >= 6 else "linear"
    interp = RegularGridInterpolator(axes, values, method=method)
    return lambda x: float(interp(np.asarray(x, float).reshape(1, dim))[0])


def _field(spec, dim, base, where):
    if isinstance(spec, (int, float)):
        return lambda x, c=float(spec): c
    if isinstance(spec, str):
        return _read_table(base / spec, dim)
    raise ConfigParse("field must be a number or a CSV file name", where)


def _matrix_field(spec, rows, cols, dim, base, where):
    if not isinstance(spec, list) or len(spec) != rows:
        raise ConfigParse(f"expected {rows} rows", where)
    cells = []
    for i, row in enumerate(spec):
        if not isinstance(row, list) or len(row) != cols:
            raise ConfigParse(f"expected {cols} columns", f"{where}[{i}]")
        cells.append([_field(c, dim, base, f"{where}[{i}][{k}]") for k, c in enumerate(row)])
    return lambda x: np.array([[c(x) for c in row] for row in cells], float).reshape(rows, cols)


def model_from_dict(doc, base_dir="."):
    """Build a model from the JSON document layout {family, n, m, params, domain}."""
    base = Path(base_dir)
    if not isinstance(doc, dict):
        raise ConfigParse("model document must be an object", "$")
    family = str(doc.get("family", "")).lower()
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigParse("must be an object", "$.params")
    domain = None
    if "domain" in doc:
        d = doc["domain"]
        try:
            domain = Box.make(d["lo"], d["hi"], d.get("periodic"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigParse(f"bad domain ({exc})", "$.domain")

    def need(key):
        if key not in params:
            raise ConfigParse("missing", f"$.params.{key}")
        return params[key]

    try:
        if family == "underdamped1d":
            U = _profile(need("U"), "$.params.U")
            r = params.get("r", {"kind": "constant", "value": 1.0})
            kind = r.get("kind", "constant")
            if kind == "constant":
                friction = ("constant", float(r.get("value", 1.0)))
            elif kind == "inverse_hessian":
                friction = ("inverse_hessian",)
            elif kind == "series":
                friction = ("series", _profile(r, "$.params.r"))
            else:
                raise ConfigParse(f"unknown kind {kind!r}", "$.params.r.kind")
            z = params.get("z", [1.0, 0.1])
            if len(z) != 2:
                raise ConfigParse("z must have two entries", "$.params.z")
            return UnderdampedModel(U, friction, [float(v) for v in z], domain)
        if family == "oscillator3":
            keys = ("xi", "T", "z1", "z2", "z31", "z33", "N", "eps0", "eps2")
            kw = {k: float(params[k]) for k in keys if k in params}
            if "eps" in params:
                kw["eps0"] = float(params["eps"])
            return OscillatorModel(_profile(need("V1"), "$.params.V1"),
                                   _profile(need("V2"), "$.params.V2"), domain=domain, **kw)
        if family == "diagonal":
            K = np.asarray(need("K"), float)
            pot = quadratic_potential(K, params.get("quartic"))
            diag = [_profile(d, f"$.params.diagonal[{i}]") for i, d in enumerate(need("diagonal"))]
            gamma = None
            if "skew" in params:
                gamma = skew_gamma(pot, params["skew"], float(params.get("skew_scale", 1.0)))
            return DiagonalModel(pot, diag, gamma, domain, spec=doc)
        if family == "generic":
            n, m = int(doc["n"]), int(doc["m"])
            dim = n + m
            log_pi = _field(need("log_pi"), dim, base, "$.params.log_pi")
            drift_cells = need("drift")
            if not isinstance(drift_cells, list) or len(drift_cells) != dim:
                raise ConfigParse(f"expected {dim} entries", "$.params.drift")
            drift_f = [_field(c, dim, base, f"$.params.drift[{i}]") for i, c in enumerate(drift_cells)]
            diff = _matrix_field(need("diffusion"), dim, n, dim, base, "$.params.diffusion")
            aux_spec = params.get("auxiliary", [[0.0] * m for _ in range(dim)])
            aux = _matrix_field(aux_spec, dim, m, dim, base, "$.params.auxiliary") if m else (lambda x: np.zeros((dim, 0)))
            return GenericModel(n, m, lambda x: np.array([f(x) for f in drift_f]), diff, aux, log_pi, domain)
    except ConfigParse:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigParse(str(exc), "$.params")
    raise ConfigParse(f"unknown family {family!r}", "$.family")


def load_model(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigParse(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(path))
    except OSError as exc:
        raise ConfigParse(str(exc), str(path))
    return model_from_dict(doc, path.parent)
