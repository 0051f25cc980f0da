"""Rate certificates: smallest generalized eigenvalue of (R(x), a a^T + z z^T).

Also holds the closed-form sufficient-condition checks for the scalar
kinetic model and the oscillator chain, and the blockwise Schur test.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import itertools
import math
import os

import numpy as np

from .errors import EmptyRange, SingularBlock, SingularMass
from .model import OscillatorModel, UnderdampedModel
from .tensor import assemble_generic, assemble_oscillator, assemble_underdamped


def jacobi_eigh(S, tol=1e-14, max_sweeps=100):
    """Eigenvalues (ascending) and eigenvectors of a small symmetric matrix.

    Cyclic Jacobi rotations in fixed row-major order until the off-diagonal
    Frobenius norm drops below ``tol`` times the matrix norm.
    """
    A = np.array(S, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("need a square matrix")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return np.zeros(n), V
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.triu(A, 1) ** 2) * 2.0)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * rp - s * rq, s * rp + c * rq
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * cp - s * cq, s * cp + c * cq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def inverse_sqrt(M, rel_floor=1e-12):
    w, V = jacobi_eigh(M)
    norm = max(abs(w[0]), abs(w[-1]))
    if norm == 0.0 or w[0] < rel_floor * norm:
        raise SingularMass(f"mass matrix smallest eigenvalue {w[0]:.3e} below {rel_floor:g} * |M| = {rel_floor * norm:.3e}")
    return (V / np.sqrt(w)) @ V.T


def pencil_min_eig(R, M):
    """Smallest lambda with R - lambda M singular, i.e. min eig of M^{-1/2} R M^{-1/2}."""
    S = inverse_sqrt(M)
    w, _ = jacobi_eigh(S @ np.asarray(R, float) @ S)
    return float(w[0])


# ---------------------------------------------------------------------------
# rate maps

@dataclass
class RateMap:
    grid: object
    lambda_field: np.ndarray
    lambda_inf: float
    beta: float
    z_params: object
    R_field: np.ndarray = None
    M_field: np.ndarray = None
    path: str = "generic"

    @property
    def argmin(self):
        idx = np.unravel_index(int(np.argmin(self.lambda_field)), self.lambda_field.shape)
        return self.grid.points()[idx]

    def soundness_margin(self):
        """min over grid of the smallest eigenvalue of R(x) - lambda_inf M(x)."""
        worst = math.inf
        R = self.R_field.reshape(-1, *self.R_field.shape[-2:])
        M = self.M_field.reshape(-1, *self.M_field.shape[-2:])
        for r, m in zip(R, M):
            worst = min(worst, float(jacobi_eigh(r - self.lambda_inf * m)[0][0]))
        return worst

    def to_csv(self, path):
        write_rate_csv(self, path)


def with_z(model, z):
    """Model with its auxiliary parameters replaced (None keeps them)."""
    if z is None:
        return model
    if isinstance(model, UnderdampedModel):
        return model.with_auxiliary(z)
    if isinstance(model, OscillatorModel):
        if isinstance(z, dict):
            return model.with_auxiliary(**z)
        z = list(z)
        return model.with_auxiliary(**dict(zip(("z1", "z2"), z)))
    raise ValueError(f"family {model.family!r} has no parametric auxiliary matrix")


def assembler_for(model, beta, path):
    if path == "auto":
        path = "closed" if isinstance(model, UnderdampedModel) else "generic"
    if path == "closed":
        if isinstance(model, UnderdampedModel):
            return lambda x: assemble_underdamped(model, x, beta=beta), "underdamped1d"
        if isinstance(model, OscillatorModel):
            if beta != 0.0:
                raise ValueError("the oscillator closed form is stated for beta = 0 only")
            return lambda x: assemble_oscillator(model, x), "oscillator3"
        raise ValueError(f"no closed form for family {model.family!r}")
    return lambda x: assemble_generic(model, x, beta), "generic"


def thread_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("HYPO_RATE_THREADS")
    return max(1, int(env)) if env else 1


def _rate_chunk(assembler, pts):
    out = []
    for x in pts:
        b = assembler(x)
        try:
            lam = pencil_min_eig(b.R_total, b.mass)
        except SingularMass as exc:
            raise SingularMass(f"{exc} at x={np.asarray(x).tolist()}") from None
        out.append((lam, b.R_total, b.mass))
    return out


def rate_points(model, pts, beta=0.0, path="auto", threads=None):
    """Pencil minimum eigenvalue at each row of ``pts``; returns (lam, R, M) arrays."""
    pts = np.asarray(pts, float).reshape(-1, model.dim)
    assembler, _ = assembler_for(model, beta, path)
    k = thread_count(threads)
    chunks = np.array_split(pts, k) if k > 1 else [pts]
    if k > 1:
        with ThreadPoolExecutor(k) as pool:
            parts = list(pool.map(lambda c: _rate_chunk(assembler, c), chunks))
    else:
        parts = [_rate_chunk(assembler, pts)]
    rows = [r for part in parts for r in part]          # index order regardless of k
    lam = np.array([r[0] for r in rows])
    R = np.array([r[1] for r in rows])
    M = np.array([r[2] for r in rows])
    return lam, R, M


def rate_map(model, grid, beta=0.0, z=None, path="auto", threads=None):
    """Certified rate field over a grid for fixed (beta, z)."""
    model = with_z(model, z)
    pts = grid.points().reshape(-1, grid.dim)
    lam, R, M = rate_points(model, pts, beta, path, threads)
    _, used = assembler_for(model, beta, path)
    field = lam.reshape(grid.shape)
    N = model.dim
    return RateMap(grid, field, float(field.min()), float(beta), z, R.reshape(grid.shape + (N, N)),
                   M.reshape(grid.shape + (N, N)), used)


def write_rate_csv(rmap, path):
    import csv
    pts = rmap.grid.points().reshape(-1, rmap.grid.dim)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(rmap.grid.dim)] + ["lambda"])
        for x, lam in zip(pts, rmap.lambda_field.reshape(-1)):
            w.writerow([repr(float(v)) for v in x] + [repr(float(lam))])


def read_rate_csv(path):
    """(points, lambda) arrays from a rate CSV."""
    import csv
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "lambda":
        raise ValueError(f"{path}: last column must be 'lambda'")
    data = np.array([[float(v) for v in r] for r in body if r])
    return data[:, :-1], data[:, -1]


@dataclass
class SweepResult:
    beta: float
    z: tuple
    lambda_inf: float
    rate_map: RateMap
    table: list = field(default_factory=list)


def sweep_parameters(model, grid, beta_range, z_range, points=None, path="auto", threads=None,
                     tie_tol=1e-12):
    """Exhaustive lattice sweep over (beta, z) maximizing the certified rate.

    With ``points`` given, the objective is the minimum over those points
    instead of the whole grid. Ties within ``tie_tol`` go to the smallest
    |z|, then the smallest |beta|.
    """
    betas = [float(b) for b in beta_range]
    zs = [tuple(float(v) for v in z) if z is not None else None for z in z_range]
    if not betas or not zs:
        raise EmptyRange("beta and z ranges must be non-empty")
    table = []
    for beta, z in itertools.product(betas, zs):
        m = with_z(model, z)
        if points is None:
            lam = rate_map(m, grid, beta, None, path, threads).lambda_inf
        else:
            lam = float(rate_points(m, points, beta, path, threads)[0].min())
        table.append({"beta": beta, "z": z, "lambda_inf": lam})
    best_val = max(row["lambda_inf"] for row in table)
    near = [row for row in table if row["lambda_inf"] >= best_val - tie_tol * max(1.0, abs(best_val))]
    znorm = lambda z: 0.0 if z is None else math.sqrt(sum(v * v for v in z))
    best = min(near, key=lambda row: (znorm(row["z"]), abs(row["beta"])))
    rm = rate_map(with_z(model, best["z"]), grid, best["beta"], None, path, threads)
    rm.z_params = best["z"]
    return SweepResult(best["beta"], best["z"], best["lambda_inf"], rm, table)


# ---------------------------------------------------------------------------
# sufficient conditions

@dataclass
class ConditionReport:
    family: str
    params: dict
    margins: dict

    @property
    def passed(self):
        return all(v > 0 for v in self.margins.values())

    @property
    def failed(self):
        return [k for k, v in self.margins.items() if not v > 0]

    def to_dict(self):
        return {"family": self.family, "params": self.params, "margins": self.margins,
                "verdict": "PASS" if self.passed else "FAIL", "failed": self.failed}


def check_1d_sufficient(r, lambda_lo, lambda_hi, z2, delta):
    """Margins of the constant-z sufficient conditions for the scalar kinetic model.

    The curvature bounds lambda_lo <= U'' <= lambda_hi are assumed to hold.
    """
    if not r > 0:
        raise ValueError("need r > 0")
    lo, hi = float(lambda_lo), float(lambda_hi)
    upper = (1.0 + math.sqrt(1.0 + 4.0 * r)) / 2.0
    margins = {
        "rate": 2 * r * lo - hi ** 2 - (r ** 2 - delta),
        "cross": (2 * (z2 - z2 ** 2) * lo + (4 * r ** 2 - 2 * r) * z2 + 2 * z2 ** 3 - z2 ** 4
                  - (2 * r + 1) * z2 ** 2 - delta),
        "z2_interval": min(z2, upper - z2),
    }
    params = {"r": r, "lambda_lo": lo, "lambda_hi": hi, "z2": z2, "delta": delta}
    return ConditionReport("underdamped1d", params, margins)


def check_oscillator_sufficient(lambda_lo, lambda_hi, z2, N, eps, delta1):
    """Margins of the oscillator-chain sufficient conditions (xi = T = z1 = 1)."""
    if not N > 0 or not eps > 0:
        raise ValueError("need N > 0 and eps > 0")
    lo, hi = float(lambda_lo), float(lambda_hi)
    margins = {
        "rate": 2 * lo - hi ** 2 - (1 - delta1),
        "middle": -(z2 ** 2 + N ** 2) ** 2 + 2 * (N ** 2 - z2 ** 2) * lo - hi ** 2,
        "ends": 2 * z2 + 2 * z2 ** 3 - z2 ** 4 - 3 * z2 ** 2 + 2 * (z2 - z2 ** 2) * lo - delta1,
        "z2_interval": min(z2, min((1 + math.sqrt(5)) / 2, N) - z2),
    }
    params = {"lambda_lo": lo, "lambda_hi": hi, "z2": z2, "N": N, "eps": eps, "delta1": delta1}
    return ConditionReport("oscillator3", params, margins)


@dataclass
class SchurReport:
    R1_min: float
    schur_min: float
    full_min: float
    pencil_min: float
    psd: bool
    full_psd: bool

    @property
    def agrees(self):
        return self.psd == self.full_psd


def oscillator_schur_check(bundle, tol=1e-12):
    """PSD test of [[R1, R2], [R2^T, R3]] via R1 > 0 and R3 - R2^T R1^{-1} R2 >= 0.

    The full-matrix eigenvalue and the pencil sign are reported alongside
    (by congruence they share the sign of the smallest eigenvalue).
    """
    R = np.asarray(bundle.R_total, float)
    k = R.shape[0] // 2
    R1, R2, R3 = R[:k, :k], R[:k, k:], R[k:, k:]
    scale = max(np.linalg.norm(R), 1.0)
    w1, V1 = jacobi_eigh(R1)
    if np.min(np.abs(w1)) <= tol * scale:
        raise SingularBlock(f"R1 is singular (smallest |eigenvalue| {np.min(np.abs(w1)):.3e})")
    R1inv = (V1 / w1) @ V1.T
    S = R3 - R2.T @ R1inv @ R2
    ws, _ = jacobi_eigh(S)
    wf, _ = jacobi_eigh(R)
    thr = -tol * scale
    pen = pencil_min_eig(R, bundle.mass)
    return SchurReport(float(w1[0]), float(ws[0]), float(wf[0]), pen,
                       bool(w1[0] > 0 and ws[0] >= thr), bool(wf[0] >= thr))
