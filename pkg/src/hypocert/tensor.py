"""Assembly of the modified Hessian matrix R(x) and its building blocks.

The generic assembler evaluates each bilinear block as a scalar quadratic
form in U (built from linear maps of U) and materializes it as a symmetric
matrix by polarization on basis vectors. The family assemblers implement
hand-derived closed forms for the three benchmark families; they are compared
against the generic path by :func:`closed_form_report`.
"""

from dataclasses import dataclass, field
import json

import numpy as np

from .errors import NonPositiveDiffusion, StructureConditionViolated
from .model import (DiagonalModel, OscillatorModel, UnderdampedModel, check_structure_condition,
                    diffusion_tensors, expansion_coefficients)

BLOCKS = ("R_a", "R_z", "R_pi", "R_Ia", "R_gamma_a", "R_gamma_z")


@dataclass
class HessianBundle:
    """Per-point assembly output. Linear maps of U are stored as matrices acting on U."""
    x: np.ndarray
    beta: float
    R_a: np.ndarray
    R_z: np.ndarray
    R_pi: np.ndarray
    R_Ia: np.ndarray
    R_gamma_a: np.ndarray
    R_gamma_z: np.ndarray
    Lambda1: np.ndarray      # (n*n, N), row (i, l) -> i*n + l
    Lambda2: np.ndarray      # (n*m, N), row (i, l) -> i*m + l
    D_vec: np.ndarray        # (n*n, N)
    E_vec: np.ndarray        # (n*m, N)
    Q_mat: np.ndarray        # (n*n, N*N)
    P_mat: np.ndarray        # (n*m, N*N)
    R_total: np.ndarray
    mass: np.ndarray         # a a^T + z z^T
    source: str = "generic"
    raw_asymmetry: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def correction(self):
        """-L1^T L1 - L2^T L2 + D^T D + E^T E."""
        L1, L2, D, E = self.Lambda1, self.Lambda2, self.D_vec, self.E_vec
        return -L1.T @ L1 - L2.T @ L2 + D.T @ D + E.T @ E

    def quadratic_form(self, U):
        U = np.asarray(U, float)
        return np.einsum("...i,ij,...j->...", U, self.R_total, U)

    def to_record(self):
        from .certificate import jacobi_eigh
        w, _ = jacobi_eigh(self.R_total)
        blocks = {k: getattr(self, k).tolist() for k in BLOCKS}
        blocks["Lambda_correction"] = self.correction.tolist()
        return {"x": np.asarray(self.x).tolist(), "beta": self.beta, "source": self.source,
                "blocks": blocks, "R_total": self.R_total.tolist(),
                "mass": self.mass.tolist(), "eigvals": w.tolist()}


def symmetrize(R):
    return 0.5 * (R + R.T)


def polarize(qform, dim):
    """Symmetric matrix of a quadratic form given as a callable on a batch of vectors."""
    eye = np.eye(dim)
    diag = qform(eye)
    iu, ju = np.triu_indices(dim, 1)
    out = np.diag(diag)
    if len(iu):
        plus = qform(eye[iu] + eye[ju])
        off = 0.5 * (plus - diag[iu] - diag[ju])
        out[iu, ju] = off
        out[ju, iu] = off
    return out


def _outer_form(left, right):
    """Quadratic form sum_j left[j](U) right[j](U) as a callable; maps are (..., N)."""
    L = left.reshape(-1, left.shape[-1])
    Rm = right.reshape(-1, right.shape[-1])
    return lambda U: np.einsum("bs,js,bt,jt->b", U, L, U, Rm)


def _sum_forms(*forms):
    return lambda U: sum(f(U) for f in forms)


def _scaled(form, c):
    return lambda U: c * form(U)


def kron_maps(a, z):
    """Q = a^T (x) a^T and P = a^T (x) z^T acting on the row-major vectorized Hessian."""
    N, n = a.shape
    Q = np.einsum("pi,rk->ikpr", a, a).reshape(n * n, N * N)
    P = np.einsum("pi,rk->ikpr", a, z).reshape(n * z.shape[1], N * N)
    return Q, P


class _Pieces:
    """Linear maps of U and other per-point tensors shared by the block formulas."""

    def __init__(self, jet):
        a, da, d2a = jet.a, jet.da, jet.d2a
        z, dz, d2z = jet.z, jet.dz, jet.d2z
        g, Hl = jet.grad_log_pi, jet.hess_log_pi
        self.a, self.z = a, z
        self.N, self.n = a.shape
        self.m = z.shape[1]
        self.gamma, self.dgamma = jet.gamma, jet.dgamma
        A, dA, d2A = diffusion_tensors(a, da, d2a)
        B, dB = diffusion_tensors(z, dz)
        self.A, self.dA, self.B, self.dB = A, dA, B, dB
        self.g = g
        # linear maps: last axis contracts with U
        self.wa = a.T                                   # [i, s] a_i . U
        self.wz = z.T
        self.Wa = np.transpose(da, (0, 2, 1))           # [p, i, s] d_p (a_i . U)
        self.Wz = np.transpose(dz, (0, 2, 1))
        self.W2a = np.transpose(d2a, (0, 1, 3, 2))      # [p, r, i, s]
        self.W2z = np.transpose(d2z, (0, 1, 3, 2))
        self.diva = np.einsum("ppi->i", da)
        self.divz = np.einsum("ppk->k", dz)
        self.ddiva = np.einsum("rppi->ri", d2a)         # [r, i] d_r div a_i
        self.Ag = A @ g
        self.dAg = np.einsum("rqs,s->rq", dA, g) + np.einsum("qs,sr->rq", A, Hl)
        # directional derivatives of columns: [k, i, q] = ((v_k . grad) a_i)_q
        self.aa = np.einsum("pk,pqi->kiq", a, da)
        self.za = np.einsum("pk,pqi->kiq", z, da)
        self.az = np.einsum("pk,pqi->kiq", a, dz)
        self.zz = np.einsum("pk,pqi->kiq", z, dz)
        # [k, i, s]: (v_k . grad)(a_i . U) etc.
        self.Daa = np.einsum("pk,pis->kis", a, self.Wa)
        self.Dza = np.einsum("pk,pis->kis", z, self.Wa)
        self.Daz = np.einsum("pk,pis->kis", a, self.Wz)
        self.Dzz = np.einsum("pk,pis->kis", z, self.Wz)


def _block_R_a(P):
    a = P.a
    c = np.einsum("iiq->iq", P.aa).sum(axis=0)      # sum_i (a_i . grad) a_i
    left = []
    right = []
    # sum_i c_i . grad(a_k U) (a_k U)
    left.append(np.einsum("p,pks->ks", c, P.Wa)); right.append(P.wa)
    # sum_i a_i a_i : grad^2 (a_k U) (a_k U)
    left.append(np.einsum("pr,prks->ks", P.A, P.W2a)); right.append(P.wa)
    # - sum_{i,k} ((a_k . grad) a_i) . grad(a_i U) (a_k U)
    t3a = -np.einsum("kiq,qis->ks", P.aa, P.Wa); left.append(t3a); right.append(P.wa)
    # - sum_{i,k} a_k a_i : grad^2 (a_i U) (a_k U)
    t3b = -np.einsum("pk,ri,pris->ks", a, a, P.W2a); left.append(t3b); right.append(P.wa)
    # sum_i [Ag . grad(a_i U) - (a_i . grad(Ag)) . U] (a_i U)
    t5 = np.einsum("p,pis->is", P.Ag, P.Wa) - np.einsum("ri,rs->is", a, P.dAg)
    left.append(t5); right.append(P.wa)
    # sum_i div a_i sum_k [(a_i . grad)(a_k U) - (a_k . grad)(a_i U)] (a_k U)
    t6 = np.einsum("i,iks->ks", P.diva, P.Daa) - np.einsum("i,kis->ks", P.diva, P.Daa)
    left.append(t6); right.append(P.wa)
    # - sum_{i,k} (a_k . grad div a_i)(a_i U)(a_k U)
    coef = np.einsum("rk,ri->ki", a, P.ddiva)
    t7 = -np.einsum("ki,is->ks", coef, P.wa); left.append(t7); right.append(P.wa)
    return _sum_forms(*(_outer_form(l, r) for l, r in zip(left, right)))


def _block_R_z(P):
    a = P.a
    c = np.einsum("iiq->iq", P.aa).sum(axis=0)
    left, right = [], []
    left.append(np.einsum("p,pks->ks", c, P.Wz)); right.append(P.wz)
    left.append(np.einsum("pr,prks->ks", P.A, P.W2z)); right.append(P.wz)
    # - sum_{i,k} ((z_k . grad) a_i) . grad(a_i U) (z_k U)
    left.append(-np.einsum("kiq,qis->ks", P.za, P.Wa)); right.append(P.wz)
    # - sum_{i,k} z_k a_i : grad^2 (a_i U) (z_k U)
    left.append(-np.einsum("pk,ri,pris->ks", P.z, a, P.W2a)); right.append(P.wz)
    left.append(np.einsum("p,pks->ks", P.Ag, P.Wz) - np.einsum("rk,rs->ks", P.z, P.dAg))
    right.append(P.wz)
    # sum_i div a_i sum_k [(a_i . grad)(z_k U) - (z_k . grad)(a_i U)] (z_k U)
    left.append(np.einsum("i,iks->ks", P.diva, P.Daz) - np.einsum("i,kis->ks", P.diva, P.Dza))
    right.append(P.wz)
    # - sum_{i,k} (z_k . grad div a_i)(a_i U)(z_k U)
    coef = np.einsum("rk,ri->ki", P.z, P.ddiva)
    left.append(-np.einsum("ki,is->ks", coef, P.wa)); right.append(P.wz)
    return _sum_forms(*(_outer_form(l, r) for l, r in zip(left, right)))


def _block_R_pi(P):
    zg = P.z.T @ P.g
    ag = P.a.T @ P.g
    forms = []
    # first half: z directions acting on a_i U
    vv = np.einsum("kkq->kq", P.zz)     # (z_k . grad) z_k
    l1 = (np.einsum("k,kis->is", P.divz, P.Dza)
          + np.einsum("kq,qis->is", vv, P.Wa)
          + np.einsum("pk,rk,pris->is", P.z, P.z, P.W2a)
          + np.einsum("k,kis->is", zg, P.Dza))
    forms.append(_scaled(_outer_form(l1, P.wa), 2.0))
    forms.append(_scaled(_outer_form(P.Dza, P.Dza), 2.0))
    # second half: a directions acting on z_j U
    uu = np.einsum("kkq->kq", P.aa)     # (a_l . grad) a_l
    l2 = (np.einsum("l,ljs->js", P.diva, P.Daz)
          + np.einsum("lq,qjs->js", uu, P.Wz)
          + np.einsum("pl,rl,prjs->js", P.a, P.a, P.W2z)
          + np.einsum("l,ljs->js", ag, P.Daz))
    forms.append(_scaled(_outer_form(l2, P.wz), -2.0))
    forms.append(_scaled(_outer_form(P.Daz, P.Daz), -2.0))
    return _sum_forms(*forms)


def _block_R_Ia(P):
    gam = P.gamma[None, :]
    bracket = (np.einsum("i,is->s", P.diva, P.wa)
               + np.einsum("iis->s", P.Daa)
               + P.Ag)[None, :]
    first = _outer_form(gam, bracket)
    second = _outer_form(-np.einsum("p,pis->is", P.gamma, P.Wa), P.wa)
    return _sum_forms(first, second)


def _gamma_block(P, C, dC):
    """(1/2) sum_k gamma_k U.d_k C.U - (grad gamma U).(C U) as a symmetric matrix."""
    M = 0.5 * np.einsum("k,kij->ij", P.gamma, dC) - P.dgamma.T @ C
    return symmetrize(M)


def _coefficient_maps(P, coeffs, beta):
    """Linear maps Lambda1, Lambda2, D, E (rows indexed (i, l) row-major)."""
    a, z, n, m, N = P.a, P.z, P.n, P.m, P.N
    lam, om, alpha = coeffs.lam, coeffs.omega, coeffs.alpha
    a_lam = np.einsum("pi,pkl->ikl", a, lam)      # sum_i' a_{i' i} lam[i', k, l]
    z_lam = np.einsum("pk,pil->kil", z, lam)      # sum_k' z_{k' k} lam[k', i, l]
    a_om = np.einsum("pi,pkl->ikl", a, om)
    D = P.Daa.reshape(n * n, N)       # D[i, k] = (a_i.grad)(a_k U)
    E = P.Daz.reshape(n * m, N)                                 # E[i, k] = (a_i.grad)(z_k U)
    L1 = np.zeros((n, n, N))
    for l in range(n):
        L1[:, l] += np.einsum("ik,sk->is", a_lam[:, :, l] - a_lam[:, :, l].T, a)
        if m:
            L1[:, l] += np.einsum("ik,sk->is", a_om[:, :, l] - z_lam[:, :, l].T, z)
            L1[:, l] -= np.einsum("ik,sk->is", a_om[:, :, l], z)
        L1[:, l] -= 0.5 * beta * alpha[l] * a.T
        L1[l, l] += 0.5 * beta * P.gamma
    L1 = L1 + P.Daa
    L2 = np.zeros((n, m, N))
    for l in range(m):
        L = n + l
        L2[:, l] += np.einsum("ik,sk->is", a_lam[:, :, L] - a_lam[:, :, L].T, a)
        L2[:, l] += np.einsum("ik,sk->is", a_om[:, :, L] - z_lam[:, :, L].T, z)
        # sum_k sum_k' z_{k' l} lam[k', k, i] (a_k U)
        L2[:, l] += np.einsum("ki,sk->is", z_lam[l, :, :n], a)
        L2[:, l] += P.Dza[l]
        L2[:, l] -= np.einsum("ik,sk->is", a_om[:, :, L], z)
        L2[:, l] -= P.Daz[:, l]
        L2[:, l] -= 0.5 * beta * alpha[L] * a.T
    L2 = L2 + P.Daz
    return L1.reshape(n * n, N), L2.reshape(n * m, N), D, E


def assemble_generic(model, x, beta=0.0, structure_tol=1e-8, jet=None, check_structure=True):
    """Assemble every block of R(x) from the model jet."""
    j = model.jet(np.asarray(x, float)) if jet is None else jet
    N = model.dim
    if check_structure and model.m:
        rep = check_structure_condition(model, j.x, structure_tol, jet=j)
        if not rep.passed:
            raise StructureConditionViolated(
                f"(z . grad) a leaves span(a) at x={np.asarray(j.x).tolist()} (residual {rep.residual:.3e})",
                point=j.x, residual=rep.residual)
    coeffs = expansion_coefficients(model, j.x, jet=j)
    P = _Pieces(j)
    R_a = polarize(_block_R_a(P), N)
    R_z = polarize(_block_R_z(P), N) if model.m else np.zeros((N, N))
    R_pi = polarize(_block_R_pi(P), N) if model.m else np.zeros((N, N))
    R_Ia = polarize(_block_R_Ia(P), N)
    R_ga = _gamma_block(P, P.A, P.dA)
    R_gz = _gamma_block(P, P.B, P.dB) if model.m else np.zeros((N, N))
    L1, L2, D, E = _coefficient_maps(P, coeffs, beta)
    Q, Pm = kron_maps(P.a, P.z)
    raw = (R_a + R_z + R_pi - L1.T @ L1 - L2.T @ L2 + D.T @ D + E.T @ E
           + beta * R_Ia + (1.0 - beta) * R_ga + R_gz)
    scale = max(np.linalg.norm(raw), 1e-300)
    asym = float(np.linalg.norm(raw - raw.T) / scale)
    return HessianBundle(np.asarray(j.x, float), float(beta), R_a, R_z, R_pi, R_Ia, R_ga, R_gz,
                         L1, L2, D, E, Q, Pm, symmetrize(raw), P.A + P.B, "generic", asym,
                         {"coefficients": coeffs})


def eval_blocks_on(bundle, U):
    """Term-by-term scalar value of R(U, U) from the stored blocks and linear maps."""
    U = np.asarray(U, float)
    q = lambda M: np.einsum("...i,ij,...j->...", U, M, U)
    lin = lambda M: np.einsum("ij,...j->...i", M, U)
    sq = lambda v: np.sum(v * v, axis=-1)
    b = bundle.beta
    return (q(bundle.R_a) + q(bundle.R_z) + q(bundle.R_pi)
            - sq(lin(bundle.Lambda1)) - sq(lin(bundle.Lambda2))
            + sq(lin(bundle.D_vec)) + sq(lin(bundle.E_vec))
            + b * q(bundle.R_Ia) + (1.0 - b) * q(bundle.R_gamma_a) + q(bundle.R_gamma_z))


# ---------------------------------------------------------------------------
# closed forms

def _empty_maps(N, n, m):
    return np.zeros((n * n, N)), np.zeros((n * m, N))


def assemble_diagonal(model, x, beta=0.0, summary_variant=False):
    """Closed form for a = diag(a_ii(x_i)), m = 0.

    ``summary_variant`` swaps the first diagonal term of R_a to the one-line
    scalar summary (a^3 a' V'' instead of a^3 a' V'); it only matters for
    comparison reports.
    """
    if not isinstance(model, DiagonalModel):
        raise TypeError("assemble_diagonal needs a DiagonalModel")
    x = np.asarray(x, float)
    n = model.n
    a, a1, a2 = model._diag_values(x)
    if np.any(a <= 0):
        raise NonPositiveDiffusion(f"a_ii <= 0 at x={x.tolist()}")
    gV = np.asarray(model.gradV(x), float)
    hV = np.asarray(model.hessV(x), float)
    if model.gamma_fn is None:
        gam, dgam = np.zeros(n), np.zeros((n, n))
    else:
        gam = np.asarray(model.gamma_fn[0](x), float)
        dgam = np.asarray(model.gamma_fn[1](x), float)
    R_a = np.zeros((n, n))
    R_I = np.zeros((n, n))
    R_g = np.zeros((n, n))
    first = np.diag(hV) if summary_variant else gV
    for i in range(n):
        R_a[i, i] = a[i] ** 3 * a1[i] * first[i] + a[i] ** 4 * hV[i, i] - a[i] ** 3 * a2[i]
        R_I[i, i] = gam[i] * (a[i] * a1[i] - a[i] ** 2 * gV[i])
        R_g[i, i] = gam[i] * a[i] * a1[i] - dgam[i, i] * a[i] ** 2
        for j in range(n):
            if j == i:
                continue
            R_a[i, j] = a[i] ** 2 * a[j] ** 2 * hV[i, j]
            R_I[i, j] = 0.5 * (gam[j] * (2 * a[i] * a1[i] - a[i] ** 2 * gV[i])
                               + gam[i] * (2 * a[j] * a1[j] - a[j] ** 2 * gV[j]))
            R_g[i, j] = -0.5 * (dgam[i, j] * a[j] ** 2 + dgam[j, i] * a[i] ** 2)
    zero = np.zeros((n, n))
    L1, L2 = _empty_maps(n, n, 0)
    Q, P = kron_maps(np.diag(a), np.zeros((n, 0)))
    total = R_a + beta * R_I + (1.0 - beta) * R_g
    return HessianBundle(x, float(beta), R_a, zero, zero, R_I, R_g, zero, L1, L2, L1.copy(), L2.copy(),
                         Q, P, symmetrize(total), np.diag(a ** 2), "diagonal", 0.0)


def underdamped_K(s, s1, gamma1, z, beta):
    """The 2x2 matrix K of the underdamped closed form (top-left entry zero)."""
    z1, z2 = z
    return np.array([
        [0.0, 2 * z1 ** 2 * s1 * s - 0.5 * beta * gamma1 * s ** 2],
        [-z1 ** 2 * s1 * s + 0.5 * beta * gamma1 * s ** 2, z1 * z2 * s1 * s],
    ])


def assemble_underdamped(model, x, v=None, beta=0.0, z=None):
    """Closed-form 2x2 R for the underdamped family with constant z.

    ``x`` may be the scalar position (with ``v`` given) or the state (x, v).
    """
    if not isinstance(model, UnderdampedModel):
        raise TypeError("assemble_underdamped needs an UnderdampedModel")
    if v is None:
        xs, vs = (float(c) for c in np.asarray(x, float).reshape(2))
    else:
        xs, vs = float(x), float(v)
    z = model.z if z is None else np.asarray(z, float).reshape(2)
    s, s1, s2 = (float(c) for c in model.sqrt_friction(np.array(xs)))
    u1, u2 = float(model.U(xs, 1)), float(model.U(xs, 2))
    dlogpi_v, d2logpi_vv = -vs, -1.0
    g = np.array([-u1, -vs])
    gamma = np.array([-vs, u1])
    dgamma = np.array([[0.0, u2], [-1.0, 0.0]])
    A = np.array([[0.0, 0.0], [0.0, s * s]])
    dA_x = np.array([[0.0, 0.0], [0.0, 2 * s * s1]])
    zz = np.outer(z, z)
    e2 = np.array([0.0, 1.0])

    R_a = np.array([[0.0, 0.0], [0.0, -d2logpi_vv * s ** 4]])
    # c = -z . grad (s^2 d_v log pi)
    c = -(z[0] * 2 * s * s1 * dlogpi_v + z[1] * s * s * d2logpi_vv)
    R_z = 0.5 * (np.outer(e2 * c, z) + np.outer(z, e2 * c))
    C_pi = 2.0 * (z[0] ** 2 * s2 * s + (z[0] * s1) ** 2 + (z @ g) * (z[0] * s1 * s))
    R_pi = np.array([[0.0, 0.0], [0.0, C_pi]])
    Ag = A @ g
    R_I = 0.5 * (np.outer(gamma, Ag) + np.outer(Ag, gamma)) - np.array([[0.0, 0.0], [0.0, gamma[0] * s1 * s]])
    R_ga = 0.5 * gamma[0] * dA_x - 0.5 * (dgamma.T @ A + A @ dgamma)
    R_gz = -0.5 * (dgamma.T @ zz + zz @ dgamma)
    M = A + zz
    K = underdamped_K(s, s1, gamma[0], z, beta)
    # K vanishes identically when z = 0 and beta = 0, where M is singular
    MinvK = np.zeros_like(K) if not np.any(K) else np.linalg.solve(M, K)
    M_Lambda = K.T @ MinvK / s ** 2
    # Lambda = (0, 0, L3, L4) with (L3, L4) = M^{-1} K U / s^2; Q Lambda and P Lambda
    L1 = MinvK[1:2] * 1.0
    L2 = (z @ MinvK)[None, :] / s
    zero4 = np.zeros((1, 2))
    Q, P = kron_maps(np.array([[0.0], [s]]), z.reshape(2, 1))
    total = R_a + R_z + R_pi - M_Lambda + beta * R_I + (1.0 - beta) * R_ga + R_gz
    return HessianBundle(np.array([xs, vs]), float(beta), R_a, symmetrize(R_z), R_pi, symmetrize(R_I),
                         symmetrize(R_ga), symmetrize(R_gz), L1, L2, zero4, zero4.copy(), Q, P,
                         symmetrize(total), M, "underdamped1d", 0.0,
                         {"K": K, "M_Lambda": symmetrize(M_Lambda)})


def assemble_oscillator(model, state, params=None):
    """Closed-form 6x6 block matrix [[R1, R2], [R2, R3]] for the oscillator chain (beta = 0).

    ``params`` may override z1, z2, z31, z33, N, eps0, eps2 of the model.
    """
    if not isinstance(model, OscillatorModel):
        raise TypeError("assemble_oscillator needs an OscillatorModel")
    if params:
        model = model.with_auxiliary(**params)
    x = np.asarray(state, float).reshape(6)
    q, p = x[:3], x[3:]
    _, L = model.hamiltonian_parts(q)
    xi, T = model.xi, model.T
    z1, z2 = model.z1, model.z2
    z32 = model.z32(p[0], p[2])
    d0, d2 = -model.eps0 * p[0], -model.eps2 * p[2]          # d z32 / d p0, d p2
    dd0, dd2 = -model.eps0, -model.eps2
    lp0, lp2 = -p[0] / T, -p[2] / T                           # d log pi / d p0, d p2
    S1 = xi * T * dd0 + xi * T * dd2 + xi * T * lp0 * d0 + xi * T * lp2 * d2
    z3 = np.array([model.z31, z32, model.z33])
    z3S = np.array([model.z31 * xi, S1, model.z33 * xi])
    IO = np.diag([1.0, 0.0, 1.0])
    I3 = np.eye(3)
    Ipi = np.zeros((3, 3))
    Ipi[1, 1] = -2 * z32 * S1 - 2 * xi * T * (d0 ** 2 + d2 ** 2)
    R1 = z1 * z2 * I3
    R2 = 0.5 * (z1 * z2 * xi + xi * T) * IO + 0.5 * (z2 ** 2 * I3 + np.outer(z3, z3) - z1 ** 2 * L)
    R3 = ((xi * T) ** 2 + z2 ** 2 * xi) * IO - z1 * z2 * L + 0.5 * (np.outer(z3S, z3) + np.outer(z3, z3S)) + Ipi
    R = np.block([[R1, R2], [R2, R3]])
    j = model.jet(x)
    A, _ = diffusion_tensors(j.a, j.da)
    B, _ = diffusion_tensors(j.z, j.dz)
    zero = np.zeros((6, 6))
    L1, L2 = _empty_maps(6, 2, 4)
    Q, P = kron_maps(j.a, j.z)
    bundle = HessianBundle(x, 0.0, zero, zero, zero, zero, zero, zero, L1, L2, L1.copy(), L2.copy(),
                           Q, P, symmetrize(R), A + B, "oscillator3", 0.0,
                           {"R1": R1, "R2": R2, "R3": R3, "S1": S1})
    return bundle


def assemble(model, x, beta=0.0, prefer_closed_form=True):
    """Closed-form path when the family has one (and beta is supported), else generic."""
    if prefer_closed_form:
        if isinstance(model, UnderdampedModel):
            return assemble_underdamped(model, x, beta=beta)
        if isinstance(model, DiagonalModel):
            return assemble_diagonal(model, x, beta)
        if isinstance(model, OscillatorModel) and beta == 0.0:
            return assemble_oscillator(model, x)
    return assemble_generic(model, x, beta)


# ---------------------------------------------------------------------------
# closed-form diagnostics

def _rel(Ac, Bg, floor=1e-12):
    return float(np.linalg.norm(Ac - Bg) / max(np.linalg.norm(Bg), np.linalg.norm(Ac), floor))


def closed_form_report(model, x, beta=0.0, tol=1e-8):
    """Compare a closed-form assembly with the generic one, block by block.

    Returns a dict with per-block relative Frobenius discrepancies, the total
    discrepancy and the list of blocks above ``tol``.
    """
    x = np.asarray(x, float)
    gen = assemble_generic(model, x, beta)
    if isinstance(model, OscillatorModel):
        cf = assemble_oscillator(model, x)
        if beta != 0.0:
            raise ValueError("the oscillator closed form is stated for beta = 0 only")
        blocks = {}
    else:
        cf = assemble(model, x, beta)
        # blocks that vanish identically are judged against the size of the whole tensor
        floor = 1e-6 * max(np.linalg.norm(gen.R_total), 1.0)
        blocks = {k: _rel(getattr(cf, k), getattr(gen, k), floor) for k in BLOCKS}
        cf_corr = -cf.extras["M_Lambda"] if "M_Lambda" in cf.extras else cf.correction
        blocks["Lambda_correction"] = _rel(cf_corr, gen.correction, floor)
    total = _rel(cf.R_total, gen.R_total)
    flagged = sorted(k for k, v in blocks.items() if v > tol)
    if total > tol:
        flagged.append("R_total")
    out = {"family": model.family, "x": x.tolist(), "beta": beta, "blocks": blocks,
           "total": total, "flagged": flagged, "agrees": total <= tol}
    if isinstance(model, DiagonalModel):
        alt = assemble_diagonal(model, x, beta, summary_variant=True)
        out["summary_variant_R_a"] = _rel(alt.R_a, gen.R_a)
    return out


def dump_tensor_records(bundles, path):
    with open(path, "w") as fh:
        json.dump([b.to_record() for b in bundles], fh, indent=1)
