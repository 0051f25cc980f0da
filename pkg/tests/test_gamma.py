import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hypocert import (DiagonalModel, NonPositiveDensity, PowerSeries, StencilOutOfDomain, assemble_generic,
                      eval_gamma_operators, fisher_dissipation_rhs, rate_map, verify_bochner)
from hypocert.fpe import compute_functionals
from hypocert.gamma_calculus import GridFunction, bochner_integrals, gamma_operators_from_jets
from hypocert.grid import DensityField, Grid, equilibrium
from hypocert.model import quadratic_potential
from models import const_model, diagonal_model, oscillator_model, series_model, variable_model

RNG = np.random.default_rng(7)


def _sym3(T):
    perms = [(0, 1, 2), (1, 0, 2), (1, 2, 0), (2, 1, 0), (0, 2, 1), (2, 0, 1)]
    return sum(np.transpose(T, p) for p in perms) / 6.0


def _gaussian_1d():
    return DiagonalModel(quadratic_potential([[1.0]]), [PowerSeries([(1.0, 0)])])


def _perturbed_gaussian(grid, amp=0.1):
    P = grid.points()
    pi = np.exp(-0.5 * np.sum(P ** 2, -1))
    return DensityField(grid, pi * (1 + amp * np.sin(P[..., 0]) * np.sin(P[..., 1]))).normalized()


def _bump_density(model, grid, seed, amp=0.2):
    # perturbation vanishes with its derivatives at the box edge, so no boundary flux
    P = grid.points()
    s = (P - np.asarray(grid.lo)) / (np.asarray(grid.hi) - np.asarray(grid.lo))
    c = np.random.default_rng(seed).normal(size=3)
    bump = np.prod(np.sin(np.pi * s) ** 4, -1)
    phi = bump * np.sin(2 * np.pi * s[..., 0] + c[1]) * np.cos(np.pi * c[2] * s[..., 1]) * c[0]
    return DensityField(grid, np.exp(model.log_pi(P)) * (1 + amp * phi)).normalized()


# ---------------------------------------------------------------------------
# pointwise operators

def test_linear_function_under_gaussian_gives_unit_gamma2():
    v = eval_gamma_operators(_gaussian_1d(), lambda x: x[0], [0.4])
    assert v.gamma2_tilde == pytest.approx(1.0, abs=1e-6)
    assert v.gamma1 == pytest.approx(1.0, abs=1e-8)


def test_constant_fields_have_no_divergence_correction():
    m = const_model((0.7, 0.4))
    for x in RNG.normal(size=(5, 2)):
        U, X = RNG.normal(size=2), RNG.normal(size=(2, 2))
        v = eval_gamma_operators(m, (U, X + X.T, _sym3(RNG.normal(size=(2, 2, 2)))), x)
        assert v.div_correction == 0.0


def test_no_auxiliary_and_reversible_terms_vanish():
    m = diagonal_model(2, with_gamma=False)
    for x in RNG.uniform(-1, 1, size=(5, 2)):
        X = RNG.normal(size=(2, 2))
        v = eval_gamma_operators(m, (RNG.normal(size=2), X + X.T, _sym3(RNG.normal(size=(2, 2, 2)))), x, beta=0.5)
        assert v.gamma2_z_pi == 0.0 and v.gamma_irrev == 0.0 and v.gamma1_z == 0.0


def _fd_gamma2_oracle(model, f, y, h):
    """Gamma~_2(f, f) = L~Gamma_1(f, f)/2 - Gamma_1(L~f, f) with plain central differences."""
    def A(p):
        a = model.jet(np.asarray(p, float)).a
        return a @ a.T

    def grad(u, p):
        p = np.asarray(p, float)
        out = np.empty(len(p))
        for k in range(len(p)):
            e = np.zeros(len(p))
            e[k] = h
            out[k] = (u(p + e) - u(p - e)) / (2 * h)
        return out

    def Lt(u, p):
        p = np.asarray(p, float)
        div = 0.0
        for k in range(len(p)):
            e = np.zeros(len(p))
            e[k] = h
            div += ((A(p + e) @ grad(u, p + e))[k] - (A(p - e) @ grad(u, p - e))[k]) / (2 * h)
        g = model.jet(p).grad_log_pi
        return div + (A(p) @ g) @ grad(u, p)

    g1 = lambda p: grad(f, p) @ A(p) @ grad(f, p)
    Lf = lambda p: Lt(f, p)
    return 0.5 * Lt(g1, y) - grad(Lf, y) @ A(y) @ grad(f, y)


def test_gamma2_matches_stencil_oracle_variable_friction():
    m = variable_model()
    f = lambda p: p[0] + p[1] ** 2
    for y in RNG.uniform([0.6, -1.0], [1.4, 1.0], size=(10, 2)):
        v = eval_gamma_operators(m, ([1.0, 2 * y[1]], [[0, 0], [0, 2.0]], np.zeros((2, 2, 2))), y)
        assert _fd_gamma2_oracle(m, f, y, 1e-2) == pytest.approx(float(v.gamma2_tilde), rel=1e-9)


def test_gamma2_oracle_refinement_perturbed_function():
    m = variable_model()
    # the generator only differentiates along v, so the perturbation must be non-polynomial in v
    f = lambda p: p[0] + p[1] ** 2 + 0.2 * p[0] * np.sin(p[1])
    for x, w in RNG.uniform([0.6, -1.0], [1.4, 1.0], size=(10, 2)):
        T = np.zeros((2, 2, 2))
        T[0, 1, 1] = T[1, 0, 1] = T[1, 1, 0] = -0.2 * np.sin(w)
        T[1, 1, 1] = -0.2 * x * np.cos(w)
        jet = ([1 + 0.2 * np.sin(w), 2 * w + 0.2 * x * np.cos(w)],
               [[0.0, 0.2 * np.cos(w)], [0.2 * np.cos(w), 2.0 - 0.2 * x * np.sin(w)]], T)
        exact = float(eval_gamma_operators(m, jet, [x, w]).gamma2_tilde)
        coarse = _fd_gamma2_oracle(m, f, [x, w], 4e-2)
        fine = _fd_gamma2_oracle(m, f, [x, w], 2e-2)
        assert abs(fine - exact) < 0.3 * abs(coarse - exact)
        assert (4 * fine - coarse) / 3 == pytest.approx(exact, rel=1e-6)


def test_stencil_jets_match_analytic_jets():
    m = series_model()
    f = lambda p: np.sin(p[0]) * p[1] + 0.3 * p[1] ** 3
    y = np.array([0.3, -0.5])
    U = [np.cos(y[0]) * y[1], np.sin(y[0]) + 0.9 * y[1] ** 2]
    X = [[-np.sin(y[0]) * y[1], np.cos(y[0])], [np.cos(y[0]), 1.8 * y[1]]]
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = -np.cos(y[0]) * y[1]
    T[0, 0, 1] = T[0, 1, 0] = T[1, 0, 0] = -np.sin(y[0])
    T[1, 1, 1] = 1.8
    exact = eval_gamma_operators(m, (U, X, T), y)
    approx = eval_gamma_operators(m, f, y)
    assert approx.gamma2_tilde == pytest.approx(float(exact.gamma2_tilde), rel=1e-5)
    assert approx.gamma2_z_pi == pytest.approx(float(exact.gamma2_z_pi), rel=1e-5)


def test_grid_function_interior_only():
    g = Grid.make((-1, -1), (1, 1), 21)
    P = g.points()
    gf = GridFunction(g, P[..., 0] + P[..., 1] ** 2)
    v = eval_gamma_operators(const_model(), gf, g.points()[10, 7])
    ref = eval_gamma_operators(const_model(), ([1.0, 2 * P[10, 7, 1]], [[0, 0], [0, 2.0]], np.zeros((2, 2, 2))),
                               P[10, 7])
    assert v.gamma2_tilde == pytest.approx(float(ref.gamma2_tilde), rel=1e-9)
    with pytest.raises(StencilOutOfDomain):
        eval_gamma_operators(const_model(), gf, P[1, 7])
    with pytest.raises(StencilOutOfDomain):
        eval_gamma_operators(const_model(), gf, P[10, 7] + 0.01)


_FAMILIES = {
    "variable": (variable_model, ([0.5, -2], [1.5, 2])),
    "series": (series_model, ([-2, -2], [2, 2])),
    "diagonal": (lambda: diagonal_model(2), ([-2, -2], [2, 2])),
    "oscillator": (lambda: oscillator_model(z31=0.3, z33=0.2, eps0=0.1, eps2=0.05), ([-2] * 6, [2] * 6)),
}
_MODELS = {k: f() for k, (f, _) in _FAMILIES.items()}


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(_FAMILIES)), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
def test_pointwise_decomposition_identity(name, beta, seed):
    # the a-part of the irreversible operator enters with weight beta; R_gamma terms carry the rest
    rng = np.random.default_rng(seed)
    m = _MODELS[name]
    lo, hi = map(np.asarray, _FAMILIES[name][1])
    x = rng.uniform(lo, hi)
    d = len(x)
    U = rng.normal(size=d)
    X = rng.normal(size=(d, d))
    X = X + X.T
    T = _sym3(rng.normal(size=(d, d, d)))
    b = assemble_generic(m, x, beta)
    v = gamma_operators_from_jets(m.jet(x), U, X, T, beta, b.Lambda1, b.Lambda2, b.Q_mat, b.P_mat)
    lhs = v.gamma2_tilde + v.gamma2_z_pi + beta * v.gamma_irrev_a
    rhs = v.hess_beta_sq + U @ b.R_total @ U - (1 - beta) * U @ b.R_gamma_a @ U - U @ b.R_gamma_z @ U
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9 * (1 + abs(v.hess_beta_sq)))
    assert v.gamma1 >= 0 and v.gamma1_z >= 0 and v.hess_beta_sq >= 0


# ---------------------------------------------------------------------------
# weak-form identity

def test_bochner_perturbed_gaussian_passes():
    rep = verify_bochner(const_model(), _perturbed_gaussian(Grid.make((-4, -4), (4, 4), 64)))
    assert rep.passed and rep.residual < 1e-3
    assert rep.grid_shape == (64, 64)


def test_bochner_at_equilibrium_is_zero():
    m = const_model()
    rep = verify_bochner(m, equilibrium(m, Grid.make((-4, -4), (4, 4), 32)), beta=0.2)
    assert abs(rep.lhs) < 1e-20 and abs(rep.rhs) < 1e-20


def test_bochner_rejects_nonpositive_density():
    g = Grid.make((-2, -2), (2, 2), 16)
    vals = np.ones(g.shape)
    vals[3, 3] = 0.0
    with pytest.raises(NonPositiveDensity):
        verify_bochner(const_model(), DensityField(g, vals))


def test_bochner_refinement_on_wider_box():
    # on [-4, 4]^2 the truncated Gaussian tail sets a floor near 4e-10; six units out it does not
    res = []
    for n in (64, 128):
        lhs, rhs, _ = bochner_integrals(const_model(), _perturbed_gaussian(Grid.make((-6, -6), (6, 6), n)))
        res.append(abs(lhs - rhs))
    assert res[0] / res[1] >= 4.0


@pytest.mark.parametrize("name,factory,lo,hi,n", [
    ("constant", const_model, (-4, -4), (4, 4), 48),
    ("series", series_model, (-4, -4), (4, 4), 48),
    ("variable", variable_model, (0.3, -3), (2.5, 3), 48),
    ("diagonal", lambda: diagonal_model(2), (-3, -3), (3, 3), 32),
])
@pytest.mark.parametrize("beta", [0.0, 0.3])
def test_bochner_consistency_random_densities(name, factory, lo, hi, n, beta):
    m = factory()
    g = Grid.make(lo, hi, n)
    for seed in range(3):
        lhs, rhs, _ = bochner_integrals(m, _bump_density(m, g, seed), beta)
        assert abs(lhs - rhs) <= 1e-4 * abs(lhs)


def _classical_density():
    V = lambda x: 0.6 * x ** 2 + 0.025 * x ** 4
    q = lambda x: 1 + 0.1 * np.sin(x)
    Z = quad(lambda x: np.exp(-V(x)) * q(x), -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
    return lambda x: np.exp(-V(x)) * q(x) / Z


def _classical_jet(x):
    q, q1, q2, q3 = 1 + 0.1 * np.sin(x), 0.1 * np.cos(x), -0.1 * np.sin(x), -0.1 * np.cos(x)
    f1 = q1 / q
    f2 = q2 / q - f1 ** 2
    f3 = q3 / q - 3 * q1 * q2 / q ** 2 + 2 * f1 ** 3
    return f1, f2, f3


def test_classical_bakry_emery_reduction():
    m = DiagonalModel(quadratic_potential([[1.2]], [0.1]), [PowerSeries([(1.0, 0)])])
    p = _classical_density()

    def lhs(x):
        f1, f2, f3 = _classical_jet(x)
        v = eval_gamma_operators(m, ([f1], [[f2]], [[[f3]]]), [x])
        return float(v.lhs) * p(x)

    def rhs(x):
        f1, f2, _ = _classical_jet(x)
        return (f2 ** 2 + (1.2 + 0.3 * x ** 2) * f1 ** 2) * p(x)

    L = quad(lhs, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    R = quad(rhs, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
    assert abs(L - R) / (abs(L) + abs(R) + 1) < 1e-6
    assert abs(L - R) < 1e-6 * abs(R)


# ---------------------------------------------------------------------------
# dissipation side

def test_dissipation_rhs_zero_at_equilibrium():
    m = const_model()
    assert abs(fisher_dissipation_rhs(m, equilibrium(m, Grid.make((-4, -4), (4, 4), 32)))) < 1e-20


def test_dissipation_bounded_by_certified_rate():
    m = const_model()
    lam = rate_map(m, Grid.make((-1, -1), (1, 1), 5)).lambda_inf
    grid = Grid.make((-5, -5), (5, 5), 64)
    for amp in (0.1, 0.3):
        p = _perturbed_gaussian(grid, amp)
        I, _, _ = compute_functionals(m, p)
        rhs = fisher_dissipation_rhs(m, p)
        assert rhs < 0
        assert rhs <= -2 * lam * I * (1 - 1e-6)
