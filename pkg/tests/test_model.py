import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypocert import (ConfigParse, GenericModel, NonFiniteField, PowerSeries, RankDeficientSpan,
                      SingularFrame, ToleranceExceeded, UnderdampedModel, check_stationarity,
                      check_structure_condition, compute_gamma, expansion_coefficients, load_model,
                      model_from_dict)
from hypocert.grid import Grid
from hypocert.model import as_generic
from models import const_model, diagonal_model, oscillator_model, series_model, variable_model

RNG = np.random.default_rng(20240611)


def test_gamma_underdamped_quadratic_at_1_2():
    assert np.allclose(compute_gamma(const_model(), [1.0, 2.0]), [-2.0, 1.0], atol=1e-14)


@pytest.mark.parametrize("factory,box", [
    (const_model, ([-3, -3], [3, 3])),
    (variable_model, ([0.3, -3], [2, 3])),
    (series_model, ([-2, -3], [2, 3])),
    (oscillator_model, ([-2] * 6, [2] * 6)),
    (lambda: diagonal_model(2), ([-2, -2], [2, 2])),
])
def test_gamma_matches_family_formula_at_random_points(factory, box):
    model = factory()
    lo, hi = map(np.asarray, box)
    for x in RNG.uniform(lo, hi, size=(100, len(lo))):
        assert np.allclose(compute_gamma(model, x), model.gamma_closed_form(x), rtol=1e-13, atol=1e-13)


def test_oscillator_gamma_is_hamiltonian_rotation():
    m = oscillator_model()
    x = RNG.normal(size=6)
    gq, _ = m.hamiltonian_parts(x[:3])
    assert np.allclose(compute_gamma(m, x), np.concatenate([-x[3:], gq]), atol=1e-13)


def _gradient_flow_generic():
    def a(x):
        return np.array([[1.0 + 0.1 * np.sin(x[0]), 0.0], [0.2, 1.0 + 0.05 * x[1] ** 2]])

    def log_pi(x):
        return -0.5 * x[0] ** 2 - 0.25 * x[1] ** 4 - 0.5 * x[1] ** 2

    def drift(x):
        from hypocert import stencils
        A = a(x) @ a(x).T
        g = stencils.jacobian(log_pi, x, 1e-3)
        dA = stencils.jacobian(lambda y: a(y) @ a(y).T, x, 1e-3)
        return A @ g + np.einsum("jij->i", dA)

    return GenericModel(2, 0, drift, a, lambda x: np.zeros((2, 0)), log_pi)


def test_gradient_flow_drift_has_zero_gamma():
    m = _gradient_flow_generic()
    for x in RNG.uniform(-1, 1, size=(5, 2)):
        assert np.max(np.abs(compute_gamma(m, x))) < 1e-8


def test_nonfinite_field_raises():
    m = GenericModel(1, 0, lambda x: np.array([np.nan]), lambda x: np.ones((1, 1)),
                     lambda x: np.zeros((1, 0)), lambda x: -x[0] ** 2)
    with pytest.raises(NonFiniteField):
        compute_gamma(m, [0.1])


# ---------------------------------------------------------------------------
# stationarity

def test_stationarity_underdamped_exact():
    grid = Grid.make((-1, -1), (1, 1), 21)
    rep = check_stationarity(const_model(), grid, tol=1e-6, method="analytic")
    assert rep.passed and rep.residual == 0.0


def test_stationarity_oscillator_equal_baths():
    pts = RNG.uniform(-1.5, 1.5, size=(200, 6))
    assert check_stationarity(oscillator_model(), pts, tol=1e-6).passed


def _perturbed(model, shift=0.1):
    base = as_generic(model)
    inner = base._drift
    base._drift = lambda x: inner(x) + np.array([shift, 0.0])
    return base


def test_stationarity_detects_perturbed_drift():
    m = _perturbed(const_model())
    pts = Grid.make((-1, -1), (1, 1), 5).points()
    rep = check_stationarity(m, pts, tol=1e-6)
    assert not rep.passed and rep.residual > 1e-3
    with pytest.raises(ToleranceExceeded) as exc:
        check_stationarity(m, pts, tol=1e-6, raise_on_fail=True)
    assert exc.value.residual == pytest.approx(rep.residual)


def test_stationarity_fd_residual_converges_at_fourth_order():
    # gamma' = gamma - 0.1 e1, so div(pi gamma') = 0.1 U'(x) pi exactly
    m = _perturbed(const_model())
    pts = np.array([[0.7, -0.4], [-0.3, 0.9], [1.1, 0.2]])
    pi = np.exp(-0.5 * pts[:, 0] ** 2 - 0.5 * pts[:, 1] ** 2)
    gam = np.stack([-pts[:, 1] - 0.1, pts[:, 0]], -1)
    exact = np.abs(0.1 * pts[:, 0] * pi) / (1 + pi * np.linalg.norm(gam, axis=1))
    errs = []
    for h in (0.2, 0.1):
        rep = check_stationarity(m, pts, tol=1.0, method="fd", h=h)
        errs.append(abs(rep.residual - exact.max()))
    assert errs[0] / errs[1] >= 8.0


# ---------------------------------------------------------------------------
# structure condition and expansion coefficients

def test_structure_condition_constant_a():
    rep = check_structure_condition(const_model(), [0.3, -0.2])
    assert rep.passed and rep.residual == 0.0


def test_structure_condition_a_depends_on_first_block_only():
    def a(x):
        return np.array([[1.0 + 0.2 * x[0] ** 2], [0.0]])

    m = GenericModel(1, 1, lambda x: np.zeros(2), a, lambda x: np.array([[0.0], [1.0]]),
                     lambda x: -0.5 * x @ x)
    assert check_structure_condition(m, [0.4, 0.1]).residual < 1e-12


def test_structure_condition_variable_friction_matches_lstsq():
    m = variable_model()
    assert check_structure_condition(m, [0.75, 0.0]).residual == 0.0
    for x in np.column_stack([np.linspace(0.5, 1.5, 10), np.linspace(-1, 1, 10)]):
        j = m.jet(x)
        v = np.einsum("rk,rqi->kqi", j.z, j.da)[0, :, 0]
        c, *_ = np.linalg.lstsq(j.a, v, rcond=None)
        brute = np.linalg.norm(j.a @ c - v) / max(np.linalg.norm(v), 1e-300)
        rep = check_structure_condition(m, x)
        assert rep.residual == pytest.approx(brute, abs=1e-14)
        assert rep.coefficients[0, 0, 0] == pytest.approx(c[0], rel=1e-12)


def test_structure_condition_violation_detected():
    # a rotates with x2 while z points along x2: d a / d z leaves span(a)
    def a(x):
        return np.array([[np.cos(x[1])], [np.sin(x[1])]])

    m = GenericModel(1, 1, lambda x: np.zeros(2), a, lambda x: np.array([[0.0], [1.0]]),
                     lambda x: -0.5 * x @ x)
    assert not check_structure_condition(m, [0.0, 0.3]).passed


def test_structure_condition_rank_deficient():
    m = GenericModel(2, 0, lambda x: np.zeros(2), lambda x: np.array([[1.0, 1.0], [0.0, 0.0]]),
                     lambda x: np.zeros((2, 0)), lambda x: -0.5 * x @ x)
    with pytest.raises(RankDeficientSpan):
        check_structure_condition(m, [0.1, 0.2])


def test_expansion_constant_fields():
    c = expansion_coefficients(const_model(), [0.2, 0.5])
    assert np.all(c.lam == 0) and np.all(c.omega == 0)


def test_expansion_alpha_by_cramer_rule():
    m = variable_model()
    for x in RNG.uniform([0.5, -1], [1.5, 1], size=(10, 2)):
        j = m.jet(x)
        (a11, z11), (a21, z21) = np.concatenate([j.a, j.z], 1)
        g1, g2 = j.gamma
        det = a11 * z21 - z11 * a21
        alpha = np.array([(g1 * z21 - z11 * g2) / det, (a11 * g2 - g1 * a21) / det])
        c = expansion_coefficients(m, x)
        assert np.allclose(c.alpha, alpha, rtol=1e-12, atol=1e-12)
        assert c.residual < 1e-10


def test_expansion_diagonal_log_derivative():
    m = diagonal_model(2)
    for x in RNG.uniform(-1, 1, size=(5, 2)):
        c = expansion_coefficients(m, x)
        expect = np.zeros((2, 2, 2))
        for i, d in enumerate(m.diag):
            expect[i, i, i] = d(x[i], 1) / d(x[i])
        assert np.allclose(c.lam, expect, atol=1e-13)
        assert c.residual < 1e-10


def test_expansion_singular_frame():
    m = UnderdampedModel(PowerSeries.quadratic(1.0), ("constant", 1.0), (0.0, 1.0))
    with pytest.raises(SingularFrame):
        expansion_coefficients(m, [0.1, 0.1])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.4, 2.0), st.floats(-2, 2), st.floats(0.2, 2), st.floats(0.1, 2.0))
def test_expansion_reconstructs_derivatives(x, v, z1, z2):
    m = series_model((z1, z2))
    c = expansion_coefficients(m, [x, v])
    assert c.residual < 1e-10


# ---------------------------------------------------------------------------
# batched jets and model files

def test_batched_jet_equals_pointwise():
    m = oscillator_model(z31=0.3, z33=0.2, eps0=0.1, eps2=0.05)
    pts = RNG.normal(size=(4, 6))
    batch = m.jet(pts)
    for k, x in enumerate(pts):
        single = m.jet(x)
        for name in ("a", "da", "z", "dz", "d2z", "grad_log_pi", "hess_log_pi", "gamma", "dgamma"):
            assert np.array_equal(getattr(batch, name)[k], getattr(single, name))


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"family": "underdamped1d",\n "params": {')
    with pytest.raises(ConfigParse, match="line 2"):
        load_model(p)


def test_missing_field_reports_path():
    with pytest.raises(ConfigParse, match=r"\$\.params\.U"):
        model_from_dict({"family": "underdamped1d", "params": {}})
    with pytest.raises(ConfigParse, match=r"\$\.family"):
        model_from_dict({"family": "nope"})


def test_model_round_trip_through_json(tmp_path):
    m = series_model((1.0, 0.3))
    p = tmp_path / "m.json"
    p.write_text(json.dumps(m.to_json()))
    back = load_model(p)
    x = np.array([0.7, -0.2])
    assert np.array_equal(back.jet(x).a, m.jet(x).a)
    assert np.array_equal(back.z, m.z)


def test_generic_model_from_tables(tmp_path):
    xs = np.linspace(-2, 2, 21)
    rows = ["x1,x2,value"]
    for x1 in xs:
        for x2 in xs:
            rows.append(f"{x1:.17g},{x2:.17g},{-0.5 * x1 ** 2 - 0.5 * x2 ** 2:.17g}")
    (tmp_path / "logpi.csv").write_text("\n".join(rows) + "\n")
    doc = {"family": "generic", "n": 1, "m": 1,
           "params": {"log_pi": "logpi.csv", "drift": [0.0, 0.0], "diffusion": [[0.0], [1.0]],
                      "auxiliary": [[1.0], [0.1]]}}
    (tmp_path / "g.json").write_text(json.dumps(doc))
    m = load_model(tmp_path / "g.json")
    j = m.jet(np.array([0.3, -0.4]))
    assert np.allclose(j.grad_log_pi, [-0.3, 0.4], atol=1e-3)  # spline interpolation of a 21-point table


def test_table_header_checked(tmp_path):
    (tmp_path / "t.csv").write_text("a,b,value\n0,0,1\n")
    doc = {"family": "generic", "n": 1, "m": 1,
           "params": {"log_pi": "t.csv", "drift": [0, 0], "diffusion": [[0], [1]]}}
    (tmp_path / "g.json").write_text(json.dumps(doc))
    with pytest.raises(ConfigParse, match="header"):
        load_model(tmp_path / "g.json")
