import json

import numpy as np
import pytest
from scipy.special import erf

from qkinetic.core import ConfigError, ModelParams, VelocityGrid
from qkinetic.equilibrium import rho_constants
from qkinetic.solver import IterationReport
from qkinetic.verifier import (
    BoundReport, _workspace, check_annihilation, check_contraction, check_decomposition,
    check_delta_zero_limit, check_gamma_estimate, check_lemma_2_3, check_lemma_2_5,
    check_splitting, gamma_field_family, gamma_ratio, lemma_2_3_terms, make_rng, nu_fit,
)
from qkinetic.collision import nu_delta_field


# ---------------------------------------------------------------- pointwise bounds

@pytest.mark.parametrize("delta", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_pointwise_bounds_has_no_violations(delta, rho):
    rep = check_lemma_2_3(ModelParams(delta=delta, rho=rho), samples=20_000, seed=3)
    assert rep.passed
    assert all(v == 0 for k, v in rep.details["violations"].items() if k != "second_literal")
    assert rep.worst_ratio <= 1.0


@pytest.mark.parametrize("delta,rho", [(0.0, 1.0), (1.0, 1.0), (0.5, 3.0)])
def test_pointwise_bounds_zero_configuration(delta, rho):
    z = np.zeros((1, 3))
    terms = lemma_2_3_terms(z, z, np.array([[0.0, 0.0, 1.0]]), delta, rho)
    assert terms["first_upper"][0][0] == pytest.approx(rho / (delta + rho) ** 2, rel=1e-15)
    c = rho_constants(rho)
    assert c.c1 <= terms["first_upper"][0][0] <= c.c2


def test_pointwise_bounds_classical_collapse():
    rng = make_rng(0, 1)
    v, u = rng.normal(size=(2, 100, 3))
    w = rng.normal(size=(100, 3))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    terms = lemma_2_3_terms(v, u, w, 0.0, 2.0)
    # at delta = 0 the first middle expression is mu(u) = mu0(u) / rho
    np.testing.assert_allclose(terms["first_upper"][0], np.exp(-np.sum(u * u, axis=1) / 2) / 2.0)


def test_pointwise_bounds_reproducible():
    p = ModelParams()
    a = check_lemma_2_3(p, samples=1000, seed=5)
    b = check_lemma_2_3(p, samples=1000, seed=5)
    assert a.as_dict() == b.as_dict()


def test_rng_streams_are_independent():
    a = make_rng(1, 0).uniform(size=4)
    b = make_rng(1, 1).uniform(size=4)
    np.testing.assert_array_equal(a, make_rng(1, 0).uniform(size=4))
    assert not np.allclose(a, b)


# ---------------------------------------------------------------- fitted constants

def test_nu_fit_matches_classical_closed_form(sphere):
    ws = _workspace(9, sphere, ModelParams(delta=0.0, rho=1.0))
    c_hat = nu_fit(ws)[0]
    s = np.sqrt(ws.vgrid.speed_sq)
    safe = np.where(s == 0, 1.0, s)
    exact = 2 * np.pi * (2 * np.pi) ** 1.5 * np.where(s == 0, np.sqrt(2 / np.pi),
                                                      erf(safe / np.sqrt(2)) / safe)
    c = rho_constants(1.0)
    r = 1.0 / (1.0 + s)
    c_exact = max(np.max(c.c1 * r / exact), np.max(exact / (c.c2 * r)))
    assert c_hat == pytest.approx(c_exact, rel=0.05)


def test_frequency_and_cutoff_report_on_small_grids(sphere):
    rep = check_lemma_2_5(ModelParams(delta=1.0), sphere, n_base=5, n_fine=7)
    d = rep.details
    assert d["fits"][7]["km_m0"] == 0.0
    assert np.isfinite(rep.fitted_constant) and rep.fitted_constant > 0
    assert {"km_slope", "km_small_m_slope", "slope_ok", "relative_change"} <= set(d)
    json.dumps(rep.as_dict())


def test_gamma_hypotheses_enforced(sphere):
    with pytest.raises(ConfigError):
        check_gamma_estimate(ModelParams(), sphere, p=1.4)
    with pytest.raises(ConfigError):
        check_gamma_estimate(ModelParams(beta=6.0), sphere, p=2.0)


def test_gamma_ratio_skips_zero_and_scales(sphere):
    ws = _workspace(7, sphere, ModelParams(delta=1.0))
    nu0 = nu_delta_field(ws.with_params(ModelParams(delta=0.0)))
    assert gamma_ratio(ws, nu0, np.zeros(ws.vgrid.size), 2.0) == (0.0, 0.0)
    f = gamma_field_family(ws.vgrid, 1, 0, 7.0)[0]
    fits = [np.divide(*gamma_ratio(ws, nu0, s * f, 2.0)) for s in (1.0, 2.0, 4.0)]
    assert max(fits) < 2 * min(fits)


def test_gamma_constant_comparable_across_delta(sphere):
    f_vals = []
    for delta in (0.0, 1.0):
        ws = _workspace(7, sphere, ModelParams(delta=delta))
        nu0 = nu_delta_field(ws.with_params(ModelParams(delta=0.0)))
        f = gamma_field_family(ws.vgrid, 1, 0, 7.0)[0]
        f_vals.append(np.divide(*gamma_ratio(ws, nu0, f, 2.0)))
    assert max(f_vals) < 3 * min(f_vals)


def test_gamma_family_is_nested():
    g = VelocityGrid(6.0, 5)
    a = gamma_field_family(g, 4, 0, 7.0)
    b = gamma_field_family(g, 8, 0, 7.0)
    for k in range(4):
        np.testing.assert_allclose(a[k], b[2 * k])


def test_gamma_estimate_report_shape(sphere):
    rep = check_gamma_estimate(ModelParams(delta=1.0), sphere, n_base=5, n_fine=7, count=2)
    assert set(rep.details["fits"]) == {"n=5,count=2", "n=7,count=2", "n=7,count=4"}
    assert rep.fitted_constant == pytest.approx(rep.worst_ratio * rho_constants(1.0).c5)


# ---------------------------------------------------------------- contraction

def _rep(ratios, converged=True):
    return IterationReport(ratios=list(ratios), converged=converged)


def test_contraction_passes_for_shrinking_ratios():
    rep = check_contraction({1: [_rep([1e-3, 2e-3])], 0.5: [_rep([5e-4])], 0.25: [_rep([2e-4])]})
    assert rep.passed and rep.worst_ratio == 2e-3


@pytest.mark.parametrize("reports", [
    {1: [_rep([1.2])], 0.5: [_rep([0.1])]},
    {1: [_rep([0.1])], 0.5: [_rep([0.2])]},
    {1: [_rep([0.1], converged=False)], 0.5: [_rep([0.01])]},
])
def test_contraction_failures(reports):
    assert not check_contraction(reports).passed


def test_contraction_needs_unit_factor():
    with pytest.raises(ValueError):
        check_contraction({0.5: [_rep([0.1])]})


# ---------------------------------------------------------------- structural checks

def test_structural_checks_pass(small_grid, make_ws):
    for delta in (0.0, 1.0):
        ws = make_ws(small_grid, delta)
        assert check_annihilation(ws).passed
        assert check_decomposition(ws, count=3).passed
        assert check_splitting(ws, count=2).passed


def test_sabotaged_sign_breaks_decomposition(small_grid, sphere):
    from qkinetic.collision import CollisionWorkspace

    ws = CollisionWorkspace(small_grid, sphere, ModelParams(delta=1.0))
    ws.k_signs = np.array([1.0, -1.0, -1.0])
    assert not check_decomposition(ws, count=2).passed


def test_delta_zero_limit_on_small_grid(small_grid, sphere):
    rep = check_delta_zero_limit(small_grid, sphere, ModelParams())
    assert rep.passed
    assert all(0.8 <= f["slope"] <= 1.2 for f in rep.details["fields"])


def test_report_serialises_non_finite():
    rep = BoundReport(id="x", sample_count=1, worst_ratio=float("inf"), fitted_constant=None,
                      passed=False, details={"a": np.float64(1.0), "b": np.arange(2)})
    d = rep.as_dict()
    assert d["worst_ratio"] == "inf" and d["details"]["b"] == [0, 1]
    json.dumps(d)
