import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import digamma, gamma

from bubblesphere._quadrature import axial_rule
from bubblesphere.bubble import AnsatzConfig, Bubble, bubble_meridian, critical_exponent
from bubblesphere.energy import (
    EnergyExpansion,
    ExpansionFitter,
    _ExactAnsatz,
    energy,
    expansion_design,
    fit_expansion,
    gamma_constants,
    gamma_constants_closed_form,
    grid_search_phi,
    minimize_phi,
    phi_double,
    phi_single,
    verify_lemmas,
)
from bubblesphere.green import project_bubble
from bubblesphere.grid import AnnulusGeometry, MeridianField, MeridianGrid
from bubblesphere.solver import BranchSpec

UNIT = (1.0, 1.0, 1.0)


def _oracle(n):
    # independent of the package: Gamma-function moments of (1+|y|^2)^(-s)
    p = (n + 2) / (n - 2)
    a = (n * (n - 2)) ** ((n - 2) / 4)
    mom = lambda s: np.pi ** (n / 2) * gamma(s - n / 2) / gamma(s)
    g1 = a ** (p + 1) * mom(n)
    return g1, a ** (p + 1) * mom((n + 2) / 2), -(n - 2) / 2 * g1 * (digamma(n) - digamma(n / 2))


@pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
def test_gamma_quadrature_matches_closed_form(n):
    q = gamma_constants(n)
    for got, want in zip((q.gamma1, q.gamma2, q.gamma3), _oracle(n)):
        assert got == pytest.approx(want, rel=1e-8)
    c = gamma_constants_closed_form(n)
    assert c.gamma1 == pytest.approx(q.gamma1, rel=1e-10)


def test_gamma_examples():
    assert gamma_constants(4).gamma1 == pytest.approx(32 * np.pi**2 / 3, rel=1e-10)
    assert gamma_constants(4).gamma1 == pytest.approx(105.27578, abs=1e-5)
    assert gamma_constants(3).gamma2 == pytest.approx(4 * np.sqrt(3) * np.pi, rel=1e-10)
    assert gamma_constants(4).gamma3 == pytest.approx(-87.7298, abs=1e-4)
    with pytest.raises(ValueError):
        gamma_constants(2)


def test_energy_of_zero_field_and_negation():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 33, 33)
    assert energy(MeridianField.zeros(grid), 0.1) == 0.0
    pu = project_bubble(grid, Bubble(3, 0.2, (0.0, 0.0, 1.8)))
    assert energy(-pu, 0.1) == energy(pu, 0.1)
    assert energy(pu * 1.0, 0.0) == energy(pu, 0.0)


def test_energy_rejects_nonzero_boundary():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 17, 17)
    with pytest.raises(ValueError):
        energy(MeridianField.from_function(grid, lambda r, p: r + 0 * p), 0.1)


def test_projected_bubble_gradient_energy_tends_to_half_gamma1():
    geo = AnnulusGeometry(3)
    half = gamma_constants_closed_form(3).gamma1 / 2
    # closed form 3^(3/2) pi^2 / 8 = 6.41050 (a quoted 6.4109 does not survive this check)
    assert half == pytest.approx(3**1.5 * np.pi**2 / 8, rel=1e-12)
    dev = []
    for delta in (0.04, 0.02, 0.01):
        cfg = AnsatzConfig(3, 0.1, 0, [(1, 1.0, 1.0)], "unit")
        A = _ExactAnsatz(cfg, geo)
        A.terms = [(1.0, Bubble(3, delta, (0.0, 0.0, 2.0)))]
        dev.append(abs(A.dirichlet_half() - half))
    assert dev[0] > dev[1] > dev[2]
    assert dev[2] < 0.02 * half


def test_lemma_34v_slope_in_tau():
    n = 3
    geo = AnnulusGeometry(n)
    p = critical_exponent(n)
    g1 = gamma_constants_closed_form(n).gamma1
    taus = np.array([0.01, 0.015, 0.02])
    vals = []
    for tau in taus:
        b = Bubble(n, 1e-5, (0.0, 0.0, 1.0 + tau))
        rule = axial_rule(geo, 1.0 + tau, b.delta)
        vals.append(rule.integrate(bubble_meridian(b, rule.r, rule.phi) ** (p + 1) / rule.r))
    slope = np.polyfit(taus, vals, 1)[0]
    assert slope == pytest.approx(-g1, rel=0.05)


def test_phi_examples():
    assert phi_single(2, 1, UNIT, 3) == pytest.approx(2 - np.log(2), abs=1e-15)
    assert phi_single(2, 1, UNIT, 3) == pytest.approx(1.306853, abs=1e-6)
    for n in (3, 4, 6):
        for t in (0.3, 2.0):
            assert phi_single(1, t, UNIT, n) == pytest.approx((1 / (2 * t)) ** (n - 2) + t)
    base = phi_single(2, 1, UNIT, 3)
    assert phi_single(1e-6, 1, UNIT, 3) > base and phi_single(1e6, 1, UNIT, 3) > base
    assert phi_double(1, 1, 1, 2, UNIT, 3) == pytest.approx(0.5 + 0.25 + 2 * (1 - 1 / 3) + 3)
    with pytest.raises(ValueError):
        phi_double(1, 1, 1, 1, UNIT, 3)
    with pytest.raises(ValueError):
        phi_single(-1, 1, UNIT, 3)
    assert phi_single(2, 1, EnergyExpansion.unit(3)) == phi_single(2, 1, UNIT, 3)


def test_phi_double_decouples_at_large_separation():
    d, t1, t2 = 1.3, 0.7, 1e5
    got = phi_double(d, d, t1, t2, UNIT, 3)
    want = phi_single(d, t1, UNIT, 3) + t2 - np.log(d) + (d / (2 * t2))
    assert got == pytest.approx(want, rel=1e-9)


@given(t1=st.floats(0.01, 50), gap=st.floats(1e-3, 50), n=st.integers(3, 7))
def test_interaction_bracket_positive(t1, gap, n):
    t2 = t1 + gap
    k = n - 2
    assert abs(t1 - t2) ** (-k) - (t1 + t2) ** (-k) > 0
    with_inter = phi_double(1.0, 1.0, t1, t2, UNIT, n)
    without = phi_single(1.0, t1, UNIT, n) + phi_single(1.0, t2, UNIT, n)
    assert with_inter > without


def test_minimize_single_examples():
    cp = minimize_phi("single", UNIT, n=3)
    assert np.allclose(cp.params, (2.0, 1.0), atol=1e-6)
    assert cp.value == pytest.approx(2 - np.log(2), abs=1e-12)
    assert cp.is_minimum
    cp4 = minimize_phi("single", UNIT, n=4)
    assert np.allclose(cp4.params, (np.sqrt(2), 1.0), atol=1e-6)
    assert cp4.value == pytest.approx(1.153426, abs=1e-6)
    for n, cp_ in ((3, cp), (4, cp4)):
        pt, _, axes = grid_search_phi("single", UNIT, n=n)
        for k in range(2):
            i = int(np.searchsorted(axes[k], pt[k]))
            lo, hi = axes[k][max(i - 1, 0)], axes[k][min(i + 1, len(axes[k]) - 1)]
            assert lo <= cp_.params[k] <= hi


def test_minimize_double_matches_grid_oracle():
    cp = minimize_phi("double", UNIT, n=3)
    assert cp.gradient_norm <= 1e-8
    assert cp.is_minimum
    assert cp.params[2] < cp.params[3]
    pt, _, axes = grid_search_phi("double", UNIT, n=3)
    for k in range(4):
        ratio = axes[k][1] / axes[k][0]
        assert abs(np.log(cp.params[k] / pt[k])) <= np.log(ratio) * (1 + 1e-9)


@given(c4=st.floats(0.2, 5), c5=st.floats(0.2, 5), c6=st.floats(0.2, 5), n=st.integers(3, 5))
def test_argmin_invariant_under_common_rescaling(c4, c5, c6, n):
    a = minimize_phi("single", (c4, c5, c6), n=n)
    b = minimize_phi("single", (10 * c4, 10 * c5, 10 * c6), n=n)
    assert np.allclose(a.params, b.params, rtol=1e-6, atol=0)
    assert b.value == pytest.approx(10 * a.value, rel=1e-9, abs=1e-12)


def test_minimize_rejects_nonpositive_coefficients():
    with pytest.raises(ValueError):
        minimize_phi("single", (1.0, -1.0, 1.0), n=3)


def _synthetic(c, n=3, lam=0, pairs=1):
    eps = [0.02 / 2**k for k in range(6)]
    if pairs == 1:
        samples = [[(d, t)] for d in (0.5, 1.0, 2.0) for t in (0.5, 1.0, 2.0)]
    else:
        samples = [[(d1, t1), (d2, t1 + g)] for d1, d2 in ((0.5, 1.0), (1.0, 2.0), (2.0, 0.7))
                   for t1, g in ((0.5, 1.0), (1.0, 0.3), (0.3, 2.0))]
    X = np.array([[e] + [v for pr in s for v in pr] for e in eps for s in samples])
    return eps, samples, expansion_design(X, n, lam, pairs) @ np.asarray(c)


@pytest.mark.parametrize("case", ["i", "ii", "iv"])
def test_fit_round_trip_on_template_data(case):
    spec = BranchSpec(case)
    c = (3.1, -0.7, 0.45, 2.2, 1.3, 0.8)
    eps, samples, y = _synthetic(c, 3, spec.lam, spec.pairs)
    out = fit_expansion(spec, 3, eps, samples, energies=y)
    assert np.allclose(out.c, c, rtol=1e-8, atol=0)
    assert out.diagnostics["positive_c456"]
    assert max(out.diagnostics["max_residual_over_eps"]) < 1e-8


def test_fitter_estimator_interface():
    c = np.array([1.0, 2.0, -0.5, 1.5, 0.5, 0.25])
    eps, samples, y = _synthetic(c)
    X = np.array([[e, s[0][0], s[0][1]] for e in eps for s in samples])
    est = ExpansionFitter(n=3).fit(X, y)
    assert np.allclose(est.predict(X), y, rtol=1e-10)
    assert est.get_params()["weight_power"] == 2.0
    assert est.expansion().provenance == "fitted"


def test_fit_rejects_rank_deficiency_and_small_designs():
    spec = BranchSpec("i")
    eps = [0.02 / 2**k for k in range(6)]
    same_d = [[(1.0, t)] for t in np.linspace(0.5, 2, 8)]
    X = np.array([[e, s[0][0], s[0][1]] for e in eps for s in same_d])
    with pytest.raises(ValueError, match="rank"):
        ExpansionFitter(3).fit(X, np.ones(len(X)))
    with pytest.raises(ValueError, match="6"):
        fit_expansion(spec, 3, eps[:5], same_d, energies=np.ones(40))
    with pytest.raises(ValueError, match="8"):
        fit_expansion(spec, 3, eps, same_d[:7], energies=np.ones(42))


def test_verify_lemmas_report_shape():
    rep = verify_lemmas(3, [0.02 / 2**k for k in range(6)], m=16)
    keys = {e["item"] for e in rep["entries"]}
    assert {"3.4(i)", "3.4(v)", "3.5(i)", "3.1", "3.2", "3.3"} <= keys
    for e in rep["entries"]:
        assert len(e["ratio"]) == 6
        assert np.allclose(np.array(e["lhs"]) / np.array(e["rhs"]), e["ratio"])
    item = next(e for e in rep["entries"] if e["item"] == "3.4(ii)")
    assert all(v > 0 for v in item["lhs"])
    with pytest.raises(ValueError):
        verify_lemmas(3, [0.1, 0.05], m=16)
