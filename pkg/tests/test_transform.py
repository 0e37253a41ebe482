import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bubblesphere.bubble import Bubble, bubble_meridian
from bubblesphere.grid import AnnulusGeometry, MeridianField, MeridianGrid
from bubblesphere.solver import BlowupFit, SolveResult
from bubblesphere.transform import (
    BiradialLift,
    inverse_meridian_map,
    lift,
    lift_values,
    meridian_map,
    polynomial_fields,
    random_field,
    sphere_extract,
    upper_radii,
    verify_correspondence,
)


def test_map_examples():
    r0 = 0.7
    assert np.allclose(meridian_map(np.sqrt(2 * r0), 0.0), (r0, 0.0))
    assert np.allclose(meridian_map(0.0, np.sqrt(2 * r0)), (r0, np.pi))
    assert np.allclose(meridian_map(1.0, 1.0), (1.0, np.pi / 2))
    with pytest.raises(ValueError):
        meridian_map(0.0, 0.0)
    with pytest.raises(ValueError):
        meridian_map(-1.0, 0.5)


@given(s=st.floats(1e-3, 10), t=st.floats(0, 10))
def test_map_formula_and_inverse(s, t):
    rho, phi = meridian_map(s, t)
    assert rho == pytest.approx((s * s + t * t) / 2, rel=1e-15)
    assert np.cos(phi) == pytest.approx((s * s - t * t) / (s * s + t * t), abs=1e-14)
    assert 0 <= phi <= np.pi
    s2, t2 = inverse_meridian_map(rho, phi)
    assert s2 == pytest.approx(s, rel=1e-12, abs=1e-12)
    assert t2 == pytest.approx(t, rel=1e-12, abs=1e-12)


def test_domain_correspondence_on_boundary_samples():
    a, b = 1.3, 2.9
    ang = np.linspace(0, np.pi / 2, 1001)
    for rad, want in ((a, a * a / 2), (b, b * b / 2)):
        rho, _ = meridian_map(rad * np.cos(ang), rad * np.sin(ang))
        assert np.max(np.abs(rho - want)) <= 1e-12 * want
    geo = AnnulusGeometry(3, 0.5, 2.0)
    assert np.allclose(upper_radii(geo), (1.0, 2.0))


@pytest.mark.parametrize("m", [2, 3])
def test_polynomial_identities(m):
    for name, u in polynomial_fields().items():
        rep = verify_correspondence(u, m, name=name)
        assert rep["pass"], rep
        if name == "x_n":
            assert rep["exact"]
        else:
            assert rep["exact"] or rep["order"] >= 1.8


def test_polynomial_lifts_have_closed_forms():
    s, t = np.array([0.3, 1.2, 2.0]), np.array([1.1, 0.4, 0.0])
    fields = polynomial_fields()
    rho, phi = meridian_map(s, t)
    assert np.allclose(fields["x_n"](rho, phi), (s**2 - t**2) / 2)
    assert np.allclose(fields["|x|^2"](rho, phi), (s**2 + t**2) ** 2 / 4)


def test_constant_field_lifts_to_constant():
    rep = verify_correspondence(lambda rho, phi: 3.0 + 0 * rho, 2)
    assert rep["exact"] and rep["pass"]


@pytest.mark.parametrize("seed", range(10))
def test_random_fields_second_order(seed):
    rep = verify_correspondence(random_field(seed), 2, seed=seed)
    assert rep["pass"] and (rep["exact"] or rep["order"] >= 1.8), rep


def test_bubble_field_identity_away_from_core():
    b = Bubble(3, 0.3, (0.0, 0.0, 1.6))
    rep = verify_correspondence(lambda r, p: bubble_meridian(b, r, p), 2)
    assert rep["order"] >= 1.8


def _smooth_field(geo, nr=129, nphi=129):
    grid = MeridianGrid.uniform(geo, nr, nphi)
    return MeridianField.from_function(grid, lambda r, p: np.sin(np.pi * (r - 1) / 2) * (1 + 0.3 * np.cos(p)))


def test_round_trip_restriction():
    u = _smooth_field(AnnulusGeometry(3))
    R, P = u.grid.mesh()
    s, t = inverse_meridian_map(R[1:-1], P[1:-1])
    back = lift_values(u, s, t)
    assert np.max(np.abs(back - u.values[1:-1])) <= 1e-6
    r = np.linspace(1.05, 2.95, 17)
    p = np.linspace(0.02, 3.1, 13)
    RR, PP = np.meshgrid(r, p, indexing="ij")
    exact = np.sin(np.pi * (RR - 1) / 2) * (1 + 0.3 * np.cos(PP))
    s, t = inverse_meridian_map(RR, PP)
    assert np.max(np.abs(lift_values(u, s, t) - exact)) <= 1e-6


def test_lift_grid_and_boundary_values(tmp_path):
    u = _smooth_field(AnnulusGeometry(3))
    v = lift(u, num=65, source="unit")
    inside = v.inside()
    assert np.all(np.isfinite(v.values[inside])) and np.all(np.isnan(v.values[~inside]))
    ring = np.linspace(0, np.pi / 2, 50)
    a, b = upper_radii(u.grid.geometry)
    for rad in (a, b):
        assert np.max(np.abs(lift_values(u, rad * np.cos(ring), rad * np.sin(ring)))) < 1e-12
    v.save(tmp_path / "v.csv", tmp_path / "v.json")
    head = (tmp_path / "v.csv").read_text().splitlines()[0]
    assert head == "s,t,value"
    with pytest.raises(ValueError):
        lift(u, m=3)
    with pytest.raises(ValueError):
        lift_values(u, np.array([0.5]), np.array([0.0]))


@given(seed=st.integers(0, 10**6))
def test_lifted_field_is_biradial(seed):
    u = _smooth_field(AnnulusGeometry(3), 33, 33)
    est = BiradialLift(m=2).fit(u)
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((5, 4))
    y *= rng.uniform(1.5, 2.3, 5)[:, None] / np.linalg.norm(y, axis=1)[:, None]
    rot = lambda th: np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    z = y.copy()
    z[:, :2] = y[:, :2] @ rot(rng.uniform(0, 6)).T
    z[:, 2:] = y[:, 2:] @ rot(rng.uniform(0, 6)).T
    assert np.array_equal(est.transform(y), est.transform(z)) or np.allclose(
        est.transform(y), est.transform(z), rtol=1e-13, atol=1e-15)


def test_biradial_lift_estimator_checks():
    u = _smooth_field(AnnulusGeometry(3), 33, 33)
    with pytest.raises(ValueError):
        BiradialLift(m=3).fit(u)
    est = BiradialLift(m=2).fit(u)
    with pytest.raises(ValueError):
        est.transform(np.ones((2, 3)))


def _synthetic_result(geo, peaks, nphi=65):
    grid = MeridianGrid.uniform(geo, 65, nphi)
    R, P = grid.mesh()
    vals = np.zeros(grid.shape)
    for z, amp in peaks:
        b = Bubble(3, 0.05, (0.0, 0.0, z))
        vals += np.sign(amp) * bubble_meridian(b, R, P)
    vals[0] = vals[-1] = 0
    fit = BlowupFit(list(peaks), [0.05] * len(peaks), [1.0] * len(peaks), [1.0] * len(peaks))
    return SolveResult(MeridianField(grid, vals), 0.1, 0.0, 0, fit)


def test_sphere_on_inner_boundary_radius():
    geo = AnnulusGeometry(3, 0.5, 2.0)
    res = _synthetic_result(geo, [(0.52, 1.0)])
    res.diagnostics.peaks[0] = (0.5, 1.0)
    (sph,) = sphere_extract(res)
    assert sph.radius == pytest.approx(1.0)
    assert sph.radius == pytest.approx(upper_radii(geo)[0])
    assert sph.factor == 1 and sph.dimension == 1


def test_opposite_axis_peaks_give_orthogonal_spheres():
    res = _synthetic_result(AnnulusGeometry(3), [(1.4, 2.0), (-1.4, -2.0)])
    s1, s2 = sphere_extract(res)
    assert {s1.factor, s2.factor} == {1, 2}
    assert s1.radius == pytest.approx(s2.radius) == pytest.approx(np.sqrt(2.8))
    assert s1.sign == -s2.sign


def test_same_side_nodal_peaks_share_a_factor():
    res = _synthetic_result(AnnulusGeometry(3), [(1.3, 2.0), (1.8, -1.0)])
    spheres = sphere_extract(res)
    assert [s.factor for s in spheres] == [1, 1]
    assert sorted(s.sign for s in spheres) == [-1, 1]


def test_off_axis_peak_is_rejected():
    geo = AnnulusGeometry(3)
    grid = MeridianGrid.uniform(geo, 33, 33)
    vals = MeridianField.from_function(grid, lambda r, p: (r - 1) * (3 - r) * np.sin(p) ** 2).values
    res = SolveResult(MeridianField(grid, vals), 0.1, 0.0, 0, BlowupFit([(2.0, 1.0)], [1], [1], [1]))
    with pytest.raises(ValueError, match="off the axis"):
        sphere_extract(res)
