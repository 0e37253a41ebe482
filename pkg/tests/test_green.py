import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bubblesphere._images import series_correction, series_harmonic_extension, series_regular_part
from bubblesphere._quadrature import axial_rule
from bubblesphere.bubble import Bubble, alpha, bubble_meridian
from bubblesphere.green import (
    green_function,
    operator_for,
    poisson_solve,
    project_bubble,
    projection_defect,
    reflection_point,
    regular_part,
    sphere_area,
)
from bubblesphere.grid import AnnulusGeometry, MeridianField, MeridianGrid


def test_zero_source_zero_solution():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 17, 17)
    assert np.all(poisson_solve(grid, np.zeros(grid.shape)).values == 0.0)


def _manufactured(n):
    # w vanishes on r = 1, 3; -Delta w computed by hand in meridian coordinates
    def w(r, p):
        return (r - 1) * (3 - r) * (1 + np.cos(p) ** 2)

    def source(r, p):
        f = (r - 1) * (3 - r)
        fr, frr = 4 - 2 * r, -2.0
        g = 1 + np.cos(p) ** 2
        gp = -2 * np.cos(p) * np.sin(p)
        gpp = -2 * np.cos(2 * p)
        cot_term = np.where(np.sin(p) > 1e-12, gp / np.where(np.sin(p) > 0, np.tan(p), 1.0), gpp)
        lap = (frr + (n - 1) / r * fr) * g + f / r**2 * (gpp + (n - 2) * cot_term)
        return -lap
    return w, source


@pytest.mark.parametrize("n", [3, 4])
def test_manufactured_solution_second_order(n):
    w, source = _manufactured(n)
    errs, hs = [], []
    for k in (33, 65, 129):
        grid = MeridianGrid.uniform(AnnulusGeometry(n), k, k)
        R, P = grid.mesh()
        sol = poisson_solve(grid, source(R, P))
        errs.append(np.max(np.abs(sol.values - w(R, P))))
        hs.append(2.0 / (k - 1))
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.8


def test_even_source_gives_exactly_even_solution():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 33, 33)
    src = MeridianField.from_function(grid, lambda r, p: np.cos(p) ** 2 * r, "even")
    sol = poisson_solve(grid, src)
    assert sol.symmetry == "even"
    assert np.array_equal(sol.values, sol.values[:, ::-1])


def test_regular_part_boundary_values_and_harmonicity():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 129, 129)
    H = regular_part(grid, 1.8)
    R, P = grid.mesh()
    dist = np.sqrt(R**2 + 1.8**2 - 2 * 1.8 * R * np.cos(P))
    assert np.allclose(H.values[0], 1 / dist[0], rtol=1e-15)
    assert np.allclose(H.values[-1], 1 / dist[-1], rtol=1e-15)
    lap = operator_for(grid).laplacian(H.values)[1:-1]
    assert np.max(np.abs(lap)) < 1e-9


def test_regular_part_refuses_points_near_boundary():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 33, 33)
    with pytest.raises(ValueError, match="boundary"):
        regular_part(grid, 1.05)
    with pytest.raises(ValueError):
        regular_part(grid, 3.5)


@pytest.mark.parametrize("n", [3, 4])
def test_regular_part_converges_to_closed_form(n):
    geo = AnnulusGeometry(n)
    errs, hs = [], []
    for k in (33, 65, 129):
        grid = MeridianGrid.uniform(geo, k, k)
        R, P = grid.mesh()
        errs.append(np.max(np.abs(regular_part(grid, 1.6).values - series_regular_part(geo, 1.6, R, P))))
        hs.append(1.0 / k)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.8


@given(n=st.integers(3, 6), z=st.floats(1.02, 2.95), sign=st.sampled_from([1, -1]),
       delta=st.floats(0.0, 0.3), phi=st.floats(0, np.pi))
def test_series_extension_matches_boundary_data(n, z, sign, delta, phi):
    geo = AnnulusGeometry(n)
    z *= sign
    for rad in (1.0, 3.0):
        got = series_harmonic_extension(geo, z, delta, np.array([rad]), np.array([phi]))
        want = (delta**2 + rad**2 + z**2 - 2 * rad * z * np.cos(phi)) ** ((2 - n) / 2)
        assert got[0] == pytest.approx(want, rel=1e-11)


def test_series_extension_is_harmonic():
    geo = AnnulusGeometry(4, 1.0, 2.5)

    def f(x):
        rho = np.linalg.norm(x, axis=-1)
        return series_harmonic_extension(geo, 1.3, 0.05, rho, np.arctan2(np.linalg.norm(x[:, :-1], axis=-1),
                                                                         x[:, -1]))
    x = np.array([[0.2, 0.1, 0.3, 1.5], [0.0, -0.6, 0.4, -1.2]])
    errs = []
    for h in (4e-3, 2e-3):
        lap = -2 * 4 * f(x)
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            lap = lap + f(x + e) + f(x - e)
        errs.append(np.max(np.abs(lap / h**2)))
    assert errs[1] < errs[0] / 3
    assert errs[1] < 1e-4


def test_series_extension_respects_inner_radius_scaling():
    geo = AnnulusGeometry(3, 2.0, 5.0)
    phi = np.linspace(0, np.pi, 5)
    got = series_harmonic_extension(geo, 3.0, 0.1, np.full(5, 2.0), phi)
    want = (0.01 + 4 + 9 - 12 * np.cos(phi)) ** -0.5
    assert np.allclose(got, want, rtol=1e-12)


def test_green_symmetry():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 257, 257)
    y1, y2 = 1.5, 2.3
    H1, H2 = regular_part(grid, y1), regular_part(grid, y2)
    g12 = 1 / abs(y2 - y1) - H1.at(y2, 0.0)
    g21 = 1 / abs(y1 - y2) - H2.at(y1, 0.0)
    assert g12 == pytest.approx(g21, rel=1e-4)
    G = green_function(grid, y1, H1)
    assert np.isinf(G).sum() <= 1


def test_project_bubble_properties():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 129, 65)
    b = Bubble(3, 0.1, (0.0, 0.0, 1.8))
    PU = project_bubble(grid, b)
    R, P = grid.mesh()
    U = bubble_meridian(b, R, P)
    assert np.all(PU.values[0] == 0) and np.all(PU.values[-1] == 0)
    assert np.all(U - PU.values >= -1e-14)
    assert np.all(PU.values[1:-1] > 0)
    with pytest.raises(ValueError):
        project_bubble(grid, Bubble(3, 0.1, (0.0, 0.0, 0.5)))
    with pytest.raises(ValueError):
        project_bubble(grid, Bubble(3, 0.1, (0.3, 0.0, 1.8)))


def test_projection_defect_decay():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 129, 65)
    H = regular_part(grid, 2.0)
    deltas = np.array([0.2, 0.1, 0.05, 0.025])
    err = [np.max(np.abs(projection_defect(grid, Bubble(3, d, (0.0, 0.0, 2.0)), H)[1:-1])) for d in deltas]
    slope = np.polyfit(np.log(deltas), np.log(err), 1)[0]
    assert abs(slope - 2.5) <= 0.2 * 2.5


def test_series_correction_matches_grid_projection():
    geo = AnnulusGeometry(3)
    b = Bubble(3, 0.05, (0.0, 0.0, 1.4))
    grid = MeridianGrid.uniform(geo, 257, 257)
    R, P = grid.mesh()
    w_grid = bubble_meridian(b, R, P) - project_bubble(grid, b).values
    w_exact = series_correction(geo, b, R, P)
    assert np.max(np.abs(w_grid - w_exact)) < 1e-3 * np.max(np.abs(w_exact))
    assert np.max(w_exact) <= alpha(3) * b.delta ** 0.5 / 0.4 * 1.0001


def test_reflection_point_examples():
    geo = AnnulusGeometry(3)
    x = np.array([0.0, 0.0, 1.1])
    assert np.allclose(reflection_point(geo, x), [0, 0, 0.9])
    y = np.array([0.6, 0.0, 0.8])
    assert np.allclose(reflection_point(geo, y), y)
    z = np.array([2.95, 0.0, 0.0])
    assert np.allclose(reflection_point(geo, z), [3.05, 0, 0])
    with pytest.raises(ValueError, match="equidistant"):
        reflection_point(geo, np.array([0.0, 2.0, 0.0]))


def test_regular_part_near_boundary_tracks_reflection():
    geo = AnnulusGeometry(3)
    y = np.array([0.0, 0.0, 1.1])
    for x_axis in (1.02, 1.05):
        x = np.array([0.0, 0.0, x_axis])
        star = reflection_point(geo, x)
        H = series_regular_part(geo, 1.1, np.array([x_axis]), np.array([0.0]))[0]
        approx = 1 / np.linalg.norm(star - y)
        assert abs(H - approx) < 0.2 * approx


@pytest.mark.parametrize("n", [3, 4, 5])
def test_axial_rule_volume_and_ball(n):
    geo = AnnulusGeometry(n)
    vol = sphere_area(n - 1) * (3.0**n - 1.0) / n
    for z in (1.001, -1.7, 2.9):
        assert axial_rule(geo, z, 1e-3).integrate(1.0) == pytest.approx(vol, rel=1e-12)
    ball = axial_rule(geo, 1.5, 0.01, radius=0.2)
    assert ball.integrate(1.0) == pytest.approx(sphere_area(n - 1) * 0.2**n / n, rel=1e-12)
