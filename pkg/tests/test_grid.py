import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bubblesphere.grid import (
    AnnulusGeometry,
    MeridianField,
    MeridianGrid,
    clustered_nodes,
    nodes_required,
    symmetrize,
    symmetry_defect,
    to_meridian,
)


def test_geometry_validation():
    with pytest.raises(ValueError):
        AnnulusGeometry(3, 2.0, 1.0)
    with pytest.raises(ValueError):
        AnnulusGeometry(2)
    g = AnnulusGeometry(3)
    assert g.width == 2.0
    assert list(g.contains(np.array([[0, 0, 1.5], [0, 0, 0.5]]))) == [True, False]


def test_uniform_nodes_without_foci():
    assert np.allclose(clustered_nodes(1.0, 3.0, 5), [1.0, 1.5, 2.0, 2.5, 3.0])


@given(c=st.floats(1.05, 2.95), h=st.floats(1e-4, 1e-2), num=st.integers(60, 400))
def test_clustered_nodes_monotone_and_focused(c, h, num):
    need = nodes_required(1.0, 3.0, [(c, h)], 1.08)
    if num < need + 2:
        num = int(need) + 2
    x = clustered_nodes(1.0, 3.0, num, [(c, h)], 1.08, exact=True)
    assert x[0] == 1.0 and x[-1] == 3.0
    assert np.all(np.diff(x) > 0)
    i = np.searchsorted(x, c)
    local = np.diff(x)[max(i - 1, 0)]
    assert local <= 1.2 * h * (1 + 0.08 * 2)


def test_exact_mode_refuses_too_few_nodes():
    with pytest.raises(ValueError):
        clustered_nodes(1.0, 3.0, 20, [(1.5, 1e-5)], 1.08, exact=True)


def test_symmetric_graded_grid():
    g = MeridianGrid.graded(AnnulusGeometry(3), 65, 65, [(1.2, 0.01)], [(0.0, 0.01)], 1.1, symmetric=True)
    assert np.allclose(g.phi + g.phi[::-1], np.pi, atol=1e-14)
    assert g.phi_symmetric


def test_symmetrize_and_defect():
    v = np.random.default_rng(0).standard_normal((5, 7))
    for sym, sign in (("even", 1), ("odd", -1)):
        s = symmetrize(v, sym)
        assert symmetry_defect(s, sym) == 0.0
        assert np.array_equal(s, sign * s[:, ::-1])
    assert symmetrize(v, "none") is v
    with pytest.raises(ValueError):
        symmetrize(v, "weird")


def test_to_meridian():
    r, phi = to_meridian(np.array([[0.0, 0.0, 2.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.5]]))
    assert np.allclose(r, [2.0, 1.0, 1.5])
    assert np.allclose(phi, [0.0, np.pi / 2, np.pi])


def test_field_csv_round_trip(tmp_path):
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 9, 9)
    f = MeridianField.from_function(grid, lambda r, p: r * np.cos(p) + 1 / 3)
    f.save(tmp_path / "f.csv", tmp_path / "f.json")
    g = MeridianField.load(tmp_path / "f.csv", tmp_path / "f.json")
    assert np.array_equal(g.values, f.values)
    assert g.grid == grid
    header = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert header == "r,phi,value"


def test_field_interpolation_is_bicubic_exact_on_cubics():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 33, 33)
    f = MeridianField.from_function(grid, lambda r, p: r**3 - 2 * r * p**2 + p)
    r, p = np.array([1.13, 2.71]), np.array([0.37, 2.9])
    assert np.allclose(f.at(r, p), r**3 - 2 * r * p**2 + p, atol=1e-10)
    with pytest.raises(ValueError):
        f.at(np.array([0.5]), np.array([0.1]))


def test_field_symmetry_enforced():
    grid = MeridianGrid.uniform(AnnulusGeometry(3), 9, 9)
    with pytest.raises(ValueError):
        MeridianField(grid, np.random.default_rng(0).standard_normal(grid.shape), "odd")
