"""Meridian grids on the annulus ``{r_inner < |x| < r_outer}`` and grid fields.

An axisymmetric function on the annulus is stored on the tensor grid of
meridian coordinates ``(r, phi)``, ``phi`` being the polar angle from the
positive x_n axis.  Node coordinates may be non-uniform (graded grids cluster
nodes around concentration points).
"""

import csv
import hashlib
import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RectBivariateSpline

from ._validation import check_dimension, check_finite_array, check_positive

SYMMETRIES = ("none", "even", "odd")


@dataclass(frozen=True)
class AnnulusGeometry:
    n: int
    r_inner: float = 1.0
    r_outer: float = 3.0

    def __post_init__(self):
        check_dimension(self.n)
        check_positive(self.r_inner, "r_inner")
        check_positive(self.r_outer, "r_outer")
        if not self.r_inner < self.r_outer:
            raise ValueError(f"need r_inner < r_outer, got {self.r_inner} >= {self.r_outer}")

    @property
    def width(self):
        return self.r_outer - self.r_inner

    def contains(self, x):
        rr = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return (rr > self.r_inner) & (rr < self.r_outer)


def clustered_nodes(a, b, num, foci=(), growth=1.05, exact=False):
    """``num`` nodes on ``[a, b]`` equidistributing the density
    ``sum_k 1 / (h_k + (growth - 1)|x - c_k|)`` of the foci ``(c_k, h_k)``.

    Near a dominant focus the spacing is proportional to ``h_k`` and grows
    geometrically away from it.  By default the density is rescaled to give
    ``num`` nodes; with ``exact=True`` the focus spacings are kept and the
    spare nodes are spread uniformly instead (ValueError if ``num`` is too
    small, see :func:`nodes_required`).  The cumulative density is analytic,
    so the nodes depend smoothly on the foci.
    """
    if num < 2:
        raise ValueError("need at least two nodes")
    if not foci:
        return np.linspace(a, b, num)
    g = growth - 1.0
    if g <= 0:
        raise ValueError("growth must exceed 1")
    cs = np.array([c for c, _ in foci], dtype=float)
    hs = np.array([h for _, h in foci], dtype=float)
    if np.any(hs <= 0):
        raise ValueError("focus spacings must be positive")

    fill = 0.0
    if exact:
        spare = num - 1 - nodes_required(a, b, foci, growth)
        if spare < 0:
            raise ValueError(f"{num} nodes cannot honour the focus spacings on [{a}, {b}]")
        fill = spare / (b - a)

    def cumulative(x):
        dx = x[:, None] - cs
        return np.sum(np.sign(dx) * np.log1p(g * np.abs(dx) / hs), axis=1) / g + fill * x

    def density(x):
        return np.sum(1.0 / (hs + g * np.abs(x[:, None] - cs)), axis=1) + fill

    samples = [np.linspace(a, b, 2001)]
    for c, h in zip(cs, hs):
        for end in (a, b):
            span = abs(end - c)
            if span > 0:
                s = h * np.expm1(np.linspace(0.0, np.log1p(g * span / h), 800)) / g
                samples.append(c + np.sign(end - c) * np.minimum(s, span))
    xs = np.unique(np.clip(np.concatenate(samples), a, b))
    cum = cumulative(xs)
    targets = np.linspace(cum[0], cum[-1], num)
    nodes = np.interp(targets, cum, xs)
    for _ in range(6):
        nodes = np.clip(nodes - (cumulative(nodes) - targets) / density(nodes), a, b)
    nodes[0], nodes[-1] = a, b
    if np.any(np.diff(nodes) <= 0):
        raise ValueError("focus spacing too small for the requested node count")
    return nodes


def nodes_required(a, b, foci, growth):
    """Number of cells the focus density of :func:`clustered_nodes` places on ``[a, b]``."""
    g = growth - 1.0
    total = 0.0
    for c, h in foci:
        total += (np.log1p(g * max(b - c, 0.0) / h) + np.log1p(g * max(c - a, 0.0) / h)
                  - (np.log1p(g * (a - c) / h) if c < a else 0.0)
                  - (np.log1p(g * (c - b) / h) if c > b else 0.0)) / g
    return total


class MeridianGrid:
    """Tensor grid of meridian nodes ``r[0] = r_inner < ... < r[-1] = r_outer``,
    ``phi[0] = 0 < ... < phi[-1] = pi``."""

    def __init__(self, geometry, r, phi):
        r = check_finite_array(r, "r").copy()
        phi = check_finite_array(phi, "phi").copy()
        if r.ndim != 1 or phi.ndim != 1:
            raise ValueError("node arrays must be one-dimensional")
        if r.size < 8 or phi.size < 8:
            raise ValueError(f"grids need at least 8 nodes per direction, got {r.size}x{phi.size}")
        if np.any(np.diff(r) <= 0) or np.any(np.diff(phi) <= 0):
            raise ValueError("node arrays must be strictly increasing")
        if not (np.isclose(r[0], geometry.r_inner, rtol=0, atol=1e-14 * geometry.r_outer)
                and np.isclose(r[-1], geometry.r_outer, rtol=0, atol=1e-14 * geometry.r_outer)):
            raise ValueError("radial nodes must span [r_inner, r_outer]")
        if abs(phi[0]) > 1e-14 or abs(phi[-1] - np.pi) > 1e-14:
            raise ValueError("angular nodes must span [0, pi]")
        r[0], r[-1] = geometry.r_inner, geometry.r_outer
        phi[0], phi[-1] = 0.0, np.pi
        self.geometry = geometry
        self.r = r
        self.phi = phi
        self.r.flags.writeable = False
        self.phi.flags.writeable = False
        self.phi_symmetric = bool(np.allclose(phi + phi[::-1], np.pi, rtol=0, atol=1e-12))
        digest = hashlib.sha1()
        digest.update(np.asarray([geometry.n, geometry.r_inner, geometry.r_outer]).tobytes())
        digest.update(r.tobytes())
        digest.update(phi.tobytes())
        self.key = digest.hexdigest()

    @classmethod
    def uniform(cls, geometry, nr=257, nphi=129):
        return cls(geometry, np.linspace(geometry.r_inner, geometry.r_outer, nr),
                   np.linspace(0.0, np.pi, nphi))

    @classmethod
    def graded(cls, geometry, nr, nphi, r_foci=(), phi_foci=(), growth=1.05, symmetric=False,
               exact=False):
        """Grid clustered around ``r_foci``/``phi_foci`` (lists of ``(centre, spacing)``).

        With ``symmetric=True`` the angular foci are mirrored through pi/2 and the
        angular nodes are made exactly symmetric under ``phi -> pi - phi``.
        """
        r = clustered_nodes(geometry.r_inner, geometry.r_outer, nr, list(r_foci), growth, exact)
        phi_foci = list(phi_foci)
        if symmetric:
            phi_foci = phi_foci + [(np.pi - c, h) for c, h in phi_foci]
        phi = clustered_nodes(0.0, np.pi, nphi, phi_foci, growth, exact)
        if symmetric:
            half = nphi // 2
            phi[:half] = 0.5 * (phi[:half] + (np.pi - phi[::-1][:half]))
            phi[nphi - half:] = (np.pi - phi[:half])[::-1]
            if nphi % 2:
                phi[half] = np.pi / 2
        return cls(geometry, r, phi)

    @property
    def n(self):
        return self.geometry.n

    @property
    def nr(self):
        return self.r.size

    @property
    def nphi(self):
        return self.phi.size

    @property
    def shape(self):
        return (self.nr, self.nphi)

    @property
    def spacing(self):
        """Smallest radial and angular spacings."""
        return float(np.min(np.diff(self.r))), float(np.min(np.diff(self.phi)))

    def mesh(self):
        return np.meshgrid(self.r, self.phi, indexing="ij")

    def cartesian_axis_coords(self):
        """``(rho, z)``: distance from the x_n axis and the x_n coordinate of every node."""
        R, P = self.mesh()
        return R * np.sin(P), R * np.cos(P)

    def metadata(self):
        return {
            "n": self.n,
            "r_inner": self.geometry.r_inner,
            "r_outer": self.geometry.r_outer,
            "nr": self.nr,
            "nphi": self.nphi,
            "phi_symmetric": self.phi_symmetric,
            "grid_key": self.key,
        }

    def __eq__(self, other):
        return isinstance(other, MeridianGrid) and other.key == self.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"MeridianGrid(n={self.n}, nr={self.nr}, nphi={self.nphi}, key={self.key[:8]})"


def symmetrize(values, symmetry):
    """Project grid values onto the even/odd class under ``phi -> pi - phi``."""
    if symmetry == "none":
        return values
    mirrored = values[:, ::-1]
    if symmetry == "even":
        return 0.5 * (values + mirrored)
    if symmetry == "odd":
        return 0.5 * (values - mirrored)
    raise ValueError(f"unknown symmetry {symmetry!r}")


def symmetry_defect(values, symmetry):
    if symmetry == "none":
        return 0.0
    sign = 1.0 if symmetry == "even" else -1.0
    return float(np.max(np.abs(values - sign * values[:, ::-1])))


def to_meridian(x):
    """Cartesian points (..., n) -> (r, phi)."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    rho = np.linalg.norm(x[..., :-1], axis=-1)
    return r, np.arctan2(rho, x[..., -1])


class MeridianField:
    """Values of an axisymmetric function at the nodes of a MeridianGrid."""

    def __init__(self, grid, values, symmetry="none"):
        values = check_finite_array(values, "field values")
        if values.shape != grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {grid.shape}")
        if symmetry not in SYMMETRIES:
            raise ValueError(f"symmetry must be one of {SYMMETRIES}, got {symmetry!r}")
        if symmetry != "none":
            if not grid.phi_symmetric:
                raise ValueError("even/odd fields need an angularly symmetric grid")
            if symmetry_defect(values, symmetry) != 0.0:
                raise ValueError(f"values are not exactly {symmetry} under phi -> pi - phi")
        self.grid = grid
        self.values = values
        self.symmetry = symmetry
        self._spline = None

    @classmethod
    def from_function(cls, grid, func, symmetry="none"):
        """Sample ``func(r, phi)`` on the grid, projecting onto ``symmetry``."""
        R, P = grid.mesh()
        return cls(grid, symmetrize(np.asarray(func(R, P), dtype=float), symmetry), symmetry)

    @classmethod
    def zeros(cls, grid, symmetry="none"):
        return cls(grid, np.zeros(grid.shape), symmetry)

    def with_symmetry(self, symmetry):
        return MeridianField(self.grid, symmetrize(self.values, symmetry), symmetry)

    def copy(self):
        return MeridianField(self.grid, self.values.copy(), self.symmetry)

    def _combine(self, other, op):
        if isinstance(other, MeridianField):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            sym = self.symmetry if self.symmetry == other.symmetry else "none"
            return MeridianField(self.grid, op(self.values, other.values), sym)
        return NotImplemented

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return MeridianField(self.grid, self.values * scalar, self.symmetry)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def boundary_max(self):
        return float(max(np.max(np.abs(self.values[0])), np.max(np.abs(self.values[-1]))))

    def interpolator(self):
        """Bicubic spline on the (possibly non-uniform) node grid."""
        if self._spline is None:
            self._spline = RectBivariateSpline(self.grid.r, self.grid.phi, self.values, kx=3, ky=3, s=0)
        return self._spline

    def at(self, r, phi, guard=True):
        r = np.asarray(r, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if guard:
            g = self.grid
            tol = 1e-12 * g.geometry.r_outer
            if np.any(r < g.r[0] - tol) or np.any(r > g.r[-1] + tol):
                raise ValueError("interpolation query outside the radial range of the grid")
            if np.any(phi < -1e-12) or np.any(phi > np.pi + 1e-12):
                raise ValueError("interpolation query outside [0, pi]")
        return self.interpolator()(r, phi, grid=False)

    def at_cartesian(self, x):
        r, phi = to_meridian(x)
        return self.at(r, phi)

    def to_csv(self, path):
        R, P = self.grid.mesh()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "phi", "value"])
            for a, b, v in zip(R.ravel(), P.ravel(), self.values.ravel()):
                w.writerow([f"{a:.17g}", f"{b:.17g}", f"{v:.17g}"])

    def sidecar(self, **extra):
        meta = dict(self.grid.metadata(), symmetry=self.symmetry)
        meta.update(extra)
        return meta

    def save(self, csv_path, json_path, **extra):
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(**extra), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, csv_path, json_path):
        with open(json_path) as fh:
            meta = json.load(fh)
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        r = np.unique(data[:, 0])
        phi = np.unique(data[:, 1])
        geometry = AnnulusGeometry(meta["n"], meta["r_inner"], meta["r_outer"])
        grid = MeridianGrid(geometry, r, phi)
        values = data[:, 2].reshape(grid.shape)
        return cls(grid, values, meta.get("symmetry", "none"))
