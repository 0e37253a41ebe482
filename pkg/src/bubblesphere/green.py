"""Discrete harmonic machinery on the annulus meridian.

The axisymmetric Laplacian

    u_rr + (n-1)/r u_r + r^-2 (u_phiphi + (n-2) cot(phi) u_phi)

is discretised in conservative (vertex-centred finite-volume) form: each node
owns the dual cell bounded by the mid-points to its neighbours, and

    -Delta_h u = W^-1 K u

with ``W`` the exact dual-cell volumes (volume element
``|S^(n-2)| r^(n-1) sin^(n-2)(phi) dr dphi``) and ``K`` the symmetric stiffness
matrix of two-point fluxes.  The axis rows ``phi = 0, pi`` need no ghost
values: their dual cells are half cells whose only angular flux is through
the interior face, which reproduces the ``cot(phi) u_phi -> u_phiphi`` limit
to second order.  ``u^T K u`` is the discrete Dirichlet energy.
"""

import threading

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import beta, betainc, gamma

from ._validation import NumericalFailure
from .bubble import alpha, axis_distance_sq, bubble_meridian
from .grid import MeridianField, symmetrize


def sphere_area(k):
    """Surface measure of the unit sphere S^k in R^(k+1)."""
    return 2.0 * np.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


def _sin_power_integral(theta, k):
    """``int_0^theta sin(s)^k ds`` for theta in [0, pi]."""
    theta = np.asarray(theta, dtype=float)
    a = (k + 1) / 2
    total = beta(a, 0.5)
    low = np.minimum(theta, np.pi - theta)
    part = 0.5 * total * betainc(a, 0.5, np.sin(low) ** 2)
    return np.where(theta <= np.pi / 2, part, total - part)


def _radial_power_integral(lo, hi, k):
    """``int_lo^hi r^k dr``."""
    if k == -1:
        return np.log(hi / lo)
    return (hi ** (k + 1) - lo ** (k + 1)) / (k + 1)


class AxisymmetricOperator:
    """Stiffness matrix, dual-cell volumes and cached factorisations for one grid."""

    def __init__(self, grid):
        self.grid = grid
        n = grid.n
        r, phi = grid.r, grid.phi
        nr, nphi = grid.shape
        k = n - 2
        area = sphere_area(n - 2)

        r_face = 0.5 * (r[1:] + r[:-1])
        r_lo = np.concatenate([[r[0]], r_face])
        r_hi = np.concatenate([r_face, [r[-1]]])
        phi_face = 0.5 * (phi[1:] + phi[:-1])
        phi_lo = np.concatenate([[0.0], phi_face])
        phi_hi = np.concatenate([phi_face, [np.pi]])

        rad_vol = _radial_power_integral(r_lo, r_hi, n - 1)
        rad_ang = _radial_power_integral(r_lo, r_hi, n - 3)
        ang_vol = _sin_power_integral(phi_hi, k) - _sin_power_integral(phi_lo, k)
        a_face = r_face ** (n - 1) / np.diff(r)
        b_face = np.sin(phi_face) ** k / np.diff(phi)
        if grid.phi_symmetric:
            ang_vol = 0.5 * (ang_vol + ang_vol[::-1])
            b_face = 0.5 * (b_face + b_face[::-1])

        self.weights = area * np.outer(rad_vol, ang_vol)
        self.inv_radius = 1.0 / r

        idx = np.arange(nr * nphi).reshape(nr, nphi)
        rows, cols, vals = [], [], []
        # radial faces (i, j) -- (i+1, j)
        c = area * np.outer(a_face, ang_vol)
        rows.append(idx[:-1, :].ravel())
        cols.append(idx[1:, :].ravel())
        vals.append(c.ravel())
        # angular faces (i, j) -- (i, j+1)
        c = area * np.outer(rad_ang, b_face)
        rows.append(idx[:, :-1].ravel())
        cols.append(idx[:, 1:].ravel())
        vals.append(c.ravel())
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        off = sp.coo_matrix((-vals, (rows, cols)), shape=(idx.size, idx.size))
        off = off + off.T
        diag = -np.asarray(off.sum(axis=1)).ravel()
        self.K = (off + sp.diags(diag)).tocsr()

        interior = np.zeros(grid.shape, dtype=bool)
        interior[1:-1, :] = True
        self.interior = interior
        self.free = idx[1:-1, :].ravel()
        self.fixed = np.concatenate([idx[0, :], idx[-1, :]])
        self.K_ff = self.K[self.free][:, self.free].tocsc()
        self.K_fb = self.K[self.free][:, self.fixed].tocsc()
        self._lu = None
        self._lock = threading.Lock()

    def factor(self):
        with self._lock:
            if self._lu is None:
                try:
                    self._lu = spla.splu(self.K_ff, permc_spec="MMD_AT_PLUS_A")
                except RuntimeError as exc:
                    raise NumericalFailure(
                        f"factorisation of the Laplacian failed on {self.grid!r}: {exc}",
                        shape=self.grid.shape, spacing=self.grid.spacing) from exc
            return self._lu

    def apply(self, values):
        """``K u`` as a grid array."""
        return (self.K @ values.ravel()).reshape(self.grid.shape)

    def laplacian(self, values):
        """``Delta_h u`` at every node (boundary rows included, using one-sided cells)."""
        return -self.apply(values) / self.weights

    def dirichlet_energy(self, values):
        v = values.ravel()
        return float(v @ (self.K @ v))

    def integrate(self, values):
        return float(np.sum(self.weights * values))

    def inner(self, a, b):
        """Discrete H^1_0 inner product ``a^T K b``."""
        return float(a.ravel() @ (self.K @ b.ravel()))


_CACHE = {}
_CACHE_LOCK = threading.Lock()


def operator_for(grid):
    """Cached AxisymmetricOperator for ``grid`` (thread-safe)."""
    with _CACHE_LOCK:
        op = _CACHE.get(grid.key)
        if op is None:
            op = AxisymmetricOperator(grid)
            if len(_CACHE) >= 8:
                _CACHE.pop(next(iter(_CACHE)))
            _CACHE[grid.key] = op
        return op


def poisson_solve(grid, source, dirichlet=None):
    """Solve ``-Delta_h v = source`` on interior nodes with ``v = dirichlet`` on the
    spheres ``r = r_inner, r_outer``.

    ``source`` is a MeridianField or array; ``dirichlet`` is ``None`` (zero), a
    pair ``(inner_values, outer_values)`` of arrays over phi, or a full grid
    array whose boundary rows are used.  Axis regularity is built into the
    operator.  The result inherits the source's symmetry when the boundary data
    is zero.
    """
    op = operator_for(grid)
    symmetry = "none"
    if isinstance(source, MeridianField):
        if source.grid != grid:
            raise ValueError("source lives on a different grid")
        symmetry = source.symmetry
        source = source.values
    source = np.asarray(source, dtype=float)
    if source.shape != grid.shape:
        raise ValueError(f"source shape {source.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(source)):
        raise ValueError("source contains non-finite values")
    boundary = np.zeros(2 * grid.nphi)
    if dirichlet is not None:
        if isinstance(dirichlet, tuple):
            boundary = np.concatenate([np.broadcast_to(dirichlet[0], grid.nphi),
                                       np.broadcast_to(dirichlet[1], grid.nphi)]).astype(float)
        else:
            dirichlet = np.asarray(dirichlet, dtype=float)
            boundary = np.concatenate([dirichlet[0], dirichlet[-1]])
        if np.any(boundary != 0):
            symmetry = "none"
    rhs = (op.weights * source).ravel()[op.free] - op.K_fb @ boundary
    lu = op.factor()
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise NumericalFailure("Poisson solve produced non-finite values",
                               shape=grid.shape, spacing=grid.spacing)
    values = np.empty(grid.shape)
    values[1:-1, :] = sol.reshape(grid.nr - 2, grid.nphi)
    values[0, :] = boundary[: grid.nphi]
    values[-1, :] = boundary[grid.nphi:]
    return MeridianField(grid, symmetrize(values, symmetry), symmetry)


def harmonic_extension(grid, inner, outer):
    """Discrete-harmonic field with the given boundary values on the two spheres."""
    return poisson_solve(grid, np.zeros(grid.shape), (inner, outer))


def green_constant(n):
    """``gamma_n = 1 / ((n-2)|S^(n-1)|)``."""
    return 1.0 / ((n - 2) * sphere_area(n - 1))


def regular_part(grid, y):
    """``H(., y)`` for an axis point ``y = y e_n`` (scalar signed coordinate).

    ``H`` is discrete-harmonic with boundary values ``|x - y|^(2-n)``; the
    Dirichlet Green function is ``gamma_n (|x - y|^(2-n) - H)``.
    """
    g = grid.geometry
    y = float(np.ravel(y)[-1]) if np.ndim(y) else float(y)
    dist = min(abs(y) - g.r_inner, g.r_outer - abs(y))
    if dist <= 0:
        raise ValueError(f"y = {y} is not inside the annulus ({g.r_inner}, {g.r_outer})")
    near_inner = abs(y) - g.r_inner < g.r_outer - abs(y)
    h_r = grid.r[1] - grid.r[0] if near_inner else grid.r[-1] - grid.r[-2]
    h_phi = grid.phi[1] - grid.phi[0] if y >= 0 else grid.phi[-1] - grid.phi[-2]
    h = max(h_r, abs(y) * h_phi)
    if dist < 2 * h:
        raise ValueError(
            f"y = {y} is {dist:.3g} from the boundary, under twice the local spacing "
            f"{h:.3g}; refine the grid near the pole or move y inward")
    n = grid.n
    inner = axis_distance_sq(g.r_inner, grid.phi, y) ** ((2 - n) / 2)
    outer = axis_distance_sq(g.r_outer, grid.phi, y) ** ((2 - n) / 2)
    return harmonic_extension(grid, inner, outer)


def green_function(grid, y, H=None):
    """``G(., y)`` on the grid (infinite at the node coinciding with ``y``, if any)."""
    if H is None:
        H = regular_part(grid, y)
    R, P = grid.mesh()
    with np.errstate(divide="ignore"):
        free = axis_distance_sq(R, P, y) ** ((2 - grid.n) / 2)
    return green_constant(grid.n) * (free - H.values)


def project_bubble(grid, b):
    """``PU = U - w`` with ``w`` the discrete-harmonic extension of ``U`` restricted to the boundary."""
    if not b.on_axis:
        raise ValueError("only bubbles centred on the x_n axis are axisymmetric")
    g = grid.geometry
    z = b.axis_position
    if not g.r_inner < abs(z) < g.r_outer:
        raise ValueError(f"bubble centre {z} lies outside the annulus")
    R, P = grid.mesh()
    U = bubble_meridian(b, R, P)
    w = harmonic_extension(grid, U[0], U[-1])
    values = U - w.values
    values[0, :] = 0.0
    values[-1, :] = 0.0
    return MeridianField(grid, values)


def harmonic_correction(grid, b):
    """The harmonic part ``w = U - PU`` of a projected bubble."""
    R, P = grid.mesh()
    U = bubble_meridian(b, R, P)
    return harmonic_extension(grid, U[0], U[-1])


def projection_defect(grid, b, H=None):
    """``PU - (U - alpha_n delta^((n-2)/2) H(., xi))`` at every node."""
    if H is None:
        H = regular_part(grid, b.axis_position)
    w = harmonic_correction(grid, b)
    n = b.n
    return alpha(n) * b.delta ** ((n - 2) / 2) * H.values - w.values


def reflection_point(geometry, x):
    """Reflect ``x`` across the nearest boundary sphere along its ray."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != geometry.n:
        raise ValueError(f"x must have {geometry.n} components")
    rad = float(np.linalg.norm(x))
    if rad == 0:
        raise ValueError("the origin has no radial direction")
    d_in = rad - geometry.r_inner
    d_out = geometry.r_outer - rad
    if d_in < -1e-14 or d_out < -1e-14:
        raise ValueError("x lies outside the closed annulus")
    if abs(d_in - d_out) <= 1e-12 * geometry.r_outer:
        raise ValueError("x is equidistant from both spheres; the reflection is ambiguous")
    a = geometry.r_inner if d_in < d_out else geometry.r_outer
    return x * ((2 * a - rad) / rad)

