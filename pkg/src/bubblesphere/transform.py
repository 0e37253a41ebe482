"""Biradial lifts: axisymmetric fields on an annulus of R^(m+1) as fields of (|y1|, |y2|) in R^(2m).

The meridian half-plane map ``s + i t -> (s + i t)^2 / 2`` sends ``(s, t)`` to
``rho = (s^2 + t^2)/2`` and ``phi = 2 arg(s + i t)``.  It turns the sphere
``|y| = a`` into ``|x| = a^2/2`` and satisfies

    Delta_{2m}(u o T)(y) = 2 |T(y)| (Delta_{m+1} u)(T(y)),

so ``-Delta v = |v|^(q-1) v`` upstairs corresponds to the 1/(2|x|)-weighted
equation downstairs.  The identity is checked numerically here, never assumed.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .bubble import critical_exponent
from .grid import MeridianField


def meridian_map(s, t):
    """``(rho, phi)`` with ``rho = (s^2+t^2)/2`` and ``cos(phi) = (s^2-t^2)/(s^2+t^2)``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("s and t are norms and must be non-negative")
    if np.any((s == 0) & (t == 0)):
        raise ValueError("the origin has no image under the meridian map")
    return 0.5 * (s * s + t * t), 2.0 * np.arctan2(t, s)


def inverse_meridian_map(rho, phi):
    rho = np.asarray(rho, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rho must be positive")
    root = np.sqrt(2.0 * rho)
    return root * np.cos(phi / 2), root * np.sin(phi / 2)


def upper_radii(geometry):
    """Radii ``(a, b)`` of the annulus in R^(2m) covering ``geometry``."""
    return np.sqrt(2.0 * geometry.r_inner), np.sqrt(2.0 * geometry.r_outer)


def _check_m(m, n):
    if int(m) != m or m < 2:
        raise ValueError(f"m must be an integer >= 2, got {m}")
    if n is not None and n != m + 1:
        raise ValueError(f"a field on R^{n} lifts with m = {n - 1}, not m = {m}")
    return int(m)


def _guarded_eval(u, rho, phi):
    """Bicubic evaluation; one grid cell of slack in rho is clamped, anything further raises."""
    g = u.grid
    lo_band = g.r[1] - g.r[0]
    hi_band = g.r[-1] - g.r[-2]
    if np.any(rho < g.r[0] - lo_band) or np.any(rho > g.r[-1] + hi_band):
        raise ValueError("lift query falls outside the meridian grid and its one-cell guard band")
    return u.at(np.clip(rho, g.r[0], g.r[-1]), np.clip(phi, 0.0, np.pi))


def lift_values(u, s, t):
    """``v(y) = u(T(|y1|, |y2|))`` at norm pairs ``(s, t)``."""
    rho, phi = meridian_map(s, t)
    return _guarded_eval(u, rho, phi)


@dataclass
class BiradialField:
    """Lifted field on a tensor grid of ``(s, t) = (|y1|, |y2|)``; NaN outside the annulus."""

    m: int
    s: np.ndarray
    t: np.ndarray
    values: np.ndarray
    a: float
    b: float
    meta: dict = field(default_factory=dict)

    def inside(self):
        S, T = np.meshgrid(self.s, self.t, indexing="ij")
        rad = np.hypot(S, T)
        return (rad >= self.a) & (rad <= self.b)

    def to_csv(self, path):
        S, T = np.meshgrid(self.s, self.t, indexing="ij")
        keep = self.inside()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "t", "value"])
            for a, b, v in zip(S[keep], T[keep], self.values[keep]):
                w.writerow([f"{a:.17g}", f"{b:.17g}", f"{v:.17g}"])

    def sidecar(self):
        out = {"m": self.m, "a": float(self.a), "b": float(self.b),
               "ns": int(self.s.size), "nt": int(self.t.size)}
        out.update(self.meta)
        return out

    def save(self, csv_path, json_path):
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def argmax(self):
        """``(s, t, value)`` at the node of largest ``|v|`` inside the annulus."""
        vals = np.where(self.inside(), np.abs(self.values), -np.inf)
        i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
        return float(self.s[i]), float(self.t[j]), float(self.values[i, j])


def lift(u, m=None, num=257, source=None):
    """Lift a meridian field to the ``(s, t)`` quarter plane of the covering annulus."""
    if not isinstance(u, MeridianField):
        raise TypeError("lift expects a MeridianField")
    n = u.grid.n
    m = _check_m(n - 1 if m is None else m, n)
    a, b = upper_radii(u.grid.geometry)
    s = np.linspace(0.0, b, num)
    t = np.linspace(0.0, b, num)
    S, T = np.meshgrid(s, t, indexing="ij")
    rad = np.hypot(S, T)
    inside = (rad >= a) & (rad <= b)
    values = np.full(S.shape, np.nan)
    values[inside] = lift_values(u, S[inside], T[inside])
    meta = {"source": source} if source is not None else {}
    return BiradialField(m, s, t, values, float(a), float(b), meta)


class BiradialLift(BaseEstimator, TransformerMixin):
    """Estimator-style wrapper: ``fit`` on a meridian field, ``transform`` points of R^(2m)."""

    def __init__(self, m=2):
        self.m = m

    def fit(self, u, y=None):
        if not isinstance(u, MeridianField):
            raise TypeError("BiradialLift.fit expects a MeridianField")
        _check_m(self.m, u.grid.n)
        self.field_ = u
        self.radii_ = upper_radii(u.grid.geometry)
        return self

    def transform(self, Y):
        check_is_fitted(self, "field_")
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if Y.shape[1] != 2 * self.m:
            raise ValueError(f"points must have {2 * self.m} coordinates")
        s = np.linalg.norm(Y[:, : self.m], axis=1)
        t = np.linalg.norm(Y[:, self.m:], axis=1)
        return lift_values(self.field_, s, t)


# --------------------------------------------------------------------------
# Operator identity


def _cartesian_eval(u, x):
    """Axisymmetric ``u(rho, phi)`` at Cartesian points ``x`` of R^(m+1) (axis = last coordinate)."""
    rho = np.linalg.norm(x, axis=-1)
    perp = np.linalg.norm(x[..., :-1], axis=-1)
    return u(rho, np.arctan2(perp, x[..., -1]))


def _lifted_eval(u, y, m):
    s = np.linalg.norm(y[..., :m], axis=-1)
    t = np.linalg.norm(y[..., m:], axis=-1)
    rho, phi = meridian_map(s, t)
    return u(rho, phi)


def _fd_laplacian(f, pts, h):
    """Second-order central-difference Laplacian of ``f`` at each row of ``pts``."""
    d = pts.shape[1]
    centre = f(pts)
    total = -2.0 * d * centre
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        total = total + f(pts + e) + f(pts - e)
    return total / (h * h), centre


def _embed(y, m):
    """Cartesian points of R^(m+1) with the meridian coordinates of ``T(y)``."""
    s = np.linalg.norm(y[:, :m], axis=1)
    t = np.linalg.norm(y[:, m:], axis=1)
    rho, phi = meridian_map(s, t)
    x = np.zeros((y.shape[0], m + 1))
    x[:, 0] = rho * np.sin(phi)
    x[:, -1] = rho * np.cos(phi)
    return x, rho


def sample_points(m, a, b, count=24, seed=0, margin=0.1):
    """Random points of R^(2m) with ``a + margin < |y| < b - margin``."""
    rng = np.random.default_rng(seed)
    y = rng.standard_normal((count, 2 * m))
    y /= np.linalg.norm(y, axis=1)[:, None]
    rad = rng.uniform(a + margin, b - margin, count)
    return y * rad[:, None]


def identity_discrepancy(u, m, points, h):
    """Max of ``|Delta_{2m}(u o T) - 2|T| Delta_{m+1} u o T|`` over ``points`` and its scale."""
    lhs, _ = _fd_laplacian(lambda y: _lifted_eval(u, y, m), points, h)
    x, rho = _embed(points, m)
    lap, _ = _fd_laplacian(lambda z: _cartesian_eval(u, z), x, h)
    rhs = 2.0 * rho * lap
    scale = max(float(np.max(np.abs(rhs))), float(np.max(np.abs(lhs))), 1.0)
    return float(np.max(np.abs(lhs - rhs))), scale


def _as_callable(u):
    if isinstance(u, MeridianField):
        return lambda rho, phi: _guarded_eval(u, rho, phi)
    if callable(u):
        return u
    raise TypeError("u must be a callable u(rho, phi) or a MeridianField")


def verify_correspondence(u, m, radii=(np.sqrt(2.0), np.sqrt(6.0)), steps=(0.04, 0.02, 0.01),
                          points=None, seed=0, count=24, min_order=1.8, name="field"):
    """Finite-difference check of the operator identity behind the lift.

    ``u(rho, phi)`` is an axisymmetric field on R^(m+1).  The discrepancy is
    measured at each step in ``steps``; its log-log slope is the fitted
    order.  A discrepancy at round-off level for every step means the finite
    differences are exact for this field, which passes without an order.
    """
    m = _check_m(m, None)
    f = _as_callable(u)
    a, b = radii
    if points is None:
        points = sample_points(m, a, b, count, seed)
    steps = np.asarray(sorted(steps, reverse=True), dtype=float)
    errs, scale = [], 1.0
    for h in steps:
        e, scale = identity_discrepancy(f, m, points, h)
        errs.append(e / scale)
    errs = np.asarray(errs)
    floor = 1e-9
    exact = bool(np.all(errs < floor))
    order = None
    if not exact:
        order = float(np.polyfit(np.log(steps), np.log(np.maximum(errs, 1e-300)), 1)[0])
    return {"name": name, "m": m, "steps": steps.tolist(), "relative_discrepancy": errs.tolist(),
            "order": order, "exact": exact, "pass": bool(exact or order >= min_order)}


def polynomial_fields():
    """Test fields ``x_n``, ``|x|^2`` and ``x_n |x|^2`` as functions of ``(rho, phi)``."""
    return {
        "x_n": lambda rho, phi: rho * np.cos(phi),
        "|x|^2": lambda rho, phi: rho**2,
        "x_n |x|^2": lambda rho, phi: rho**3 * np.cos(phi),
    }


def random_field(seed, modes=4):
    """Band-limited smooth axisymmetric field ``sum a_kl cos(k rho + b_kl) cos(phi)^l``."""
    rng = np.random.default_rng(seed)
    amp = rng.standard_normal((modes, modes)) / (1.0 + np.add.outer(np.arange(modes), np.arange(modes))) ** 2
    shift = rng.uniform(0, 2 * np.pi, (modes, modes))

    def u(rho, phi):
        c = np.cos(phi)
        out = np.zeros(np.broadcast(rho, phi).shape)
        for k in range(modes):
            for j in range(modes):
                out = out + amp[k, j] * np.cos(k * rho + shift[k, j]) * c**j
        return out
    return u


# --------------------------------------------------------------------------
# Lifted solutions


def residual_correspondence(u, eps, m=None, points=None, h=1e-3, seed=0, count=24):
    """Compare the lifted residual ``-Delta v - |v|^(q-1) v`` with ``2|x|`` times the weighted one.

    Both are finite-difference residuals of the bicubic interpolant of ``u``;
    they agree to O(h^2) when the identity holds.  Returns the max discrepancy
    relative to the size of the weighted side.
    """
    n = u.grid.n
    m = _check_m(n - 1 if m is None else m, n)
    q = critical_exponent(n) - eps
    f = _as_callable(u)
    a, b = upper_radii(u.grid.geometry)
    if points is None:
        points = sample_points(m, a, b, count, seed, margin=2 * h + 1e-3)
    lap_v, v = _fd_laplacian(lambda y: _lifted_eval(f, y, m), points, h)
    upper = -lap_v - np.abs(v) ** (q - 1) * v
    x, rho = _embed(points, m)
    lap_u, uu = _fd_laplacian(lambda z: _cartesian_eval(f, z), x, h)
    lower = 2.0 * rho * (-lap_u - np.abs(uu) ** (q - 1) * uu / (2.0 * rho))
    scale = float(np.max(np.abs(lower)))
    return {"max_discrepancy": float(np.max(np.abs(upper - lower))), "scale": scale,
            "relative": float(np.max(np.abs(upper - lower)) / scale) if scale > 0 else 0.0,
            "points": int(points.shape[0]), "h": h}


@dataclass(frozen=True)
class ConcentrationSphere:
    radius: float
    factor: int          # 1: {|y1| = radius, y2 = 0}; 2: {y1 = 0, |y2| = radius}
    sign: int
    rho: float
    dimension: int

    def as_dict(self):
        return {"radius": self.radius, "factor": self.factor, "sign": self.sign,
                "rho": self.rho, "dimension": self.dimension}


def sphere_extract(result, m=None, axis_tol=None):
    """Concentration spheres in R^(2m) of a solved branch.

    Each axis peak ``(rho*, phi)`` becomes the (m-1)-sphere of radius
    ``sqrt(2 rho*)`` in the first factor (phi = 0) or the second (phi = pi).
    The global maximum of ``|u|`` must sit on the axis.
    """
    u = result.field
    n = u.grid.n
    m = _check_m(n - 1 if m is None else m, n)
    vals = np.abs(u.values)
    _, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    if j not in (0, u.grid.nphi - 1):
        phi = float(u.grid.phi[j])
        if axis_tol is None or min(phi, np.pi - phi) > axis_tol:
            raise ValueError(f"|u| peaks off the axis (phi = {phi:.4g}); no sphere concentration")
    peaks = result.diagnostics.peaks if result.diagnostics is not None else []
    if not peaks:
        raise ValueError("the result carries no axis peaks")
    spheres = []
    for z, amp in peaks:
        rho = abs(z)
        spheres.append(ConcentrationSphere(float(np.sqrt(2 * rho)), 1 if z > 0 else 2,
                                           int(np.sign(amp)), float(rho), m - 1))
    return spheres
