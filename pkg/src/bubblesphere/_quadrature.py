"""Quadrature rules centred on axis points, for integrands concentrated at a bubble.

Points are parametrised by the distance ``rho`` to the centre and the angle
``theta`` to the axis direction.  Rays that hit the inner sphere are clipped;
the part of such a ray beyond the inner ball is kept as a second segment.
``rho`` is mapped through ``log(1 + rho/scale)``, which spreads the bubble
core and its algebraic tail evenly over the panels.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .green import sphere_area


@lru_cache(maxsize=16)
def _unit_rule(m, panels):
    """Composite Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(m)
    edges = np.linspace(0.0, 1.0, panels + 1)
    nodes = np.concatenate([a + (b - a) * (x + 1) / 2 for a, b in zip(edges[:-1], edges[1:])])
    weights = np.concatenate([(b - a) / 2 * w for a, b in zip(edges[:-1], edges[1:])])
    return nodes, weights


@dataclass(frozen=True)
class AxialRule:
    r: np.ndarray
    phi: np.ndarray
    rho: np.ndarray
    weights: np.ndarray

    def integrate(self, values):
        return float(np.sum(self.weights * values))


def _log_segment(lo, hi, scale, m, panels):
    """Nodes/weights on ``[0, hi]`` per row (``lo`` must be 0), log-mapped."""
    x, w = _unit_rule(m, panels)
    top = np.log1p(hi / scale)[:, None]
    u = top * x[None, :]
    rho = scale * np.expm1(u)
    return rho, scale * np.exp(u) * top * w[None, :]


def _plain_segment(lo, hi, m, panels):
    x, w = _unit_rule(m, panels)
    span = (hi - lo)[:, None]
    return lo[:, None] + span * x[None, :], span * w[None, :]


def axial_rule(geometry, z, scale, radius=None, m=24, theta_panels=4, rho_panel_width=1.0):
    """Rule for ``int_{Omega cap B(z e_n, radius)} f dx`` (``radius=None``: all of Omega).

    ``scale`` sets where the ``rho`` mapping turns logarithmic and should be the
    concentration scale of the integrand.
    """
    n = geometry.n
    a, R = geometry.r_inner, geometry.r_outer
    s, sigma = abs(z), (1.0 if z > 0 else -1.0)
    if not a < s < R:
        raise ValueError(f"centre {z} is not inside the annulus")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if radius is not None and radius <= 0:
        raise ValueError("radius must be positive")
    tx, tw = _unit_rule(m, theta_panels)
    inside = radius is not None and radius <= min(s - a, R - s)
    if inside:
        theta, dtheta = np.pi * tx, np.pi * tw
    else:
        tc = np.pi - np.arcsin(a / s)
        # v^2 substitution above tc removes the square-root edge where rays graze the inner sphere
        theta = np.concatenate([tc * tx, tc + (np.pi - tc) * tx**2])
        dtheta = np.concatenate([tc * tw, 2 * (np.pi - tc) * tx * tw])
    c = np.cos(theta)
    rho_out = -s * c + np.sqrt(np.maximum(s * s * c * c - s * s + R * R, 0.0))
    disc = s * s * c * c - (s * s - a * a)
    hits = (c < 0) & (disc > 0)
    root = np.sqrt(np.maximum(disc, 0.0))
    near_end = np.where(hits, -s * c - root, rho_out)
    far_start = np.where(hits, -s * c + root, rho_out)
    cap = np.inf if radius is None else radius
    near_end = np.minimum(near_end, cap)
    far_end = np.minimum(rho_out, cap)
    far_start = np.minimum(far_start, far_end)

    panels = max(2, int(np.ceil(np.log1p(np.max(near_end) / scale) / rho_panel_width)))
    rho1, w1 = _log_segment(0.0, near_end, scale, m, panels)
    rho2, w2 = _plain_segment(far_start, far_end, m, 2)
    rho = np.concatenate([rho1, rho2], axis=1)
    wrho = np.concatenate([w1, w2], axis=1)
    th = np.broadcast_to(theta[:, None], rho.shape)
    weights = (sphere_area(n - 2) * rho ** (n - 1) * np.sin(th) ** (n - 2)
               * wrho * dtheta[:, None])
    axial = s + rho * np.cos(th)
    perp = rho * np.sin(th)
    r = np.hypot(axial, perp)
    phi = np.arctan2(perp, sigma * axial)
    keep = weights.ravel() != 0
    return AxialRule(r.ravel()[keep], phi.ravel()[keep], rho.ravel()[keep], weights.ravel()[keep])


def partitioned_integral(geometry, centres, scales, integrand, weights_fn, **rule_kw):
    """``int_Omega f`` for an integrand concentrated near several axis points.

    ``weights_fn(r, phi)`` returns an array with one row per centre whose
    columns sum to one (a partition of unity); each share is integrated with the
    rule of its centre.
    """
    total = 0.0
    for i, (z, scale) in enumerate(zip(centres, scales)):
        rule = axial_rule(geometry, z, scale, **rule_kw)
        share = weights_fn(rule.r, rule.phi)[i]
        total += rule.integrate(share * integrand(rule.r, rule.phi))
    return total
