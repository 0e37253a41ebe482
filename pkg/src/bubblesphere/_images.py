"""Closed-form harmonic parts on the annulus, by Kelvin images.

Used where grid interpolation of ``H`` is too coarse: the continuum energy
quadrature resolves O(eps) differences of O(1) integrals, and the finite-volume
``regular_part`` is tested against these values.
"""

import numpy as np

from .bubble import alpha


def _generating(h, one_minus_x, lam):
    """Gegenbauer generating function ``(1 - 2 h x + h^2)^(-lam)`` written stably for h near 1."""
    return ((1.0 - h) ** 2 + 2.0 * h * one_minus_x) ** (-lam)


def _sphere_parameters(rad, s, delta, lam):
    """``(A, h)`` with ``(delta^2 + |x - s e_n|^2)^(-lam) = A * sum_l h^l C_l(x_n/|x|)`` on ``|x| = rad``."""
    B = (delta * delta + rad * rad + s * s) / (rad * s)
    h = 2.0 / (B + np.sqrt(max(B * B - 4.0, 0.0)))
    return (h / (rad * s)) ** lam, h


def series_harmonic_extension(geometry, z, delta, r, phi, tol=1e-17):
    """Exact harmonic function on the annulus equal to ``(delta^2 + |x - z e_n|^2)^((2-n)/2)``
    on both spheres.

    On each sphere the data is a Gegenbauer generating function in ``cos(phi)``,
    so the zonal expansion can be summed in closed form: the solution becomes a
    series of Kelvin images whose weights decay like ``(a/R)^(k(n-2))``.
    ``delta = 0`` gives the regular part ``H(x, z e_n)`` of the Green function.
    """
    n = geometry.n
    lam = (n - 2) / 2
    a = geometry.r_inner
    R = geometry.r_outer / a
    s = abs(z) / a
    if not 1.0 < s < R:
        raise ValueError(f"axis point {z} is not inside the annulus")
    r = np.asarray(r, dtype=float) / a
    phi = np.asarray(phi, dtype=float)
    d = delta / a
    # 1 - x, with x the cosine of the angle to the axis point
    omx = 2.0 * (np.sin(phi / 2) ** 2 if z > 0 else np.cos(phi / 2) ** 2)
    A1, h1 = _sphere_parameters(1.0, s, d, lam)
    A2, h2 = _sphere_parameters(R, s, d, lam)
    kmax = int(np.ceil(np.log(1.0 / tol) / ((n - 2) * np.log(R)))) + 1
    out = A2 * _generating(h2 * r / R, omx, lam)
    rk = r ** (2.0 - n)
    for k in range(kmax + 1):
        wk = R ** (-k * (n - 2))
        out = out + wk * rk * (A1 * _generating(h1 / (r * R ** (2 * k)), omx, lam)
                               - A2 * _generating(h2 / (r * R ** (2 * k + 1)), omx, lam))
        if k >= 1:
            out = out - wk * (A1 * _generating(h1 * r * R ** (-2 * k), omx, lam)
                              - A2 * _generating(h2 * r * R ** (-2 * k - 1), omx, lam))
    return out * a ** (2.0 - n)


def series_regular_part(geometry, y, r, phi):
    """Closed-form ``H(x, y e_n)`` at meridian points ``(r, phi)``."""
    return series_harmonic_extension(geometry, y, 0.0, r, phi)


def series_correction(geometry, b, r, phi):
    """Exact ``U - PU`` for an axis bubble at meridian points ``(r, phi)``."""
    n = b.n
    return alpha(n) * b.delta ** ((n - 2) / 2) * series_harmonic_extension(
        geometry, b.axis_position, b.delta, r, phi)
