"""Aubin-Talenti bubbles, their parameter derivatives and multi-bubble ansatz assembly.

All points are full Cartesian points of R^n; the concentration points used by
the ansatz families lie on the x_n axis, ``xi = (1 + eps*t) e_n``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_dimension, check_points, check_positive, check_sign


def critical_exponent(n):
    return (n + 2) / (n - 2)


def alpha(n):
    """Normalisation making ``U`` solve ``-Delta U = U^p`` on R^n."""
    return (n * (n - 2)) ** ((n - 2) / 4)


def weighted_amplitude(n, eps, xi_norm):
    """Amplitude of the self-similar profile of ``-Delta u = u^(p-eps) / (2|xi|)``."""
    return (2.0 * xi_norm) ** (1.0 / (critical_exponent(n) - 1.0 - eps))


@dataclass(frozen=True)
class Bubble:
    n: int
    delta: float
    xi: tuple

    def __post_init__(self):
        check_dimension(self.n)
        check_positive(self.delta, "delta")
        xi = tuple(float(c) for c in np.ravel(self.xi))
        if len(xi) != self.n:
            raise ValueError(f"xi must have {self.n} components, got {len(xi)}")
        object.__setattr__(self, "xi", xi)

    @property
    def center(self):
        return np.asarray(self.xi)

    @property
    def on_axis(self):
        return all(c == 0.0 for c in self.xi[:-1])

    @property
    def axis_position(self):
        """Signed x_n coordinate of the centre; only meaningful for axis bubbles."""
        if not self.on_axis:
            raise ValueError("bubble centre is not on the x_n axis")
        return self.xi[-1]

    @property
    def peak(self):
        return alpha(self.n) * self.delta ** (-(self.n - 2) / 2)

    def __call__(self, x):
        return eval_bubble(self, x)


def eval_bubble(b, x):
    x = check_points(x, b.n)
    dist2 = np.sum((x - b.center) ** 2, axis=-1)
    return _profile(b.n, b.delta, dist2)


def _profile(n, delta, dist2):
    return alpha(n) * delta ** ((n - 2) / 2) / (delta**2 + dist2) ** ((n - 2) / 2)


def eval_kernel(b, j, x):
    """Derivative of the bubble in delta (``j = 0``) or in xi_j (``1 <= j <= n``)."""
    if not 0 <= j <= b.n:
        raise ValueError(f"kernel index must lie in [0, {b.n}], got {j}")
    x = check_points(x, b.n)
    n, delta = b.n, b.delta
    diff = x - b.center
    dist2 = np.sum(diff**2, axis=-1)
    denom = (delta**2 + dist2) ** (n / 2)
    if j == 0:
        return alpha(n) * (n - 2) / 2 * delta ** ((n - 4) / 2) * (dist2 - delta**2) / denom
    return alpha(n) * (n - 2) * delta ** ((n - 2) / 2) * diff[..., j - 1] / denom


def axis_distance_sq(r, phi, z):
    """``|x - z e_n|^2`` for ``x`` at meridian coordinates ``(r, phi)``, cancellation-free."""
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if z >= 0:
        return (r - z) ** 2 + 4.0 * r * z * np.sin(phi / 2) ** 2
    return (r + z) ** 2 - 4.0 * r * z * np.cos(phi / 2) ** 2


def bubble_meridian(b, r, phi):
    """Evaluate an axis bubble at meridian coordinates."""
    return _profile(b.n, b.delta, axis_distance_sq(r, phi, b.axis_position))


def kernel_meridian(b, j, r, phi):
    """Axisymmetric kernel elements (``j = 0`` or ``j = n``) at meridian coordinates."""
    n, delta, z = b.n, b.delta, b.axis_position
    dist2 = axis_distance_sq(r, phi, z)
    denom = (delta**2 + dist2) ** (n / 2)
    if j == 0:
        return alpha(n) * (n - 2) / 2 * delta ** ((n - 4) / 2) * (dist2 - delta**2) / denom
    if j == n:
        return alpha(n) * (n - 2) * delta ** ((n - 2) / 2) * (r * np.cos(phi) - z) / denom
    raise ValueError("only j = 0 and j = n are axisymmetric")


def bubble_from_reduced(n, eps, d, t, inner=1.0):
    """Bubble with ``delta = eps^((n-1)/(n-2)) d`` centred at ``(inner + eps t) e_n``."""
    n = check_dimension(n)
    eps = check_positive(eps, "eps")
    d = check_positive(d, "d")
    t = check_positive(t, "t")
    xi = np.zeros(n)
    xi[-1] = inner * (1.0 + eps * t)
    return Bubble(n, eps ** ((n - 1) / (n - 2)) * d, tuple(xi))


@dataclass
class AnsatzConfig:
    """Branch descriptor: ``sum_i sign_i PU_i + lam * sum_i sign_i PU(delta_i, -xi_i)``."""

    n: int
    eps: float
    lam: int = 0
    pairs: list = field(default_factory=lambda: [(1, 2.0, 1.0)])
    amplitude_mode: str = "unit"
    inner: float = 1.0

    def __post_init__(self):
        self.n = check_dimension(self.n)
        self.eps = check_positive(self.eps, "eps", allow_zero=True)
        self.lam = check_sign(self.lam)
        if self.amplitude_mode not in ("unit", "weighted"):
            raise ValueError(f"amplitude_mode must be 'unit' or 'weighted', got {self.amplitude_mode!r}")
        pairs = []
        for sign, d, t in self.pairs:
            check_sign(sign, (-1, 1), name="sign")
            pairs.append((int(sign), check_positive(d, "d"), check_positive(t, "t")))
        if not pairs:
            raise ValueError("at least one (sign, d, t) pair is required")
        if len(pairs) == 2 and not pairs[0][2] < pairs[1][2]:
            raise ValueError("two-pair configurations require t1 < t2")
        if len(pairs) > 2:
            raise ValueError("at most two pairs are supported")
        self.pairs = pairs

    @property
    def symmetry(self):
        return {0: "none", 1: "even", -1: "odd"}[self.lam]

    def bubbles(self):
        """List of ``(coefficient, Bubble)`` making up the ansatz."""
        if self.eps == 0:
            raise ValueError("the ansatz needs eps > 0 to place its bubbles")
        out = []
        for sign, d, t in self.pairs:
            b = bubble_from_reduced(self.n, self.eps, d, t, inner=self.inner)
            amp = 1.0
            if self.amplitude_mode == "weighted":
                amp = weighted_amplitude(self.n, self.eps, abs(b.axis_position))
            out.append((sign * amp, b))
            if self.lam:
                mirror = Bubble(self.n, b.delta, tuple(-c for c in b.xi))
                out.append((self.lam * sign * amp, mirror))
        return out


def assemble_ansatz(cfg, projector):
    """Sum the projected bubbles of ``cfg``.

    ``projector`` maps a Bubble to its projection (a MeridianField, or anything
    supporting scalar multiplication and addition).
    """
    total = None
    for coef, b in cfg.bubbles():
        term = projector(b) * coef
        total = term if total is None else total + term
    if hasattr(total, "with_symmetry"):
        total = total.with_symmetry(cfg.symmetry)
    return total
