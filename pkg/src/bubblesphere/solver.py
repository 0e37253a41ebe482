"""Newton continuation in eps for ``-Delta u = |u|^(p-1-eps) u / (2|x|)`` on the annulus meridian.

Concentrating solutions live on scales ``delta ~ eps^((n-1)/(n-2))``, far below
any uniform grid at desk scale, so every solve runs on a grid graded around
the predicted concentration points (see :func:`branch_grid`).  After each
converged solve the blow-up parameters are re-fitted from the peaks and the
grid is rebuilt when the peaks drift away from the refined region.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import NumericalFailure, check_dimension, check_positive
from .bubble import AnsatzConfig, alpha, critical_exponent, kernel_meridian, weighted_amplitude
from .green import harmonic_extension, operator_for, project_bubble
from .grid import AnnulusGeometry, MeridianField, MeridianGrid, nodes_required, symmetrize, symmetry_defect

logger = logging.getLogger(__name__)

CASES = {
    # case: (lambda, pairs, signs of the pairs)
    "i": (0, 1, (1,)),
    "ii": (1, 1, (1,)),
    "iii": (-1, 1, (1,)),
    "iv": (0, 2, (1, -1)),
    "v+": (1, 2, (1, -1)),
    "v-": (-1, 2, (1, -1)),
}
_ALIASES = {"v_plus": "v+", "v_minus": "v-"}


@dataclass(frozen=True)
class BranchSpec:
    """One of the solution families: cases i-iii use one (d, t) pair, iv and v two."""

    theorem_case: str

    def __post_init__(self):
        case = _ALIASES.get(self.theorem_case, self.theorem_case)
        if case not in CASES:
            raise ValueError(f"unknown case {self.theorem_case!r}; expected one of {sorted(CASES)}")
        object.__setattr__(self, "theorem_case", case)

    @property
    def lam(self):
        return CASES[self.theorem_case][0]

    @property
    def pairs(self):
        return CASES[self.theorem_case][1]

    @property
    def signs(self):
        return CASES[self.theorem_case][2]

    @property
    def symmetry(self):
        return {0: "none", 1: "even", -1: "odd"}[self.lam]

    def ansatz(self, n, eps, params, amplitude_mode="weighted", inner=1.0):
        """AnsatzConfig for ``params = [(d, t), ...]`` (one entry per pair)."""
        if len(params) != self.pairs:
            raise ValueError(f"case {self.theorem_case} needs {self.pairs} (d, t) pairs")
        pairs = [(s, d, t) for s, (d, t) in zip(self.signs, params)]
        return AnsatzConfig(n, eps, self.lam, pairs, amplitude_mode, inner)


@dataclass
class BlowupFit:
    peaks: list  # (signed axis coordinate, signed amplitude)
    delta_fit: list
    d_fit: list
    t_fit: list

    def params(self):
        return list(zip(self.d_fit, self.t_fit))

    def as_dict(self):
        return {
            "peaks": [{"axis_position": z, "amplitude": a} for z, a in self.peaks],
            "delta_fit": list(self.delta_fit),
            "d_fit": list(self.d_fit),
            "t_fit": list(self.t_fit),
        }


@dataclass
class SolveResult:
    field: MeridianField
    eps: float
    residual_inf: float
    newton_iters: int
    diagnostics: BlowupFit = None
    history: list = field(default_factory=list)
    spec: BranchSpec = None
    converged: bool = True
    reduced_params: list = None


def nonlinearity(u, q):
    """``|u|^(q-1) u``; zero at u = 0."""
    return np.abs(u) ** (q - 1.0) * u


def nonlinearity_derivative(u, q):
    return q * np.abs(u) ** (q - 1.0)


def residual(field_, eps):
    """``-Delta_h u - |u|^(p-1-eps) u / (2r)`` on interior nodes, zero on the boundary rows."""
    grid = field_.grid
    op = operator_for(grid)
    q = critical_exponent(grid.n) - eps
    u = field_.values
    res = -op.laplacian(u) - 0.5 * op.inv_radius[:, None] * nonlinearity(u, q)
    res[0, :] = 0.0
    res[-1, :] = 0.0
    return MeridianField(grid, symmetrize(res, field_.symmetry), field_.symmetry)


def _fixed_point_defect(op, u_free, q, weights_c):
    """``u - i*(f(u)/(2r))`` on the free nodes, using the cached Laplacian factorisation."""
    rhs = weights_c * nonlinearity(u_free, q)
    return u_free - op.factor().solve(rhs)


def scaled_residual(field_, eps):
    """``max|u - i*(f(u)/(2|x|))| / max|u|``: the relative fixed-point defect.

    The raw residual of a concentrated solution scales like delta^(-(n+2)/2);
    this norm is scale-free and is the convergence measure of the solver.
    """
    grid = field_.grid
    op = operator_for(grid)
    q = critical_exponent(grid.n) - eps
    wc = (op.weights * 0.5 * op.inv_radius[:, None]).ravel()[op.free]
    u = field_.values.ravel()[op.free]
    scale = max(np.max(np.abs(u)), 1e-300)
    return float(np.max(np.abs(_fixed_point_defect(op, u, q, wc))) / scale)


def newton_solve(initial, eps, spec, tol=1e-8, max_iter=40, min_step=2.0**-10):
    """Damped Newton iteration for the discrete problem, started at ``initial``.

    The symmetry class of ``spec`` is enforced by projection after every
    update.  Raises NumericalFailure on divergence (5 consecutive damped steps
    that fail to decrease the residual) or a singular Jacobian.
    """
    check_positive(tol, "tol")
    eps = check_positive(eps, "eps", allow_zero=True)
    grid = initial.grid
    sym = spec.symmetry
    if symmetry_defect(initial.values, sym) > 1e-12 * max(1.0, np.max(np.abs(initial.values))):
        raise ValueError(f"initial field is not {sym} under phi -> pi - phi")
    op = operator_for(grid)
    q = critical_exponent(grid.n) - eps
    wc = (op.weights * 0.5 * op.inv_radius[:, None]).ravel()[op.free]

    values = symmetrize(initial.values.copy(), sym)
    values[0, :] = 0.0
    values[-1, :] = 0.0

    def measure(vals):
        u = vals.ravel()[op.free]
        scale = max(np.max(np.abs(u)), 1e-300)
        return float(np.max(np.abs(_fixed_point_defect(op, u, q, wc))) / scale)

    res = measure(values)
    history = [res]
    bad_steps = 0
    it = 0
    while res > tol and it < max_iter:
        it += 1
        u = values.ravel()[op.free]
        F = op.K_ff @ u - wc * nonlinearity(u, q)
        J = (op.K_ff - sp.diags(wc * nonlinearity_derivative(u, q))).tocsc()
        try:
            lu = spla.splu(J, permc_spec="MMD_AT_PLUS_A")
            step = lu.solve(-F)
        except RuntimeError as exc:
            raise NumericalFailure(f"singular Jacobian at Newton iteration {it}: {exc}",
                                   smallest_singular_value=_smallest_singular_estimate(J),
                                   iteration=it, residual=res) from exc
        if not np.all(np.isfinite(step)):
            raise NumericalFailure(f"non-finite Newton step at iteration {it}",
                                   smallest_singular_value=_smallest_singular_estimate(J),
                                   iteration=it, residual=res)
        step_grid = np.zeros(grid.shape)
        step_grid.ravel()[op.free] = step
        step_grid = symmetrize(step_grid, sym)
        lam = 1.0
        while True:
            trial = values + lam * step_grid
            trial_res = measure(trial)
            if trial_res <= (1.0 - 1e-4 * lam) * res or lam <= min_step:
                break
            lam *= 0.5
        if trial_res >= res:
            bad_steps += 1
            if bad_steps >= 5:
                raise NumericalFailure(
                    f"Newton diverged: residual failed to decrease over 5 damped steps (last {trial_res:.3e})",
                    iteration=it, residual=trial_res, history=history)
        else:
            bad_steps = 0
        values = trial
        res = trial_res
        history.append(res)
        logger.debug("newton it=%d step=%.3g residual=%.3e", it, lam, res)

    converged = res <= tol
    result_field = MeridianField(grid, values, sym)
    return SolveResult(result_field, eps, res, it, None, history, spec, converged)


def kernel_basis(grid, spec, eps, params, amplitude_mode="weighted"):
    """Projected kernel elements ``P psi^0, P psi^n`` of each (d, t) pair, mirror included.

    Returns an array of shape ``(n_free, 2 * pairs)`` on the free nodes.
    """
    op = operator_for(grid)
    n = grid.n
    cfg = spec.ansatz(n, eps, params, amplitude_mode, inner=grid.geometry.r_inner)
    bubbles = cfg.bubbles()
    per_pair = 2 if cfg.lam else 1
    R, P = grid.mesh()
    cols = []
    for k in range(0, len(bubbles), per_pair):
        for j in (0, n):
            total = np.zeros(grid.shape)
            for coef, b in bubbles[k:k + per_pair]:
                psi = kernel_meridian(b, j, R, P)
                if j == n:  # raising t moves a mirror bubble towards -e_n
                    psi = psi * np.sign(b.axis_position)
                total += coef * (psi - harmonic_extension(grid, psi[0], psi[-1]).values)
            total[0, :] = 0.0
            total[-1, :] = 0.0
            cols.append(symmetrize(total, spec.symmetry).ravel()[op.free])
    return np.array(cols).T


@dataclass
class ReducedSolution:
    """Solution of the problem projected off the kernel directions at fixed ``params``."""

    u: np.ndarray  # free-node values
    c: np.ndarray  # kernel multipliers, relative to max|u|
    iterations: int
    ansatz: np.ndarray = None  # V on the free nodes
    grid: MeridianGrid = None


def reduced_solve(grid, spec, eps, params, tol=1e-12, max_iter=25, amplitude_mode="weighted",
                  warm=None):
    """Bordered Newton for ``F(u) = sum_k c_k K Z_k`` with ``<K Z_k, u - V> = 0``.

    ``V`` is the ansatz at ``params``; the constraints remove the slow
    translation/dilation directions that make plain Newton crawl.  ``warm``
    (a previous ReducedSolution) starts from its ``u`` shifted by the change in ``V``.
    """
    op = operator_for(grid)
    q = critical_exponent(grid.n) - eps
    wc = (op.weights * 0.5 * op.inv_radius[:, None]).ravel()[op.free]
    V = ansatz_field(grid, spec, eps, params, amplitude_mode).values.ravel()[op.free]
    Z = kernel_basis(grid, spec, eps, params, amplitude_mode)
    B = op.K_ff @ Z
    B /= np.sqrt(np.einsum("ij,ij->j", Z, B))
    u = V.copy() if warm is None else warm.u + (V - warm.ansatz)
    c = np.zeros(B.shape[1])
    prev = np.inf
    for it in range(1, max_iter + 1):
        r1 = op.K_ff @ u - wc * nonlinearity(u, q) - B @ c
        r2 = B.T @ (u - V)
        J = (op.K_ff - sp.diags(wc * nonlinearity_derivative(u, q))).tocsc()
        try:
            lu = spla.splu(J, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise NumericalFailure(f"singular Jacobian in the reduced solve: {exc}",
                                   smallest_singular_value=_smallest_singular_estimate(J)) from exc
        a = lu.solve(-r1)
        Y = lu.solve(B)
        dc = np.linalg.solve(B.T @ Y, -r2 - B.T @ a)
        du = a + Y @ dc
        u = u + du
        c = c + dc
        rel = np.linalg.norm(du) / max(np.linalg.norm(u), 1e-300)
        if not np.isfinite(rel):
            raise NumericalFailure("non-finite step in the reduced solve", iteration=it)
        # stagnation after quadratic convergence means round-off has been reached
        if rel < tol or (rel > prev and prev < 1e3 * tol):
            return ReducedSolution(u, c / np.max(np.abs(u)), it, V)
        if it > 4 and rel > prev:
            raise NumericalFailure(f"reduced solve diverged (step {rel:.3e})", iteration=it)
        prev = rel
    raise NumericalFailure(f"reduced solve did not converge in {max_iter} iterations", step=rel)


def reduced_root(geometry, spec, eps, params, tol=1e-9, max_iter=20, fd_step=1e-4, max_log_step=0.3,
                 amplitude_mode="weighted", grid_options=None):
    """Find ``params`` with vanishing kernel multipliers (Newton in log-parameters).

    Every evaluation uses a grid graded around the trial parameters, so the
    bubbles keep their position relative to the nodes and the multipliers
    vary smoothly (a fixed grid adds node-alignment noise of the same size as
    the forces being balanced).  The Jacobian is taken by finite differences,
    then Broyden-updated.  Returns ``(params, ReducedSolution, grid, history)``.
    """
    grid_options = dict(grid_options or {})
    x = np.log(np.asarray(params, dtype=float).ravel())

    def unpack(v):
        e = np.exp(v)
        return [(e[2 * k], e[2 * k + 1]) for k in range(len(e) // 2)]

    def evaluate(v, warm=None):
        try:
            grid = branch_grid(geometry, spec, eps, unpack(v), **grid_options)
        except ValueError as exc:
            raise NumericalFailure(f"reduced root search left the grid budget: {exc}",
                                   params=unpack(v)) from exc
        try:
            sol = reduced_solve(grid, spec, eps, unpack(v), amplitude_mode=amplitude_mode, warm=warm)
        except NumericalFailure:
            if warm is None:
                raise
            sol = reduced_solve(grid, spec, eps, unpack(v), amplitude_mode=amplitude_mode)
        sol.grid = grid
        return sol

    def jacobian(v, base):
        Jc = np.empty((base.c.size, v.size))
        for k in range(v.size):
            e = np.zeros_like(v)
            e[k] = fd_step
            Jc[:, k] = (evaluate(v + e, base).c - base.c) / fd_step
        return Jc

    sol = evaluate(x)
    history = [float(np.max(np.abs(sol.c)))]
    Jc = jacobian(x, sol)
    fresh = True
    for _ in range(max_iter):
        if history[-1] <= tol:
            break
        step = -np.linalg.solve(Jc, sol.c)
        size = np.linalg.norm(step)
        lam = min(1.0, max_log_step / max(np.max(np.abs(step)), 1e-300))
        while True:
            new = evaluate(x + lam * step, sol)
            # affine-invariant acceptance: the simplified correction must shrink
            if np.linalg.norm(np.linalg.solve(Jc, new.c)) <= (1.0 - lam / 2.0) * size:
                break
            if lam > 1.0 / 32.0:
                lam /= 2.0
                continue
            if fresh:
                raise NumericalFailure("reduced root search stalled", multipliers=history,
                                       params=unpack(x))
            Jc = jacobian(x, sol)
            fresh = True
            step = -np.linalg.solve(Jc, sol.c)
            size = np.linalg.norm(step)
            lam = min(1.0, max_log_step / max(np.max(np.abs(step)), 1e-300))
        s_k = lam * step
        Jc = Jc + np.outer(new.c - sol.c - Jc @ s_k, s_k) / (s_k @ s_k)
        fresh = False
        x = x + s_k
        sol = new
        history.append(float(np.max(np.abs(sol.c))))
        logger.debug("reduced root: params=%s |c|=%.3e step=%.3g", unpack(x), history[-1], lam)
    else:
        if history[-1] > tol:
            raise NumericalFailure(f"reduced root search did not converge (|c| = {history[-1]:.3e})",
                                   multipliers=history, params=unpack(x))
    return unpack(x), sol, sol.grid, history


def _smallest_singular_estimate(J):
    try:
        val = spla.eigsh(J, k=1, sigma=0.0, which="LM", return_eigenvectors=False)
        return float(np.abs(val[0]))
    except Exception:  # noqa: BLE001 - diagnostic only
        return float("nan")


def _refine_peak(r, vals, i):
    """Vertex of the parabola through three neighbouring nodes."""
    if i == 0 or i == len(r) - 1:
        return r[i], vals[i]
    x0, x1, x2 = r[i - 1], r[i], r[i + 1]
    y0, y1, y2 = vals[i - 1], vals[i], vals[i + 1]
    d01 = (y1 - y0) / (x1 - x0)
    d12 = (y2 - y1) / (x2 - x1)
    a = (d12 - d01) / (x2 - x0)
    if a >= 0:
        return x1, y1
    b = d01 - a * (x0 + x1)
    xv = -b / (2 * a)
    if not x0 <= xv <= x2:
        return x1, y1
    c = y1 - a * x1 * x1 - b * x1
    return xv, a * xv * xv + b * xv + c


def find_peaks(field_, threshold=0.05):
    """Local maxima of ``|u|`` along the axis rows, as (signed axis coordinate, signed amplitude)."""
    grid = field_.grid
    u = field_.values
    top = np.max(np.abs(u))
    peaks = []
    for j, orient in ((0, 1.0), (grid.nphi - 1, -1.0)):
        row = u[:, j]
        a = np.abs(row)
        for i in range(1, grid.nr - 1):
            if a[i] >= a[i - 1] and a[i] > a[i + 1] and a[i] >= threshold * top:
                loc, amp = _refine_peak(grid.r, a, i)
                peaks.append((orient * loc, float(np.sign(row[i]) * amp)))
    return peaks


def blowup_fit(field_, eps, amplitude_mode="weighted", inner=1.0):
    n = field_.grid.n
    peaks = find_peaks(field_)
    deltas, ds, ts = [], [], []
    for z, amp in peaks:
        kappa = weighted_amplitude(n, eps, abs(z)) if amplitude_mode == "weighted" else 1.0
        delta = (alpha(n) * kappa / abs(amp)) ** (2.0 / (n - 2))
        deltas.append(delta)
        ds.append(delta * eps ** (-(n - 1) / (n - 2)) if eps > 0 else float("nan"))
        ts.append((abs(z) / inner - 1.0) / eps if eps > 0 else float("nan"))
    return BlowupFit(peaks, deltas, ds, ts)


def branch_params(fit, spec):
    """Select the (d, t) pairs of ``spec`` from a BlowupFit (positive-side peaks, ordered by t)."""
    side = [(t, d, amp) for (z, amp), d, t in zip(fit.peaks, fit.d_fit, fit.t_fit) if z > 0]
    side.sort()
    if len(side) < spec.pairs:
        raise NumericalFailure(
            f"found {len(side)} peaks on the positive axis, case {spec.theorem_case} needs {spec.pairs}",
            peaks=fit.peaks)
    if spec.pairs == 1:
        best = max(side, key=lambda s: abs(s[2]))
        return [(best[1], best[0])]
    return [(d, t) for t, d, _ in side[: spec.pairs]]


def resolve_resolution(resolution, eps):
    """Cells per bubble radius; ``"auto"`` gives ``max(6, 5 / sqrt(eps))``.

    The reduced forces that fix the concentration parameters are O(eps)
    while the discretisation error of the bubble core is O((h/delta)^2), so
    the cells per delta must grow like eps^(-1/2) to keep a fixed relative
    accuracy of the balance.
    """
    if resolution == "auto":
        return max(6.0, 5.0 / np.sqrt(eps))
    return check_positive(resolution, "resolution")


def _branch_foci(geometry, spec, eps, params, resolution):
    resolution = resolve_resolution(resolution, eps)
    n = geometry.n
    r_foci, phi_foci = [], []
    for d, t in params:
        delta = eps ** ((n - 1) / (n - 2)) * d
        rc = geometry.r_inner * (1.0 + eps * t)
        h = delta / resolution
        r_foci.append((rc, h))
        phi_foci.append((0.0, h / rc))
        r_foci.append((geometry.r_inner, max(h, (rc - geometry.r_inner) / 12.0)))
    if spec.symmetry != "none":
        phi_foci += [(np.pi - c, h) for c, h in phi_foci]
    return r_foci, phi_foci


def branch_grid_size(geometry, spec, eps, params, resolution="auto", growth=1.08, margin=1.25):
    """Node counts leaving ``margin`` headroom for an exact-spacing :func:`branch_grid`."""
    r_foci, phi_foci = _branch_foci(geometry, spec, eps, params, resolution)
    nr = int(np.ceil(margin * nodes_required(geometry.r_inner, geometry.r_outer, r_foci, growth))) + 1
    nphi = int(np.ceil(margin * nodes_required(0.0, np.pi, phi_foci, growth))) + 1
    if spec.symmetry != "none" and nphi % 2 == 0:
        nphi += 1
    return nr, nphi


def branch_grid(geometry, spec, eps, params, nr=257, nphi=257, resolution="auto", growth=1.08,
                exact=False):
    """Grid graded around the concentration points of the ansatz with ``params``.

    The target spacing at a bubble centre is ``delta / resolution`` (see
    :func:`resolve_resolution`), growing
    geometrically by ``growth`` per cell away from it; the inner sphere gets a
    focus resolving the distance to the concentration points.  With
    ``exact=True`` the target spacings are met exactly (the node counts must
    suffice, see :func:`branch_grid_size`), which keeps the discretisation
    self-similar as the bubbles shrink.
    """
    r_foci, phi_foci = _branch_foci(geometry, spec, eps, params, resolution)
    if spec.symmetry == "none":
        return MeridianGrid.graded(geometry, nr, nphi, r_foci, phi_foci, growth, exact=exact)
    if nphi % 2 == 0:
        nphi += 1
    # foci already mirrored; graded() re-mirrors, which only duplicates them
    return MeridianGrid.graded(geometry, nr, nphi, r_foci, phi_foci[: len(phi_foci) // 2], growth,
                               symmetric=True, exact=exact)


def ansatz_field(grid, spec, eps, params, amplitude_mode="weighted"):
    cfg = spec.ansatz(grid.n, eps, params, amplitude_mode, inner=grid.geometry.r_inner)
    total = np.zeros(grid.shape)
    for coef, b in cfg.bubbles():
        total += coef * project_bubble(grid, b).values
    return MeridianField(grid, symmetrize(total, spec.symmetry), spec.symmetry)


def transfer(field_, grid, symmetry=None):
    """Interpolate a field onto another grid (bicubic), keeping zero boundary rows."""
    sym = field_.symmetry if symmetry is None else symmetry
    R, P = grid.mesh()
    vals = field_.at(R, P, guard=False)
    vals[0, :] = 0.0
    vals[-1, :] = 0.0
    return MeridianField(grid, symmetrize(vals, sym), sym)


def solve_branch(geometry, spec, eps, params, tol=1e-8, nr=257, nphi=257, resolution="auto",
                 growth=1.08, amplitude_mode="weighted"):
    """Solve one rung.

    The kernel multipliers of the reduced problem are driven to zero on grids
    that follow the trial parameters (:func:`reduced_root`); plain Newton then
    polishes the result to ``tol``.
    """
    need_r, need_phi = branch_grid_size(geometry, spec, eps, params, resolution, growth)
    options = dict(nr=max(nr, need_r), nphi=max(nphi, need_phi), resolution=resolution,
                   growth=growth, exact=True)
    params, sol, grid, mult = reduced_root(geometry, spec, eps, params, tol=min(tol, 1e-9),
                                           amplitude_mode=amplitude_mode, grid_options=options)
    op = operator_for(grid)
    values = np.zeros(grid.shape)
    values.ravel()[op.free] = sol.u
    start = MeridianField(grid, symmetrize(values, spec.symmetry), spec.symmetry)
    result = newton_solve(start, eps, spec, tol)
    result.history = mult + result.history
    result.reduced_params = [(float(d), float(t)) for d, t in params]
    result.diagnostics = blowup_fit(result.field, eps, amplitude_mode, geometry.r_inner)
    return result


def eps_ladder(eps_start, eps_end, steps):
    if steps == 1:
        return [float(eps_start)]
    if not eps_start > eps_end > 0:
        raise ValueError("need eps_start > eps_end > 0")
    return list(np.geomspace(eps_start, eps_end, steps))


def continue_in_eps(spec, eps_start, eps_end, steps, geometry=None, params=None, tol=1e-8,
                    nr=257, nphi=257, resolution="auto", growth=1.08, max_bisect=4,
                    amplitude_mode="weighted"):
    """Geometric eps-continuation; each rung starts from the previous rung's
    reduced parameters.  Failed rungs are approached by bisecting the step
    (up to ``max_bisect`` times).  Returns the list of successful rungs.
    """
    geometry = geometry or AnnulusGeometry(3)
    n = geometry.n
    if params is None:
        params = initial_params(spec, n)
    ladder = eps_ladder(eps_start, eps_end, steps)
    results = []
    eps_prev = None
    for target in ladder:
        eps = target
        bisections = 0
        while True:
            try:
                res = solve_branch(geometry, spec, eps, params, tol, nr, nphi, resolution, growth,
                                   amplitude_mode=amplitude_mode)
                if not res.converged:
                    raise NumericalFailure(f"Newton stalled at eps={eps:.4g} (residual {res.residual_inf:.3e})",
                                           residual=res.residual_inf)
            except NumericalFailure as exc:
                if eps_prev is None or bisections >= max_bisect:
                    exc.diagnostics["last_good"] = results[-1] if results else None
                    exc.diagnostics["results"] = results
                    raise
                bisections += 1
                eps = float(np.sqrt(eps * eps_prev))
                logger.info("bisecting eps step -> %.5g", eps)
                continue
            results.append(res)
            params = res.reduced_params
            logger.info("eps=%.5g converged: residual %.2e, params %s", eps, res.residual_inf, params)
            eps_prev = eps
            if eps == target:
                break
            eps = target
    return results


def initial_params(spec, n, coeffs=None):
    """Starting (d, t) from the minimum of the reduced energy."""
    from .energy import assembled_coefficients, minimize_phi

    if coeffs is None:
        coeffs = assembled_coefficients(n, "weighted")
    case = "single" if spec.pairs == 1 else "double"
    cp = minimize_phi(case, coeffs, n=n)
    if spec.pairs == 1:
        return [(cp.params[0], cp.params[1])]
    d1, d2, t1, t2 = cp.params
    return [(d1, t1), (d2, t2)]


def kernel_projection_diagnostic(result, params=None, amplitude_mode="weighted"):
    """Normalised H^1_0 cosines between ``u - V`` and the projected kernel elements.

    ``V`` is the ansatz at ``params`` (default: the result's reduced
    parameters, then its blow-up fit).  For the reduced parameters the
    cosines vanish up to round-off, since ``u - V`` was constrained to be
    orthogonal to these directions.
    """
    field_ = result.field
    grid = field_.grid
    op = operator_for(grid)
    spec = result.spec or BranchSpec("i")
    if params is None:
        params = result.reduced_params or branch_params(result.diagnostics, spec)
    V = ansatz_field(grid, spec, result.eps, params, amplitude_mode)
    corr = (field_.values - V.values).ravel()[op.free]
    Z = kernel_basis(grid, spec, result.eps, params, amplitude_mode)
    KZ = op.K_ff @ Z
    cnorm = np.sqrt(max(corr @ (op.K_ff @ corr), 0.0))
    znorm = np.sqrt(np.einsum("ij,ij->j", Z, KZ))
    if cnorm == 0.0:
        return np.zeros(Z.shape[1])
    return (KZ.T @ corr) / (cnorm * znorm)


def nodal_regions(field_, rel_tol=1e-6):
    """Number of connected components of ``{u > tol}`` and ``{u < -tol}`` on the meridian grid,
    with ``tol = rel_tol * max|u|``."""
    from scipy import ndimage

    u = field_.values
    tol = rel_tol * np.max(np.abs(u))
    count = 0
    for mask in (u > tol, u < -tol):
        count += ndimage.label(mask)[1]
    return count


class BranchSolver(BaseEstimator):
    """Estimator wrapper: ``fit`` runs the eps-continuation for one branch,
    ``predict`` evaluates the last solution at Cartesian points."""

    def __init__(self, case="i", n=3, inner=1.0, outer=3.0, eps_start=0.2, eps_end=0.0125,
                 rungs=5, tol=1e-8, nr=257, nphi=257, resolution="auto", growth=1.08,
                 amplitude_mode="weighted"):
        self.case = case
        self.n = n
        self.inner = inner
        self.outer = outer
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.rungs = rungs
        self.tol = tol
        self.nr = nr
        self.nphi = nphi
        self.resolution = resolution
        self.growth = growth
        self.amplitude_mode = amplitude_mode

    def fit(self, X=None, y=None, params=None):
        check_dimension(self.n)
        check_positive(self.tol, "tol")
        self.spec_ = BranchSpec(self.case)
        self.geometry_ = AnnulusGeometry(self.n, self.inner, self.outer)
        self.results_ = continue_in_eps(
            self.spec_, self.eps_start, self.eps_end, self.rungs, self.geometry_, params,
            self.tol, self.nr, self.nphi, self.resolution, self.growth,
            amplitude_mode=self.amplitude_mode)
        self.solution_ = self.results_[-1]
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"X must have shape (n_samples, {self.n})")
        return self.solution_.field.at_cartesian(X)
