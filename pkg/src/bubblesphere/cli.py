"""Command-line front end.

Every command validates its configuration before touching the output
directory, writes its artifacts with 17 significant digits, and finishes with
``manifest.json`` listing each file's SHA-256.  Exit codes: 0 success, 1
invalid configuration, 2 numerical failure, 3 a verification report contains
failures.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import NumericalFailure

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

DEFAULTS = {
    "n": 3,
    "m": None,
    "inner": 1.0,
    "outer": 3.0,
    "grid": "257x129",
    "eps_start": 0.2,
    "eps_end": 0.0125,
    "rungs": 5,
    "case": "i",
    "coeffs": "unit",
    "out": "out",
    "threads": 1,
    "tol": 1e-8,
    "seed": 0,
    "what": "all",
    "d_range": [0.1, 10.0, 41],
    "t_range": [0.1, 10.0, 41],
    "field": None,
    "lift_points": 257,
}

BRANCH_CASES = ("i", "ii", "iii", "iv", "v+", "v-")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Serialisation


def _num(x):
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return json.dumps(None if math.isnan(x) else ("inf" if x > 0 else "-inf"))
    if x == int(x) and abs(x) < 1e16:
        return f"{x:.1f}"
    return f"{x:.17g}"


def dumps(obj, indent=0):
    """JSON text with floats at 17 significant digits and sorted keys."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if obj is None:
        return "null"
    return json.dumps(str(obj))


class Artifacts:
    """Output directory bookkeeping; files are registered as they are written."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = []

    def open(self):
        self.root.mkdir(parents=True, exist_ok=True)
        if not os.access(self.root, os.W_OK):
            raise ConfigError(f"output directory {self.root} is not writable")

    def path(self, name):
        self.files.append(name)
        return self.root / name

    def write_json(self, name, obj):
        self.path(name).write_text(dumps(obj) + "\n")

    def write_csv(self, name, header, rows):
        lines = [",".join(header)]
        lines += [",".join(_num(v) for v in row) for row in rows]
        self.path(name).write_text("\n".join(lines) + "\n")

    def manifest(self, command, config, wall):
        canon = json.dumps(config, sort_keys=True, default=str)
        files = {}
        for name in sorted(set(self.files)):
            p = self.root / name
            if p.exists():
                files[name] = hashlib.sha256(p.read_bytes()).hexdigest()
        import scipy
        import sklearn
        out = {
            "command": command,
            "config": config,
            "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
            "versions": {"bubblesphere": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__,
                         "scikit-learn": sklearn.__version__},
            "wall_time_s": wall,
            "files": files,
        }
        (self.root / "manifest.json").write_text(dumps(out) + "\n")


# --------------------------------------------------------------------------
# Configuration


def _parse_grid(text):
    try:
        nr, nphi = (int(v) for v in str(text).lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid must look like NRxNPHI, got {text!r}") from None
    if not (17 <= nr <= 8193 and 17 <= nphi <= 8193):
        raise ConfigError("grid sizes must lie in [17, 8193]")
    return nr, nphi


def _positive(cfg, key):
    try:
        v = float(cfg[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a number") from None
    if not v > 0 or not math.isfinite(v):
        raise ConfigError(f"{key} must be positive")
    return v


def resolve_config(args):
    """Defaults, then the JSON config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return validate(cfg, args.command)


def validate(cfg, command):
    try:
        cfg["n"] = int(cfg["n"])
    except (TypeError, ValueError):
        raise ConfigError("n must be an integer") from None
    if cfg["m"] is not None:
        cfg["m"] = int(cfg["m"])
        if cfg["m"] < 2:
            raise ConfigError("m must be at least 2")
        if command != "verify":
            cfg["n"] = cfg["m"] + 1
    if cfg["n"] < 3:
        raise ConfigError(f"n must be at least 3, got {cfg['n']}")
    inner, outer = _positive(cfg, "inner"), _positive(cfg, "outer")
    if not outer > inner:
        raise ConfigError("outer radius must exceed inner radius")
    _parse_grid(cfg["grid"])
    for key in ("eps_start", "eps_end", "tol"):
        _positive(cfg, key)
    if command == "continue" and not cfg["eps_start"] > cfg["eps_end"]:
        raise ConfigError("eps_start must exceed eps_end")
    if int(cfg["rungs"]) < 1 or int(cfg["threads"]) < 1:
        raise ConfigError("rungs and threads must be at least 1")
    cfg["rungs"], cfg["threads"], cfg["seed"] = int(cfg["rungs"]), int(cfg["threads"]), int(cfg["seed"])
    if command in ("landscape", "minimize"):
        if cfg["case"] not in ("single", "double") + BRANCH_CASES:
            raise ConfigError(f"unknown case {cfg['case']!r}")
    elif command in ("solve", "continue", "lift") and cfg["case"] not in BRANCH_CASES:
        raise ConfigError(f"case must be one of {BRANCH_CASES}")
    if cfg["what"] not in ("all", "transform", "lemmas", "expansion"):
        raise ConfigError("what must be one of all, transform, lemmas, expansion")
    for key in ("d_range", "t_range"):
        rng = cfg[key]
        if len(rng) != 3 or not 0 < float(rng[0]) < float(rng[1]) or int(rng[2]) < 2:
            raise ConfigError(f"{key} must be LO HI NUM with 0 < LO < HI and NUM >= 2")
    if cfg["coeffs"] not in ("unit", "fitted", "assembled") and not Path(str(cfg["coeffs"])).is_file():
        raise ConfigError("coeffs must be unit, fitted, assembled or a JSON file with c4, c5, c6")
    if cfg["field"] is not None and not Path(cfg["field"]).is_file():
        raise ConfigError(f"field file {cfg['field']} does not exist")
    return cfg


def _geometry(cfg):
    from .grid import AnnulusGeometry
    return AnnulusGeometry(cfg["n"], float(cfg["inner"]), float(cfg["outer"]))


def _shape(case):
    if case in ("single", "double"):
        return case
    return "single" if case in ("i", "ii", "iii") else "double"


def _coefficients(cfg, threads):
    from .energy import EnergyExpansion, assembled_coefficients
    n, choice = cfg["n"], cfg["coeffs"]
    if choice == "unit":
        return EnergyExpansion.unit(n)
    if choice == "assembled":
        return assembled_coefficients(n)
    if choice == "fitted":
        return _fit(cfg, threads)
    try:
        data = json.loads(Path(choice).read_text())
        c = tuple(float(data[f"c{i}"]) if f"c{i}" in data else 0.0 for i in range(1, 7))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read coefficients from {choice}: {exc}") from None
    if not all(k in data for k in ("c4", "c5", "c6")):
        raise ConfigError("coefficient file needs c4, c5 and c6")
    return EnergyExpansion(n, c, None, 0, "file")


def _fit(cfg, threads):
    from .energy import fit_expansion
    from .solver import BranchSpec
    eps = [0.01 / 2**k for k in range(6)]
    samples = [[(d, t)] for d in (0.05, 0.1, 0.2) for t in (0.25, 0.5, 1.0)]
    return fit_expansion(BranchSpec("i"), cfg["n"], eps, samples, _geometry(cfg), workers=threads)


# --------------------------------------------------------------------------
# Commands


def cmd_constants(cfg, art):
    from .energy import gamma_constants, gamma_constants_closed_form
    quad = gamma_constants(cfg["n"]).as_dict()
    closed = gamma_constants_closed_form(cfg["n"]).as_dict()
    rel = {k: abs(quad[k] - closed[k]) / abs(closed[k]) for k in ("gamma1", "gamma2", "gamma3")}
    art.write_json("constants.json", {"n": cfg["n"], "quadrature": quad, "closed_form": closed,
                                      "rel_err": rel})
    return EXIT_OK


def cmd_landscape(cfg, art):
    from .energy import landscape
    coeffs = _coefficients(cfg, cfg["threads"])
    shape = _shape(cfg["case"])
    d = np.geomspace(float(cfg["d_range"][0]), float(cfg["d_range"][1]), int(cfg["d_range"][2]))
    t = np.geomspace(float(cfg["t_range"][0]), float(cfg["t_range"][1]), int(cfg["t_range"][2]))
    if shape == "single":
        rows = landscape("single", coeffs, [d, t], n=cfg["n"])
        header = ["d", "t", "phi"]
    else:
        rows = landscape("double", coeffs, [d, t, d, t], n=cfg["n"])
        header = ["d", "t", "d2", "t2", "phi"]
    art.write_csv("landscape.csv", header, rows)
    art.write_json("landscape.json", {"case": shape, "n": cfg["n"], "coefficients": coeffs.as_dict(),
                                      "rows": len(rows)})
    return EXIT_OK


def cmd_minimize(cfg, art):
    from .energy import grid_search_phi, minimize_phi
    coeffs = _coefficients(cfg, cfg["threads"])
    shape = _shape(cfg["case"])
    cp = minimize_phi(shape, coeffs, n=cfg["n"])
    oracle, value, _ = grid_search_phi(shape, coeffs, n=cfg["n"])
    out = cp.as_dict()
    out.update(coefficients=coeffs.as_dict(), grid_oracle={"params": list(oracle), "phi": value})
    art.write_json("minimize.json", out)
    return EXIT_OK


def _result_record(res):
    fit = res.diagnostics
    return {"eps": res.eps, "residual_inf": res.residual_inf, "newton_iters": res.newton_iters,
            "converged": res.converged, "case": res.spec.theorem_case,
            "sup_norm": float(np.max(np.abs(res.field.values))),
            "reduced_params": [list(p) for p in (res.reduced_params or [])],
            "blowup_fit": fit.as_dict() if fit is not None else None}


def _write_rung(art, res, index):
    stem = f"rung{index:02d}"
    res.field.save(art.path(f"{stem}_field.csv"), art.path(f"{stem}_field.json"),
                   eps=res.eps, case=res.spec.theorem_case)
    art.write_json(f"{stem}_result.json", _result_record(res))


def _solve(cfg):
    from .solver import BranchSpec, initial_params, solve_branch
    spec = BranchSpec(cfg["case"])
    geometry = _geometry(cfg)
    nr, nphi = _parse_grid(cfg["grid"])
    params = initial_params(spec, cfg["n"])
    return solve_branch(geometry, spec, float(cfg["eps_start"]), params, float(cfg["tol"]), nr, nphi)


def cmd_solve(cfg, art):
    res = _solve(cfg)
    _write_rung(art, res, 0)
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_continue(cfg, art):
    from .solver import BranchSpec, continue_in_eps
    spec = BranchSpec(cfg["case"])
    nr, nphi = _parse_grid(cfg["grid"])
    try:
        results = continue_in_eps(spec, float(cfg["eps_start"]), float(cfg["eps_end"]), cfg["rungs"],
                                  _geometry(cfg), tol=float(cfg["tol"]), nr=nr, nphi=nphi)
        failure = None
    except NumericalFailure as exc:
        results, failure = exc.diagnostics.get("results", []), exc
    for i, res in enumerate(results):
        _write_rung(art, res, i)
    summary = {"case": spec.theorem_case, "rungs": [_result_record(r) for r in results]}
    if len(results) >= 2:
        eps = np.array([r.eps for r in results])
        sup = np.array([np.max(np.abs(r.field.values)) for r in results])
        summary["sup_norm_slope"] = float(np.polyfit(np.log(eps), np.log(sup), 1)[0])
    if failure is not None:
        summary["failure"] = str(failure)
    art.write_json("continuation.json", summary)
    if failure is not None:
        raise failure
    return EXIT_OK


def cmd_lift(cfg, art):
    from .grid import MeridianField
    from .transform import lift, sphere_extract
    m = cfg["n"] - 1
    if cfg["field"] is not None:
        path = Path(cfg["field"])
        field_ = MeridianField.load(path, path.with_suffix(".json"))
        spheres = None
        source = str(path)
    else:
        res = _solve(cfg)
        field_ = res.field
        spheres = [s.as_dict() for s in sphere_extract(res, m)]
        source = f"solve case {cfg['case']} eps {cfg['eps_start']}"
    lifted = lift(field_, m, num=int(cfg["lift_points"]), source=source)
    lifted.save(art.path("lift.csv"), art.path("lift.json"))
    s, t, v = lifted.argmax()
    art.write_json("spheres.json", {"m": m, "spheres": spheres,
                                    "lifted_max": {"s": s, "t": t, "value": v}})
    return EXIT_OK


def cmd_verify(cfg, art):
    from .energy import verify_lemmas
    from .transform import polynomial_fields, random_field, verify_correspondence
    what = cfg["what"]
    failed = False
    if what in ("all", "transform"):
        m = cfg["m"] or 2
        geometry = _geometry(dict(cfg, n=m + 1))
        radii = (np.sqrt(2 * geometry.r_inner), np.sqrt(2 * geometry.r_outer))
        reports = [verify_correspondence(f, m, radii, name=k, seed=cfg["seed"])
                   for k, f in polynomial_fields().items()]
        reports += [verify_correspondence(random_field(cfg["seed"] + s), m, radii, seed=cfg["seed"] + s,
                                          name=f"random seed {cfg['seed'] + s}") for s in range(10)]
        art.write_json("verify_transform.json", {"m": m, "entries": reports})
        failed |= not all(r["pass"] for r in reports)
    if what in ("all", "lemmas"):
        eps = np.geomspace(float(cfg["eps_start"]), float(cfg["eps_end"]), max(6, cfg["rungs"]))
        rep = verify_lemmas(cfg["n"], eps, _geometry(cfg), workers=cfg["threads"])
        art.write_json("verify_lemmas.json", rep)
        failed |= not rep["all_gated_pass"]
    if what in ("all", "expansion"):
        ex = _fit(cfg, cfg["threads"])
        out = ex.as_dict()
        out["diagnostics"] = ex.diagnostics
        art.write_json("verify_expansion.json", out)
        failed |= not (ex.diagnostics["positive_c456"] and ex.diagnostics["remainder_decreasing"])
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {
    "constants": cmd_constants,
    "landscape": cmd_landscape,
    "minimize": cmd_minimize,
    "solve": cmd_solve,
    "continue": cmd_continue,
    "lift": cmd_lift,
    "verify": cmd_verify,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="bubblesphere", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--n", type=int)
        p.add_argument("--m", type=int)
        p.add_argument("--inner", type=float)
        p.add_argument("--outer", type=float)
        p.add_argument("--grid", help="NRxNPHI")
        p.add_argument("--eps-start", dest="eps_start", type=float)
        p.add_argument("--eps-end", dest="eps_end", type=float)
        p.add_argument("--rungs", type=int)
        p.add_argument("--case")
        p.add_argument("--coeffs", help="unit, fitted, assembled, or a JSON file with c4, c5, c6")
        p.add_argument("--out")
        p.add_argument("--threads", type=int)
        p.add_argument("--config")
        p.add_argument("--tol", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--what", help="verify: all, transform, lemmas or expansion")
        p.add_argument("--d-range", dest="d_range", nargs=3, type=float, metavar=("LO", "HI", "NUM"))
        p.add_argument("--t-range", dest="t_range", nargs=3, type=float, metavar=("LO", "HI", "NUM"))
        p.add_argument("--field", help="lift: meridian field CSV (sidecar JSON alongside)")
        p.add_argument("--lift-points", dest="lift_points", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    art = Artifacts(cfg["out"])
    start = time.perf_counter()
    code = EXIT_OK
    try:
        art.open()
        code = COMMANDS[args.command](cfg, art)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    art.manifest(args.command, cfg, time.perf_counter() - start)
    return code


if __name__ == "__main__":
    sys.exit(main())
