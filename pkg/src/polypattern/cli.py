"""Command-line entry point: decay sweeps, iterations, searches, corner audits, telescoping audits, set generation.

Exit codes: 0 = verified / found, 2 = checked and failed, 1 = operational error.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import sys

import numpy as np

from . import __version__
from .errors import BudgetExceeded, NoSliceFound, NoWitnessFound, PolyPatternError
from .gridfield import _atomic_write, bump_kit, read_grid, write_grid

log = logging.getLogger("polypattern")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

DEFAULTS = {
    "common": {"seed": 0, "out": None, "config": None, "grid": None, "gen_kind": None,
               "dims": None, "density": 0.2, "side": 1.0},
    "decay": {"curve": None, "s": 0, "ell": None, "kmin": 6, "kmax": 16, "shell_points": None,
              "slack": 0.1, "refine": 0, "lam_min": 4.0},
    "iterate": {"curve": None, "eps": 0.2, "C_base": 2.0, "gamma": None, "c": None,
                "calibration_sets": 8, "calibration_dims": None},
    "search": {"curve": None, "eps": None, "gamma": None},
    "corner": {"p1": None, "p2": None, "s": 0, "ells": [1, 3, 5], "eps": None, "search": False},
    "telescope": {"ells": None, "eps": None, "gamma": 1, "C_base": 2.0},
    "gen": {"kind": "random", "eps": 0.2, "curve": None, "t": None, "p1": None, "p2": None,
            "blob": 1, "radius": 0.05, "levels": 3, "tile": None, "direction": None, "width": None,
            "offset": 0.0},
}

TOLERANCES = {"quad_tol": 1e-9, "audit_tol": 1e-9, "noise_factor": 4.0, "residual_cells": 2.0}


# ---------------------------------------------------------------------------
# configuration and output plumbing


def resolve_config(args):
    """Merge defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[args.command])
    if args.config:
        with open(args.config) as fh:
            file_cfg = json.load(fh)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "func", "verbose") or value is None:
            continue
        cfg[key] = value
    cfg["command"] = args.command
    for key, value in TOLERANCES.items():
        if value <= 0:
            raise ValueError(f"tolerance {key} must be positive")
    return cfg


def header(cfg):
    science = {k: v for k, v in cfg.items() if k not in ("out", "config", "verbose")}
    canon = json.dumps(science, sort_keys=True, default=str)
    return {"tool": "polypattern", "version": __version__,
            "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
            "seed": cfg.get("seed"), "tolerances": TOLERANCES, "config": cfg}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, payload, cfg):
    body = {"header": header(cfg), **_jsonable(payload)}
    _atomic_write(path, json.dumps(body, indent=2, sort_keys=True, allow_nan=True) + "\n", mode="w")


def write_csv(path, rows, cfg):
    buf = io.StringIO()
    for key, value in header(cfg).items():
        if key != "config":
            buf.write(f"# {key}: {json.dumps(value, sort_keys=True, default=str)}\n")
    writer = csv.writer(buf)
    for row in rows:
        writer.writerow(row)
    _atomic_write(path, buf.getvalue(), mode="w")


def _out(cfg, suffix):
    if not cfg.get("out"):
        raise ValueError("--out is required")
    return f"{cfg['out']}{suffix}"


def _load_curve(cfg):
    from .polycurve import load_curve

    if not cfg.get("curve"):
        raise ValueError("--curve is required")
    return load_curve(cfg["curve"])


def _poly(spec):
    from .polycurve import Polynomial

    if spec is None:
        raise ValueError("--p1 and --p2 are required")
    if isinstance(spec, str):
        spec = json.loads(spec)
    return Polynomial.from_map(spec.get("coeffs", spec) if isinstance(spec, dict) else spec)


def _load_grid(cfg):
    """Grid from --grid, or generated on the fly from --gen-kind / --dims / --density / --seed."""
    if cfg.get("grid"):
        return read_grid(cfg["grid"])
    if cfg.get("gen_kind"):
        return _generate(cfg, cfg["gen_kind"], cfg["density"])[0]
    raise ValueError("give --grid or --gen-kind")


def _lattice(gamma):
    from .polycurve import ScaleLattice

    return None if gamma is None else ScaleLattice(int(gamma))


# ---------------------------------------------------------------------------
# commands


def cmd_decay(cfg):
    from .oscillatory import decay_fit
    from .polycurve import calibrate_lattice

    c = _load_curve(cfg)
    ell = cfg["ell"]
    report = None
    if ell is None:
        lattice, report = calibrate_lattice(c)
        ell = lattice.Gamma
    fit = decay_fit(c, int(cfg["s"]), int(ell), int(cfg["kmin"]), int(cfg["kmax"]),
                    shell_pts=cfg["shell_points"], slack=float(cfg["slack"]),
                    lam_min=float(cfg["lam_min"]), refine=int(cfg["refine"]))
    write_csv(_out(cfg, ".csv"), fit.csv_rows(), cfg)
    write_json(_out(cfg, ".json"), {"fit": fit.to_json(), "calibration": report}, cfg)
    log.info("slope %.4f target %.4f verdict %s", fit.slope, fit.target, fit.verdict)
    return EXIT_OK if fit.verdict else EXIT_FAIL


def cmd_iterate(cfg):
    from .bourgain import calibrate_c, make_schedule, measured_C_rho, run_iteration
    from .polycurve import calibrate_lattice

    c = _load_curve(cfg)
    f = _load_grid(cfg)
    kit = bump_kit(f.n)
    if cfg["gamma"] is None:
        lattice, _ = calibrate_lattice(c)
    else:
        lattice = _lattice(cfg["gamma"])
    eps = float(cfg["eps"])
    sched = make_schedule(eps, lattice, C_base=float(cfg["C_base"]), h=f.h, n=f.n)
    records = None
    cc = cfg["c"]
    if cc is None:
        m = cfg["calibration_dims"]
        dims = (int(m),) * f.n if m else f.dims
        cc, records = calibrate_c(f.n, dims, sched.ells, count=int(cfg["calibration_sets"]),
                                  density=eps, seed=int(cfg["seed"]))
    sched = sched.with_constants(float(cc), measured_C_rho(kit, sched.ells))
    payload = {"schedule": sched.to_json(), "c_calibration": records}
    try:
        trace = run_iteration(f, c, kit, sched, lattice=lattice)
    except BudgetExceeded as exc:
        payload.update({"status": "budget_exceeded", "message": str(exc),
                        "trace": exc.trace.to_json() if exc.trace else None})
        write_json(_out(cfg, ".json"), payload, cfg)
        return EXIT_FAIL
    payload.update({"status": "terminated", "trace": trace.to_json()})
    write_json(_out(cfg, ".json"), payload, cfg)
    return EXIT_OK if trace.budget_ok else EXIT_FAIL


def cmd_search(cfg):
    from .patterns import search

    c = _load_curve(cfg)
    E = _load_grid(cfg)
    eps = cfg["eps"] if cfg["eps"] is not None else float(np.mean(E.values))
    try:
        w = search(E, c, float(eps), lattice=_lattice(cfg["gamma"]))
    except (NoWitnessFound, NoSliceFound) as exc:
        detail = getattr(exc, "ledger", None) or getattr(exc, "max_measure", None)
        write_json(_out(cfg, ".json"), {"status": "not_found", "message": str(exc), "detail": detail}, cfg)
        return EXIT_FAIL
    write_json(_out(cfg, ".json"), {"status": "found", "witness": w.to_json()}, cfg)
    row = w.csv_row()
    write_csv(_out(cfg, ".csv"), [list(row), list(row.values())], cfg)
    return EXIT_OK


def cmd_corner(cfg):
    from .counting import corner_step
    from .patterns import corner_search

    P1, P2 = _poly(cfg["p1"]), _poly(cfg["p2"])
    S = _load_grid(cfg)
    lp, l, ldp = (int(v) for v in cfg["ells"])
    payload = {}
    code = EXIT_OK
    if all(lo == 0.0 and hi == 1.0 for lo, hi in S.box):
        audit = corner_step(S, P1, P2, kit=bump_kit(2), s=int(cfg["s"]), ell_prime=lp, ell=l, ell_dprime=ldp)
        payload["audit"] = audit.to_json()
        code = EXIT_OK if audit.ok else EXIT_FAIL
    if cfg["search"]:
        eps = cfg["eps"] if cfg["eps"] is not None else float(np.mean(S.values))
        try:
            payload["witness"] = corner_search(S, P1, P2, float(eps)).to_json()
        except NoWitnessFound as exc:
            payload["witness"] = {"status": "not_found", "message": str(exc), "ledger": exc.ledger}
            code = EXIT_FAIL
    write_json(_out(cfg, ".json"), payload, cfg)
    return code


def cmd_telescope(cfg):
    from .bourgain import make_schedule, telescope_audit

    f = _load_grid(cfg)
    ells = cfg["ells"]
    if ells is None:
        if cfg["eps"] is None:
            raise ValueError("give --ells or --eps")
        ells = make_schedule(float(cfg["eps"]), _lattice(cfg["gamma"]), C_base=float(cfg["C_base"]),
                             h=f.h, n=f.n).ells
    audit = telescope_audit(f, bump_kit(f.n), [int(v) for v in ells])
    write_json(_out(cfg, ".json"), {"audit": audit.to_json()}, cfg)
    return EXIT_OK if audit.ok else EXIT_FAIL


def _generate(cfg, kind, density):
    from . import sets

    dims = cfg.get("dims")
    if not dims:
        raise ValueError("--dims is required")
    dims = tuple(int(m) for m in dims)
    seed, side = int(cfg["seed"]), float(cfg["side"])
    if kind == "random":
        return sets.random_density_set(dims, density, seed, blob=int(cfg.get("blob", 1)), side=side), {}
    if kind == "balls":
        return sets.union_of_balls(dims, density, seed, radius=float(cfg.get("radius", 0.05)), side=side), {}
    if kind == "cantor":
        return sets.cantor_like(dims, levels=int(cfg.get("levels", 3)), side=side), {}
    if kind == "smooth":
        return sets.smooth_set(dims, density, side=side), {}
    if kind == "strip":
        return sets.strip_set(dims, cfg["direction"], float(cfg["width"]), float(cfg.get("offset", 0.0)),
                              side=side), {}
    if kind == "planted":
        c = _load_curve(cfg)
        if cfg.get("t") is None:
            raise ValueError("--t is required for planted sets")
        if cfg.get("tile"):
            return sets.planted_in_tile([c(np.asarray(float(cfg["t"])))], cfg["tile"], dims, side, seed)
        return sets.planted_pair(c, float(cfg["t"]), dims, seed=seed, side=side)
    if kind == "planted-corner":
        return sets.planted_corner(_poly(cfg["p1"]), _poly(cfg["p2"]), float(cfg["t"]), dims, seed=seed,
                                   side=side)
    raise ValueError(f"unknown generator kind {kind!r}")


def cmd_gen(cfg):
    f, info = _generate(cfg, cfg["kind"], float(cfg["eps"]))
    if not cfg.get("out"):
        raise ValueError("--out is required")
    hdr = header(cfg)
    write_grid(cfg["out"], f, {"header": hdr, "generator": _jsonable(info)})
    return EXIT_OK


COMMANDS = {"decay": cmd_decay, "iterate": cmd_iterate, "search": cmd_search, "corner": cmd_corner,
            "telescope": cmd_telescope, "gen": cmd_gen}


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--config", help="JSON file of options (flags take precedence)")
    p.add_argument("--out", help="output path (prefix for decay/iterate/search/corner/telescope)")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", help="grid file written by 'gen'")
    p.add_argument("--gen-kind", dest="gen_kind", help="generate the input set on the fly")
    p.add_argument("--dims", type=int, nargs="+")
    p.add_argument("--density", type=float)
    p.add_argument("--side", type=float)
    p.add_argument("--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="polypattern", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decay", help="multiplier decay sweep and slope fit")
    _add_common(p)
    p.add_argument("--curve")
    p.add_argument("--s", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--kmin", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--shell-points", dest="shell_points", type=int)
    p.add_argument("--slack", type=float)
    p.add_argument("--refine", type=int)
    p.add_argument("--lam-min", dest="lam_min", type=float)

    p = sub.add_parser("iterate", help="density-increment iteration on a set")
    _add_common(p)
    p.add_argument("--curve")
    p.add_argument("--eps", type=float)
    p.add_argument("--C-base", dest="C_base", type=float)
    p.add_argument("--gamma", type=int)
    p.add_argument("--c", type=float, help="lemma constant (measured when omitted)")
    p.add_argument("--calibration-sets", dest="calibration_sets", type=int)
    p.add_argument("--calibration-dims", dest="calibration_dims", type=int)

    p = sub.add_parser("search", help="two-point witness search")
    _add_common(p)
    p.add_argument("--curve")
    p.add_argument("--eps", type=float)
    p.add_argument("--gamma", type=int)

    p = sub.add_parser("corner", help="corner-form audit and optional triple search")
    _add_common(p)
    p.add_argument("--p1", help='JSON exponent map, e.g. \'{"1": 1}\'')
    p.add_argument("--p2")
    p.add_argument("--s", type=int)
    p.add_argument("--ells", type=int, nargs=3)
    p.add_argument("--eps", type=float)
    p.add_argument("--search", action="store_true", default=None)

    p = sub.add_parser("telescope", help="telescoping-sum budget audit")
    _add_common(p)
    p.add_argument("--ells", type=int, nargs="+")
    p.add_argument("--eps", type=float)
    p.add_argument("--gamma", type=int)
    p.add_argument("--C-base", dest="C_base", type=float)

    p = sub.add_parser("gen", help="write a seeded test set")
    _add_common(p)
    p.add_argument("--kind", choices=["random", "balls", "cantor", "smooth", "strip", "planted",
                                      "planted-corner"])
    p.add_argument("--eps", type=float, help="target density")
    p.add_argument("--curve")
    p.add_argument("--t", type=float)
    p.add_argument("--p1")
    p.add_argument("--p2")
    p.add_argument("--blob", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--levels", type=int)
    p.add_argument("--tile", type=float, nargs="+")
    p.add_argument("--direction", type=float, nargs="+")
    p.add_argument("--width", type=float)
    p.add_argument("--offset", type=float)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (PolyPatternError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
