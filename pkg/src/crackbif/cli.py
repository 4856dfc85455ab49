"""Batch command-line front end: ``crackbif {solve,trace,decay,folds,converge}``.

Every command writes into ``--out`` (default ``./out``): its resolved
configuration as ``config.json`` (re-runnable via ``--config``), a
``report.json`` and the command's CSV tables.  Exit status is 0 on
success, 1 on a numerical failure (the error class name is recorded in
``report.json``) and 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import convergence_study, decay_profile
from .continuation import (
    ContinuationConfig,
    equilibrate,
    refine_all,
    refine_fold,
    run_path,
)
from .errors import CrackBifError, NondegeneracyFailed
from .io import (
    initial_field,
    write_csv,
    write_field_csv,
    write_folds_json,
    write_json,
    write_path_csv,
)
from .lattice import build_domain, h1_norm
from .model import Model, PairPotential
from .solvers import classify, newton, smallest_eigenpair

log = logging.getLogger("crackbif")

COMMANDS = ("solve", "trace", "decay", "folds", "converge")

# Defaults per setting; a command only reads the keys it needs.
DEFAULTS = {
    "radius": 32.0,
    "k": 0.2,
    "k_start": 0.2,
    "k_window": [0.15, 0.55],
    "u_start": "zero",
    "strategy": "auto",
    "ds_init": 0.05,
    "ds_min": 1e-6,
    "ds_max": 0.25,
    "max_steps": 2000,
    "max_folds": None,
    "target_iterations": 3,
    "eigen_every": 5,
    "direction": 1,
    "newton_tol": 1e-8,
    "max_iter": 25,
    "potential": [1.0 / 6.0, 3.0],
    "fit_range": None,
    "with_fold": True,
    "radii": None,
    "radii_sched": [20, 26],
    "reference_radius": None,
    "tips": [-1, 0, 1],
    "include_k": False,
    "jobs": 1,
}

COMMAND_KEYS = {
    "solve": {"radius", "k", "u_start", "strategy", "newton_tol", "max_iter", "potential"},
    "trace": {"radius", "k_start", "k_window", "u_start", "ds_init", "ds_min", "ds_max",
              "max_steps", "max_folds", "target_iterations", "eigen_every", "direction",
              "newton_tol", "potential"},
    "decay": {"radius", "k", "u_start", "newton_tol", "potential", "fit_range", "with_fold",
              "ds_init", "ds_min", "ds_max", "max_steps", "k_window"},
    "converge": {"radii", "radii_sched", "reference_radius", "tips", "include_k", "jobs",
                 "k_start", "k_window", "u_start", "ds_init", "ds_min", "ds_max",
                 "max_steps", "target_iterations", "eigen_every", "newton_tol", "potential"},
}
COMMAND_KEYS["folds"] = COMMAND_KEYS["trace"]


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


# -- value parsers ---------------------------------------------------------------


def _pair(text, cast=float):
    if isinstance(text, (list, tuple)):
        vals = list(text)
    else:
        vals = str(text).split(":")
    if len(vals) != 2:
        raise ValueError(f"expected 'lo:hi', got {text!r}")
    return [cast(v) for v in vals]


def _list(text, cast=float):
    if isinstance(text, (list, tuple)):
        return [cast(v) for v in text]
    return [cast(v) for v in str(text).split(",") if v.strip()]


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v):
    return None if v is None or str(v).lower() == "none" else int(v)


def _opt_float(v):
    return None if v is None or str(v).lower() == "none" else float(v)


def _opt_pair(v):
    return None if v is None or str(v).lower() == "none" else _pair(v)


CASTS = {
    "radius": float, "k": float, "k_start": float, "k_window": _pair,
    "u_start": str, "strategy": str, "ds_init": float, "ds_min": float, "ds_max": float,
    "max_steps": int, "max_folds": _opt_int, "target_iterations": int,
    "eigen_every": int, "direction": int, "newton_tol": float, "max_iter": int,
    "potential": lambda v: _list(v, float), "fit_range": _opt_pair,
    "with_fold": _bool, "radii": lambda v: None if v is None else _list(v, float),
    "radii_sched": lambda v: _pair(v, int), "reference_radius": _opt_float,
    "tips": lambda v: _list(v, int), "include_k": _bool, "jobs": int,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crackbif", description="Lattice crack bifurcation toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="JSON file of settings; flags take precedence")
        sp.add_argument("--out", default="out", help="output directory (default ./out)")
        sp.add_argument("-v", "--verbose", action="count", default=0)
        sp.add_argument("--potential", metavar="A,a", help="pair potential parameters")
        sp.add_argument("--newton-tol", dest="newton_tol", help="l-infinity residual target")
        sp.add_argument("--u-start", dest="u_start", help="'zero' or 'file:<field.csv>'")

    def stepping(sp):
        sp.add_argument("--k-window", dest="k_window", metavar="LO:HI")
        sp.add_argument("--ds-init", dest="ds_init")
        sp.add_argument("--ds-min", dest="ds_min")
        sp.add_argument("--ds-max", dest="ds_max")
        sp.add_argument("--max-steps", dest="max_steps")

    s = sub.add_parser("solve", help="Newton equilibrium at fixed (R, k)")
    common(s)
    s.add_argument("--radius")
    s.add_argument("--k")
    s.add_argument("--strategy", help="auto (default) | newton: plain Newton only")
    s.add_argument("--max-iter", dest="max_iter")

    for name, text in (("trace", "pseudo-arclength trace with fold brackets"),
                       ("folds", "trace, refine and certify every fold")):
        t = sub.add_parser(name, help=text)
        common(t)
        stepping(t)
        t.add_argument("--radius")
        t.add_argument("--k-start", dest="k_start")
        t.add_argument("--max-folds", dest="max_folds")
        t.add_argument("--eigen-every", dest="eigen_every")
        t.add_argument("--target-iterations", dest="target_iterations")
        t.add_argument("--direction", help="+1 or -1: initial sign of dk/ds")

    d = sub.add_parser("decay", help="decay envelopes of u and of the fold eigenvector")
    common(d)
    stepping(d)
    d.add_argument("--radius")
    d.add_argument("--k")
    d.add_argument("--fit-range", dest="fit_range", metavar="LO:HI")
    d.add_argument("--with-fold", dest="with_fold", help="also trace to the next fold (true/false)")

    c = sub.add_parser("converge", help="multi-radius convergence study")
    common(c)
    stepping(c)
    c.add_argument("--radii", help="comma-separated radii (overrides --radii-sched)")
    c.add_argument("--radii-sched", dest="radii_sched", metavar="N_LO:N_HI",
                   help="radii 2^(n/4) for n_lo <= n <= n_hi")
    c.add_argument("--reference-radius", dest="reference_radius")
    c.add_argument("--k-start", dest="k_start")
    c.add_argument("--tips", help="comma-separated breaking bonds to compare (write --tips=-1,0,1)")
    c.add_argument("--include-k", dest="include_k", help="add |dk| to the path metric")
    c.add_argument("--jobs", help="worker processes")
    c.add_argument("--eigen-every", dest="eigen_every")
    c.add_argument("--target-iterations", dest="target_iterations")
    return p


def resolve(args) -> dict:
    """Merge defaults, the ``--config`` file and explicit flags; validate."""
    cmd = args.command
    keys = COMMAND_KEYS[cmd]
    settings = {k: DEFAULTS[k] for k in keys}
    if cmd == "decay":
        settings["k"] = 0.455
        settings["k_window"] = [0.40, 0.55]
        settings["radius"] = 64.0
    if cmd == "converge":
        settings["k_start"] = 0.455
        settings["k_window"] = [0.40, 0.49]
        settings["max_steps"] = 3000
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a JSON object")
        if loaded.get("command", cmd) != cmd:
            raise ConfigError("config.command", f"file is for '{loaded['command']}', not '{cmd}'")
        for key, val in loaded.items():
            if key == "command":
                continue
            if key not in keys:
                raise ConfigError(f"config.{key}", f"unknown setting for '{cmd}'")
            settings[key] = val
    overrides = []
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
            overrides.append(key)
    for key in keys:
        try:
            settings[key] = CASTS[key](settings[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.{key}", str(exc)) from exc
    _validate(cmd, settings)
    settings["command"] = cmd
    return settings


def _validate(cmd, s):
    if "radius" in s and s["radius"] < 2:
        raise ConfigError("config.radius", "must be at least 2")
    if "potential" in s and len(s["potential"]) != 2:
        raise ConfigError("config.potential", "expected two numbers A,a")
    if s.get("strategy", "auto") not in ("auto", "newton"):
        raise ConfigError("config.strategy", "must be 'auto' or 'newton'")
    if "jobs" in s and s["jobs"] < 1:
        raise ConfigError("config.jobs", "must be positive")
    if "radii_sched" in s and s["radii_sched"][0] > s["radii_sched"][1]:
        raise ConfigError("config.radii_sched", "n_lo must not exceed n_hi")
    u = s.get("u_start", "zero")
    if u != "zero" and not u.startswith("file:"):
        raise ConfigError("config.u_start", "must be 'zero' or 'file:<path>'")
    if u.startswith("file:") and not Path(u[5:]).is_file():
        raise ConfigError("config.u_start", f"no such file {u[5:]!r}")
    if cmd in ("trace", "folds", "decay", "converge"):
        try:
            continuation_config(s)
        except ValueError as exc:
            raise ConfigError("config", str(exc)) from exc


def continuation_config(s: dict, R: float | None = None, k_start: float | None = None):
    names = {f.name for f in fields(ContinuationConfig)}
    kw = {k: v for k, v in s.items() if k in names}
    kw["R"] = float(R if R is not None else s.get("radius", 32.0))
    if k_start is not None:
        kw["k_start"] = k_start
    elif "k_start" not in kw and "k" in s:
        kw["k_start"] = s["k"]
    kw["potential"] = tuple(s["potential"])
    return ContinuationConfig(**kw)


def radii_from(s: dict) -> list[float]:
    if s.get("radii"):
        return sorted(float(r) for r in s["radii"])
    lo, hi = s["radii_sched"]
    return [2.0 ** (n / 4.0) for n in range(lo, hi + 1)]


# -- commands --------------------------------------------------------------------


def _model(s):
    d = build_domain(s["radius"])
    return d, Model(d, PairPotential(*s["potential"]))


def cmd_solve(s, out: Path) -> dict:
    d, m = _model(s)
    cfg = continuation_config(s)
    u0 = initial_field(cfg, d)
    u0 = np.zeros(d.n_sites) if u0 is None else u0
    strategy = "newton"
    if s["strategy"] == "newton":
        rep = newton(m, s["k"], u0, tol=s["newton_tol"], max_iter=s["max_iter"])
    else:
        try:
            rep = newton(m, s["k"], u0, tol=s["newton_tol"], max_iter=s["max_iter"])
        except CrackBifError as exc:
            log.info("plain Newton failed (%s); relaxing first", type(exc).__name__)
            strategy = "descent+newton"
            rep = equilibrate(m, s["k"], u0, tol=s["newton_tol"])
    pair = smallest_eigenpair(m.hessian(rep.final_field, s["k"]), d.gram)
    write_field_csv(out / "field.csv", d, rep.final_field)
    return {
        "domain": d.summary(),
        "converged": rep.converged,
        "iterations": rep.iterations,
        "residual": rep.residual,
        "residual_history": rep.residual_history,
        "strategy": strategy,
        "energy": m.energy(rep.final_field, s["k"]),
        "h1_norm_u": h1_norm(d, rep.final_field),
        "mu": pair.mu,
        "class": classify(pair.mu),
    }


def _trace(s, out: Path, certify: bool) -> dict:
    d, m = _model(s)
    cfg = continuation_config(s)
    res = run_path(m, cfg, u_start=initial_field(cfg, d))
    write_path_csv(out / "path.csv", d, res.points)
    folds = refine_all(m, res, certify=False)
    write_folds_json(out / "folds.json", folds)
    rows = [(i, f.tip, f.family, f.s_fold, f.k_fold, f.mu_left, f.mu_right,
             f.b_dot_gamma, f.third, f.certified) for i, f in enumerate(folds)]
    write_csv(out / "folds.csv", ("fold", "tip", "family", "s", "k", "mu_left", "mu_right",
                                  "b_dot_gamma", "third", "certified"), rows)
    report = {
        "domain": d.summary(),
        "n_points": len(res.points),
        "stop_reason": res.stop_reason,
        "n_folds": len(folds),
        "n_certified": sum(f.certified for f in folds),
        "fold_k": [f.k_fold for f in folds],
    }
    bad = [f for f in folds if not f.certified]
    if certify and bad:
        raise NondegeneracyFailed(
            f"{len(bad)} of {len(folds)} folds failed certification", report=report)
    return report


def cmd_trace(s, out):
    return _trace(s, out, certify=False)


def cmd_folds(s, out):
    return _trace(s, out, certify=True)


def cmd_decay(s, out: Path) -> dict:
    d, m = _model(s)
    cfg = continuation_config(s, k_start=s["k"])
    rep = equilibrate(m, s["k"], initial_field(cfg, d) if s["u_start"] != "zero"
                      else np.zeros(d.n_sites), tol=s["newton_tol"])
    prof = decay_profile(d, rep.final_field, s["fit_range"])
    write_csv(out / "decay_u.csv", ("r_mid", "envelope", "in_fit"),
              [(r["r_mid"], r["envelope"], int(r["in_fit"])) for r in prof.rows()])
    write_field_csv(out / "field.csv", d, rep.final_field)
    report = {"domain": d.summary(), "k": s["k"],
              "u": {"slope": prof.fitted_slope, "prefactor": prof.prefactor, "r2": prof.r2,
                    "fit_range": list(prof.fit_range)}}
    if s["with_fold"]:
        cfg.max_folds = 1
        res = run_path(m, cfg, u_start=rep.final_field)
        if not res.brackets:
            report["gamma"] = None
            report["gamma_note"] = f"no fold reached ({res.stop_reason})"
        else:
            i, j = res.brackets[0]
            fold = refine_fold(m, res.points[i], res.points[j], certify=False)
            gp = decay_profile(d, fold.gamma, s["fit_range"])
            write_csv(out / "decay_gamma.csv", ("r_mid", "envelope", "in_fit"),
                      [(r["r_mid"], r["envelope"], int(r["in_fit"])) for r in gp.rows()])
            report["gamma"] = {"slope": gp.fitted_slope, "prefactor": gp.prefactor,
                               "r2": gp.r2, "k_fold": fold.k_fold, "tip": fold.tip}
    return report


def cmd_converge(s, out: Path) -> dict:
    radii = radii_from(s)
    cfg = continuation_config(s, R=radii[0])
    rep = convergence_study(radii, cfg, reference_radius=s["reference_radius"],
                            tips=s["tips"], jobs=s["jobs"], include_k=s["include_k"])
    rep.write(out)
    failed = {f"{R:.6g}": r["error"] for R, r in rep.runs.items() if r["error"]}
    return {"radii": rep.radii, "reference_radius": rep.reference_radius,
            "failed_radii": failed, "see": "report.json"}


HANDLERS = {"solve": cmd_solve, "trace": cmd_trace, "decay": cmd_decay,
            "folds": cmd_folds, "converge": cmd_converge}


def run_command(argv=None) -> int:
    """Parse ``argv``, run the command and return the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        settings = resolve(args)
    except ConfigError as exc:
        print(f"crackbif: config error: {exc}", file=sys.stderr)
        return 2
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", settings)
    t0 = time.perf_counter()
    cmd = settings["command"]
    try:
        body = HANDLERS[cmd](settings, out)
        status, code = {"error": None}, 0
    except CrackBifError as exc:
        body = exc.report if isinstance(exc.report, dict) else {}
        status, code = {"error": type(exc).__name__, "message": str(exc)}, 1
        print(f"crackbif: {type(exc).__name__}: {exc}", file=sys.stderr)
    report = {"command": cmd, **body, **status,
              "wall_seconds": round(time.perf_counter() - t0, 3)}
    if cmd == "converge" and code == 0:
        # the study report already lives in report.json; add the run status next to it
        write_json(out / "run.json", report)
    else:
        write_json(out / "report.json", report)
    return code


def main():  # pragma: no cover - console entry point
    sys.exit(run_command())


if __name__ == "__main__":  # pragma: no cover
    main()
