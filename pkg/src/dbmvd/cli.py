"""Batch command line front end.

Subcommand style, no daemon: ``kernel`` tabulates the radial transition
kernel to CSV, ``simulate`` writes sampled paths, ``verify`` runs the
consistency suite and exits nonzero if any check fails, ``classify``
prints the recurrence classification, and ``fit-bounds`` fits Gaussian
sandwich constants.

Configuration comes from an optional JSON file plus flags; flags win.
Unknown JSON keys are rejected with their exact key path.  Every
randomized command requires an explicit ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytic import classify
from .model import (ConfigurationError, ModelError, ModelParams, RhoProfile,
                    validate)
from .parametrix import (build_kernel_grid, fit_gaussian_bounds, get_engine)
from .simulate import (occupation_statistics, simulate_radial,
                       straddle_statistics)
from . import verify as _verify
from . import __version__

__all__ = ["RunConfig", "parse_config", "run", "main", "CONFIG_KEYS"]


COMMANDS = ("kernel", "simulate", "verify", "classify", "fit-bounds")

# Registry of every accepted configuration key: name, type, default,
# which commands read it, and the help line.  The --help epilog and the
# unknown-key check are both generated from this table so they cannot
# drift apart.
CONFIG_KEYS = [
    ("gamma", float, 1.0, COMMANDS, "drift parameter gamma"),
    ("rho", str, "exp:0.5", COMMANDS,
     "half-line weight profile: 'exp:ALPHA' or 'const' (= exp:0)"),
    ("p", float, 1.0, COMMANDS, "half-line branch weight p > 0"),
    ("T", float, 1.0, COMMANDS, "time horizon T > 0"),
    ("out", str, ".", COMMANDS, "output directory"),
    ("threads", int, 0, COMMANDS,
     "worker threads; 0 means available parallelism"),
    ("seed", int, None, ("simulate", "verify"),
     "RNG seed; required for randomized commands"),
    ("times", str, "0.25,0.5,1.0", ("kernel", "fit-bounds"),
     "comma-separated evaluation times"),
    ("r-min", float, -3.0, ("kernel", "fit-bounds"), "grid lower endpoint"),
    ("r-max", float, 3.0, ("kernel", "fit-bounds"), "grid upper endpoint"),
    ("r-step", float, 0.25, ("kernel", "fit-bounds"), "grid spacing"),
    ("t", float, 0.5, ("simulate",), "path length in time"),
    ("r0", float, 0.0, ("simulate",), "starting radial coordinate"),
    ("dt", float, 1e-3, ("simulate", "verify"), "Euler step size"),
    ("n-paths", int, 1, ("simulate",), "number of independent paths"),
    ("record-stride", int, 1, ("simulate",),
     "record every k-th step in the path CSV"),
    ("mc-paths", int, 100000, ("verify",),
     "Monte Carlo sample size for the distributional checks"),
    ("checks", str, "ck,mass,symmetry,mc,killed", ("verify",),
     "comma-separated subset of verification checks"),
    ("cases", str, "radial,i,ii,iii", ("fit-bounds",),
     "comma-separated envelope cases"),
    ("ck-tol", float, 1e-3, ("verify",), "Chapman-Kolmogorov tolerance"),
    ("mass-tol-radial", float, 1e-3, ("verify",), "radial mass tolerance"),
    ("mass-tol-full", float, 2e-3, ("verify",), "full-space mass tolerance"),
]

_KEY_SET = {k for k, *_ in CONFIG_KEYS}
_RHO_SUBKEYS = {"family", "alpha", "grid", "values", "derivatives"}


@dataclass
class RunConfig:
    """Resolved configuration for one batch run."""

    command: str
    params: ModelParams
    grids: dict = field(default_factory=dict)
    seed: int | None = None
    tolerances: dict = field(default_factory=dict)
    outdir: Path = Path(".")
    threads: int = 0
    options: dict = field(default_factory=dict)

    def workers(self):
        return self.threads if self.threads > 0 else (os.cpu_count() or 1)


def _parse_rho(value):
    if isinstance(value, dict):
        for k in value:
            if k not in _RHO_SUBKEYS:
                raise ConfigurationError(f"unknown config key: rho.{k}")
        return RhoProfile.from_dict(value)
    if value == "const":
        return RhoProfile.exponential(0.0)
    if isinstance(value, str) and value.startswith("exp:"):
        return RhoProfile.exponential(float(value[4:]))
    raise ConfigurationError(
        f"rho must be 'exp:ALPHA', 'const' or a profile object, got {value!r}")


def _float_list(text):
    return [float(s) for s in str(text).split(",") if s.strip()]


def parse_config(source=None, flags=None, command=None):
    """Build a :class:`RunConfig` from JSON text and/or parsed flags.

    Flags override JSON values key by key.  Unknown JSON keys fail with
    the exact key path; malformed JSON fails with line and column.
    """
    merged = {k: d for k, _, d, _, _ in CONFIG_KEYS}
    if source:
        try:
            data = json.loads(source)
        except json.JSONDecodeError as e:
            raise ConfigurationError(
                f"config parse error at line {e.lineno}, column {e.colno}: "
                f"{e.msg}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("config root must be a JSON object")
        for k, v in data.items():
            if k == "command":
                command = v
                continue
            if k not in _KEY_SET:
                raise ConfigurationError(f"unknown config key: {k}")
            if isinstance(v, dict) and k != "rho":
                raise ConfigurationError(
                    f"config key {k} does not take an object")
            merged[k] = v
    if flags:
        for k, v in flags.items():
            key = k.replace("_", "-")
            if v is not None and key in _KEY_SET:
                merged[key] = v
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}")

    rho = merged["rho"] if isinstance(merged["rho"], RhoProfile) \
        else _parse_rho(merged["rho"])
    try:
        params = ModelParams(gamma=float(merged["gamma"]),
                             weight_p=float(merged["p"]),
                             horizon_T=float(merged["T"]), rho=rho)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid model parameter: {e}") from None
    validate(params)

    times = _float_list(merged["times"])
    lo, hi, st = (float(merged["r-min"]), float(merged["r-max"]),
                  float(merged["r-step"]))
    if not st > 0 or not hi > lo:
        raise ConfigurationError(
            f"bad grid: r-min={lo} r-max={hi} r-step={st}")
    grids = {"times": times,
             "rgrid": np.arange(lo, hi + 1e-12, st).tolist()}
    seed = merged["seed"]
    if seed is not None:
        seed = int(seed)
    if command in ("simulate", "verify") and seed is None:
        raise ConfigurationError(
            f"command {command!r} is randomized and requires --seed")
    tol = {"ck": float(merged["ck-tol"]),
           "mass_radial": float(merged["mass-tol-radial"]),
           "mass_full": float(merged["mass-tol-full"])}
    options = {"t": float(merged["t"]), "r0": float(merged["r0"]),
               "dt": float(merged["dt"]), "n_paths": int(merged["n-paths"]),
               "record_stride": int(merged["record-stride"]),
               "mc_paths": int(merged["mc-paths"]),
               "checks": [s.strip() for s in str(merged["checks"]).split(",")
                          if s.strip()],
               "cases": [s.strip() for s in str(merged["cases"]).split(",")
                         if s.strip()]}
    outdir = Path(merged["out"])
    if not outdir.is_dir():
        raise ConfigurationError(f"output directory {outdir} does not exist")
    if not os.access(outdir, os.W_OK):
        raise ConfigurationError(f"output directory {outdir} is not writable")
    return RunConfig(command=command, params=params, grids=grids, seed=seed,
                     tolerances=tol, outdir=outdir,
                     threads=int(merged["threads"]), options=options)


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------

def _run_kernel(cfg: RunConfig):
    grid = build_kernel_grid(cfg.params, times=cfg.grids["times"],
                             rgrid=cfg.grids["rgrid"])
    tag = cfg.params.digest()
    csv_path = cfg.outdir / f"kernel_{tag}.csv"
    meta_path = cfg.outdir / f"kernel_{tag}.meta.json"
    grid.to_csv(csv_path)
    grid.metadata_json(meta_path)
    print(csv_path)
    print(meta_path)
    return 0


def _run_simulate(cfg: RunConfig):
    o = cfg.options
    summary = {"schema": "v1", "params": cfg.params.to_dict(),
               "seed": cfg.seed, "t": o["t"], "dt": o["dt"], "paths": []}
    for i in range(o["n_paths"]):
        path = simulate_radial(cfg.params, o["r0"], o["t"], o["dt"],
                               cfg.seed + i, record_stride=o["record_stride"])
        out = cfg.outdir / f"path_{cfg.seed + i}.csv"
        path.to_csv(out)
        occ = occupation_statistics(path, cfg.params)
        summary["paths"].append({
            "file": out.name, "seed": cfg.seed + i,
            "straddles": int(path.straddles),
            "positive_exits": int(path.positive_exits),
            "terminal": float(path.y[-1]),
            "local_time": float(path.local_time[-1]),
            "ball_fraction_3d": occ.frac_ball_conditional})
        print(out)
    spath = cfg.outdir / "simulate_summary.json"
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(spath)
    return 0


def _run_verify(cfg: RunConfig):
    o = cfg.options
    pm = cfg.params
    # checks share one kernel engine; build it before going parallel
    get_engine(pm)._ensure_built()
    jobs = {
        "ck": lambda: _verify.ck_residual(pm, tol=cfg.tolerances["ck"]),
        "mass": lambda: _verify.mass_check(
            pm, tol_radial=cfg.tolerances["mass_radial"],
            tol_full=cfg.tolerances["mass_full"]),
        "symmetry": lambda: _verify.symmetry_check(pm),
        "mc": lambda: _verify.mc_compare(
            pm, 0.5, 0.2, o["mc_paths"], o["dt"], cfg.seed),
        "killed": lambda: _verify.killed_kernel_mc(
            pm, 0.5, 1.0, o["mc_paths"], o["dt"], cfg.seed),
    }
    unknown = [c for c in o["checks"] if c not in jobs]
    if unknown:
        raise ConfigurationError(f"unknown checks: {unknown}")
    with ThreadPoolExecutor(max_workers=cfg.workers()) as pool:
        futures = {name: pool.submit(jobs[name]) for name in o["checks"]}
        reports = [futures[name].result() for name in o["checks"]]
    rpath = cfg.outdir / "verify_report.jsonl"
    ok = _verify.write_reports(reports, rpath)
    for rep in reports:
        print(f"{rep.name}: {'pass' if rep.passed else 'FAIL'}")
    print(rpath)
    return 0 if ok else 1


def _run_classify(cfg: RunConfig):
    cls = classify(cfg.params)
    print(str(cls))
    print(f"  gamma = {cfg.params.gamma}")
    print(f"  1/rho integrable: {cfg.params.rho.one_over_rho_integrable}")
    print(f"  divergence witness: {cls.divergence_witness:.6g}")
    return 0


def _run_fit_bounds(cfg: RunConfig):
    fits = []
    for case in cfg.options["cases"]:
        if case == "radial":
            grid = build_kernel_grid(cfg.params, times=cfg.grids["times"],
                                     rgrid=cfg.grids["rgrid"])
            fits.append(fit_gaussian_bounds(grid, "radial"))
        else:
            fits.append(fit_gaussian_bounds(None, case, params=cfg.params,
                                            times=cfg.grids["times"]))
    out = {"schema": "v1", "params": cfg.params.to_dict(),
           "fits": [f.to_dict() for f in fits],
           "violations": [{"case": f.case, "nodes": f.worst_nodes}
                          for f in fits if f.violations]}
    fpath = cfg.outdir / "bound_fits.json"
    with open(fpath, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    for f in fits:
        print(f"{f.case}: C_l={f.C_lower:.4g} c_l={f.c_lower:.4g} "
              f"C_u={f.C_upper:.4g} c_u={f.c_upper:.4g} "
              f"violations={f.violations}/{f.n_nodes}")
    print(fpath)
    return 0 if all(f.feasible for f in fits) else 1


_RUNNERS = {"kernel": _run_kernel, "simulate": _run_simulate,
            "verify": _run_verify, "classify": _run_classify,
            "fit-bounds": _run_fit_bounds}


def run(cfg: RunConfig) -> int:
    """Execute one configured command; returns the exit status."""
    if cfg.threads > 0:
        os.environ.setdefault("NUMBA_NUM_THREADS", str(cfg.threads))
    return _RUNNERS[cfg.command](cfg)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _epilog():
    lines = ["configuration keys (JSON file and/or flags; flags win):"]
    for key, typ, default, cmds, hlp in CONFIG_KEYS:
        scope = "all" if cmds == COMMANDS else ",".join(cmds)
        lines.append(f"  {key:<16} [{typ.__name__}] default={default!r}"
                     f"  ({scope})  {hlp}")
    return "\n".join(lines)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="dbmvd",
        description="Distorted Brownian motion on a glued half-line/R^3 "
                    "space: kernels, simulation, verification.",
        epilog=_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--config", metavar="FILE",
                    help="JSON configuration file; flags override it")
    for key, typ, default, cmds, hlp in CONFIG_KEYS:
        ap.add_argument(f"--{key}", type=typ if typ is not str else str,
                        default=None, help=hlp, metavar=key.upper())
    ap.add_argument("command", choices=COMMANDS)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    source = None
    try:
        if ns.config:
            source = Path(ns.config).read_text()
        flags = {k: v for k, v in vars(ns).items()
                 if k not in ("config", "command")}
        cfg = parse_config(source=source, flags=flags, command=ns.command)
        return run(cfg)
    except ModelError as e:
        code = type(e).__name__
        module = type(e).__module__.rsplit(".", 1)[-1]
        sys.stderr.write(json.dumps(
            {"error": {"module": module, "code": code, "message": str(e)}})
            + "\n")
        return 2
    except OSError as e:
        sys.stderr.write(json.dumps(
            {"error": {"module": "cli", "code": "OSError",
                       "message": str(e)}}) + "\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
