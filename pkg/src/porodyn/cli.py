"""Command-line entry point for the two studies.

Subcommands::

    porodyn convergence --levels 0,1,2 --scheme dG --k 2 --r 4 --out results
    porodyn benchmark   --levels 1 --scheme cG --k 3 --r 3 --out results
    porodyn run         --levels 0 --out results      # one manufactured solve

Configuration is a flat ``key = value`` text file (``--config``) with
CLI flags and repeatable ``--set key=value`` taking precedence.  Every
run writes CSV artifacts plus ``run.log`` into the output directory.
Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field, asdict

import numpy as np

from .assembly import PENALTY_SCALES, lame_from_E_nu
from .mesh import LShapeGeometry
from .problems import (BenchmarkCase, ManufacturedCase, run_benchmark,
                       run_convergence, run_single)
from .timeslab import SlabSolveError

STUDIES = ("convergence", "benchmark", "single-run")


class ConfigError(ValueError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, key):
        super().__init__(f"unknown configuration key {key!r}")
        self.key = key


class InvalidValue(ConfigError):
    def __init__(self, key, value, accepted):
        super().__init__(f"invalid value {value!r} for key {key!r}; accepted: {accepted}")
        self.key = key


@dataclass
class RunConfig:
    """Validated configuration of one study run."""

    study: str = "convergence"
    scheme: str = "dG"
    k: int = 2
    r: int = 4
    levels: tuple = (0, 1, 2)
    solver: str = "gmres"
    rel_tol: float = 1e-10
    out: str = "results"
    # physics (convergence-study defaults; the benchmark study swaps in
    # its own E, nu, T unless explicitly overridden)
    rho: float = 1.0
    alpha: float = 0.9
    c0: float = 0.01
    E: float | None = None
    nu: float | None = None
    gamma_a: float | None = None
    gamma_b: float | None = None
    penalty_scale: str = "extent"
    t_final: float | None = None
    tau0: float | None = None
    tau: float | None = None          # explicit slab length (overrides tau0)
    samples_per_slab: int = 8
    # benchmark geometry and tags
    notch: tuple = (0.75, 1.0, 0.0, 0.5)
    roller_sides: tuple = ("bottom", "left")
    p_dirichlet_xmax: float = 0.5
    goal_x: float = 0.75
    goal_ymax: float = 0.5
    load_xmax: float = 0.5

    def effective(self) -> dict:
        """Full effective configuration with derived quantities echoed."""
        d = asdict(self)
        d["E"], d["nu"] = self.material_E_nu()
        d["t_final"] = self.final_time()
        d["tau0"] = self.base_tau()
        lam, mu = lame_from_E_nu(d["E"], d["nu"])
        d["lam"] = round(lam, 2)
        d["mu"] = round(mu, 2)
        d["levels"] = ",".join(str(l) for l in self.levels)
        d["notch"] = ":".join(repr(v) for v in self.notch)
        d["roller_sides"] = ",".join(self.roller_sides)
        return d

    def material_E_nu(self):
        if self.study == "benchmark":
            return (self.E if self.E is not None else 20000.0,
                    self.nu if self.nu is not None else 0.3)
        return (self.E if self.E is not None else 100.0,
                self.nu if self.nu is not None else 0.35)

    def final_time(self):
        if self.t_final is not None:
            return self.t_final
        return 8.0 if self.study == "benchmark" else 2.0

    def base_tau(self):
        return self.tau0 if self.tau0 is not None else 0.1

    def geometry(self) -> LShapeGeometry:
        return LShapeGeometry(notch=tuple(self.notch),
                              roller_sides=tuple(self.roller_sides),
                              p_dirichlet_xmax=self.p_dirichlet_xmax,
                              goal_x=self.goal_x, goal_ymax=self.goal_ymax)


def _parse_levels(raw):
    return tuple(int(part) for part in str(raw).replace(" ", "").split(",") if part)


def _parse_notch(raw):
    parts = [float(p) for p in str(raw).replace(" ", "").split(":")]
    if len(parts) != 4:
        raise ValueError
    return tuple(parts)


_KEY_PARSERS = {
    "study": (str, "one of " + "/".join(STUDIES)),
    "scheme": (str, "dG or cG"),
    "k": (int, "dG: k >= 0, cG: k >= 1"),
    "r": (int, "integer >= 2"),
    "levels": (_parse_levels, "comma-separated non-negative integers"),
    "solver": (str, "gmres or direct"),
    "rel_tol": (float, "float in (0, 1)"),
    "out": (str, "directory path"),
    "rho": (float, "positive float"),
    "alpha": (float, "positive float"),
    "c0": (float, "positive float"),
    "E": (float, "positive float"),
    "nu": (float, "float in [0, 0.5)"),
    "gamma_a": (float, "positive float"),
    "gamma_b": (float, "positive float"),
    "penalty_scale": (str, "one of " + "/".join(PENALTY_SCALES)),
    "t_final": (float, "positive float"),
    "tau0": (float, "positive float"),
    "tau": (float, "positive float"),
    "samples_per_slab": (int, "integer >= 4"),
    "notch": (_parse_notch, "x0:x1:y0:y1"),
    "roller_sides": (lambda s: tuple(p for p in str(s).split(",") if p),
                     "comma-separated subset of bottom,left,top,right"),
    "p_dirichlet_xmax": (float, "float in [0, 1]"),
    "goal_x": (float, "float in (0, 1)"),
    "goal_ymax": (float, "float in (0, 1]"),
    "load_xmax": (float, "float in (0, 1]"),
}


def _validate(cfg: RunConfig) -> RunConfig:
    def bad(key, value, accepted):
        raise InvalidValue(key, value, accepted)

    if cfg.study not in STUDIES:
        bad("study", cfg.study, "/".join(STUDIES))
    if cfg.scheme not in ("dG", "cG"):
        bad("scheme", cfg.scheme, "dG or cG")
    if cfg.scheme == "dG" and cfg.k < 0:
        bad("k", cfg.k, "k >= 0 for dG")
    if cfg.scheme == "cG" and cfg.k < 1:
        bad("k", cfg.k, "k >= 1 for cG")
    if cfg.r < 2:
        bad("r", cfg.r, "r >= 2")
    if not cfg.levels or any(l < 0 for l in cfg.levels):
        bad("levels", cfg.levels, "non-empty, levels >= 0")
    if cfg.solver not in ("gmres", "direct"):
        bad("solver", cfg.solver, "gmres or direct")
    if not 0.0 < cfg.rel_tol < 1.0:
        bad("rel_tol", cfg.rel_tol, "(0, 1)")
    for key in ("rho", "alpha", "c0"):
        if getattr(cfg, key) <= 0:
            bad(key, getattr(cfg, key), "positive")
    if cfg.E is not None and cfg.E <= 0:
        bad("E", cfg.E, "positive")
    if cfg.nu is not None and not 0.0 <= cfg.nu < 0.5:
        bad("nu", cfg.nu, "[0, 0.5)")
    if cfg.penalty_scale not in PENALTY_SCALES:
        bad("penalty_scale", cfg.penalty_scale, "/".join(PENALTY_SCALES))
    for key in ("t_final", "tau0", "tau"):
        val = getattr(cfg, key)
        if val is not None and val <= 0:
            bad(key, val, "positive")
    if cfg.samples_per_slab < 4:
        bad("samples_per_slab", cfg.samples_per_slab, ">= 4")
    if len(cfg.notch) != 4 or cfg.notch[0] >= cfg.notch[1] or cfg.notch[2] >= cfg.notch[3]:
        bad("notch", cfg.notch, "x0:x1:y0:y1 with x0 < x1, y0 < y1")
    if any(s not in ("bottom", "left", "top", "right") for s in cfg.roller_sides):
        bad("roller_sides", cfg.roller_sides, "subset of bottom,left,top,right")
    return cfg


def parse_config(path=None, overrides=None) -> RunConfig:
    """Build a validated RunConfig from a key=value file plus overrides."""
    values = {}
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            values[key.strip()] = raw.strip()
    if overrides:
        values.update(overrides)

    cfg = RunConfig()
    for key, raw in values.items():
        if key not in _KEY_PARSERS:
            raise UnknownKey(key)
        parser, accepted = _KEY_PARSERS[key]
        try:
            setattr(cfg, key, parser(raw))
        except (TypeError, ValueError):
            raise InvalidValue(key, raw, accepted) from None
    return _validate(cfg)


# ---------------------------------------------------------------------------
# artifact writers

def _fmt(x) -> str:
    return f"{x:.9e}"


def _config_comment(cfg: RunConfig) -> str:
    eff = cfg.effective()
    return "# config: " + " ".join(f"{k}={eff[k]}" for k in sorted(eff))


def write_convergence_csv(path, cfg: RunConfig, report) -> None:
    with open(path, "w") as fh:
        fh.write(_config_comment(cfg) + "\n")
        fh.write("level,h,tau,err_grad_u,eoc_grad_u,err_v,eoc_v,err_p,eoc_p\n")
        for row in report.rows():
            cells = [str(row[0]), _fmt(row[1]), _fmt(row[2])]
            for val in row[3:]:
                cells.append("" if val is None else
                             (_fmt(val) if abs(val) > 1e-300 or val == 0 else _fmt(val)))
            fh.write(",".join(cells) + "\n")


def write_goals_csv(path, cfg: RunConfig, series) -> None:
    with open(path, "w") as fh:
        fh.write(_config_comment(cfg) + "\n")
        fh.write("t,G_u,G_p\n")
        for t, gu, gp in zip(series.times, series.g_u, series.g_p):
            fh.write(f"{_fmt(t)},{_fmt(gu)},{_fmt(gp)}\n")


def write_characteristics_csv(path, cfg: RunConfig, level, window, chars) -> None:
    with open(path, "w") as fh:
        fh.write(_config_comment(cfg) + "\n")
        fh.write("scheme,k,r,level,window_start,window_end,"
                 "min_G_p,max_G_p,min_G_u,max_G_u\n")
        min_gp, max_gp, min_gu, max_gu = chars
        fh.write(",".join([cfg.scheme, str(cfg.k), str(cfg.r), str(level),
                           _fmt(window[0]), _fmt(window[1]), _fmt(min_gp),
                           _fmt(max_gp), _fmt(min_gu), _fmt(max_gu)]) + "\n")


# ---------------------------------------------------------------------------
# study execution

def _setup_logging(out_dir: str) -> logging.Logger:
    logger = logging.getLogger("porodyn")
    logger.setLevel(logging.INFO)
    logger.handlers.clear()
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    fh = logging.FileHandler(os.path.join(out_dir, "run.log"), mode="w")
    fh.setFormatter(fmt)
    logger.addHandler(fh)
    sh = logging.StreamHandler(sys.stderr)
    sh.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(sh)
    return logger


def run(cfg: RunConfig) -> int:
    """Execute the configured study and write its artifacts."""
    try:
        os.makedirs(cfg.out, exist_ok=True)
        probe = os.path.join(cfg.out, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        print(f"error: cannot use output directory {cfg.out!r}: {exc}",
              file=sys.stderr)
        return 2

    logger = _setup_logging(cfg.out)
    logger.info("effective configuration:")
    logger.info(_config_comment(cfg))
    E, nu = cfg.material_E_nu()

    try:
        if cfg.study in ("convergence", "single-run"):
            case = ManufacturedCase(rho=cfg.rho, alpha=cfg.alpha, c0=cfg.c0,
                                    E=E, nu=nu, t_final=cfg.final_time(),
                                    tau0=cfg.base_tau())
            levels = cfg.levels if cfg.study == "convergence" else cfg.levels[:1]
            report = run_convergence(case, cfg.scheme, cfg.k, cfg.r, levels,
                                     solver=cfg.solver, rel_tol=cfg.rel_tol,
                                     penalty_scale=cfg.penalty_scale,
                                     logger=logger)
            out_csv = os.path.join(cfg.out, "convergence.csv")
            write_convergence_csv(out_csv, cfg, report)
            logger.info("wrote %s", out_csv)
        else:
            case = BenchmarkCase(rho=cfg.rho, alpha=cfg.alpha, c0=cfg.c0,
                                 E=E, nu=nu, t_final=cfg.final_time(),
                                 tau0=cfg.base_tau(), geometry=cfg.geometry(),
                                 load_xmax=cfg.load_xmax)
            level = cfg.levels[0]
            tau = cfg.tau if cfg.tau is not None else case.tau0 / 2 ** level
            series, traj = run_benchmark(case, cfg.scheme, cfg.k, cfg.r, level,
                                         solver=cfg.solver, rel_tol=cfg.rel_tol,
                                         penalty_scale=cfg.penalty_scale,
                                         samples_per_slab=cfg.samples_per_slab,
                                         tau=tau, logger=logger)
            goals_csv = os.path.join(cfg.out, "goals.csv")
            write_goals_csv(goals_csv, cfg, series)
            T = cfg.final_time()
            window = (max(0.0, T - 1.0), T)
            chars = series.characteristics(window)
            chars_csv = os.path.join(cfg.out, "characteristics.csv")
            write_characteristics_csv(chars_csv, cfg, level, window, chars)
            logger.info("wrote %s and %s", goals_csv, chars_csv)
    except SlabSolveError as exc:
        logger.error("solver failure: %s", exc)
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="porodyn",
                                     description="dynamic poroelasticity studies")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("convergence", "benchmark", "run"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--scheme", default=None, choices=("dG", "cG"))
        p.add_argument("--k", type=int, default=None)
        p.add_argument("--r", type=int, default=None)
        p.add_argument("--levels", default=None)
        p.add_argument("--solver", default=None, choices=("gmres", "direct"))
        p.add_argument("--out", default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
    args = parser.parse_args(argv)

    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    for key in ("scheme", "k", "r", "levels", "solver", "out"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = val
    overrides["study"] = {"run": "single-run"}.get(args.command, args.command)

    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
