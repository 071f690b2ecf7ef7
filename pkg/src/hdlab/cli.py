"""Batch experiment runner.

Usage::

    hdlab check-morphism --map dilation:2 --points 1000 --seed 1 --out out/
    hdlab --command simulate-path --n 1 --T 1 --dt 0.001 --seed 7
    hdlab --config run.cfg --dt 0.001

Settings resolve as defaults < config file (``key = value`` lines) <
``HDL_<KEY>`` environment variables < command-line flags.  Each run writes
``config.json`` (resolved settings), ``report.json`` (a pure function of the
config), ``metadata.json`` (timestamp, wall time) and CSV data files.

Exit codes: 0 all assertions pass, 1 assertion failure, 2 usage error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .catalog import is_catalog_id, parse_catalog, parse_map
from .dirichlet import (NonExitError, compare_exits_to_kernel, estimate_from_exits,
                        kernel_normalization, koranyi_ball, simulate_exits,
                        sphere_quadrature)
from .fields import get_field
from .heis_core import horizontality_residual
from .morphism import (bm_test_battery, distortion_check, is_harmonic_morphism,
                       per_path_statistics, sample_points)
from .paths import path_header, quadratic_variation, simulate_hbm, uniform_grid, write_path_csv
from .rng import RngSpec
from .timechange import simulate_pushforward

log = logging.getLogger("hdlab")

COMMANDS = ("simulate-path", "dirichlet-solve", "harmonic-measure-compare",
            "check-morphism", "pushforward-test", "mean-value-check")
EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _floats(text) -> Optional[Tuple[float, ...]]:
    if text is None or isinstance(text, tuple):
        return text
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    command: str = ""
    n: int = 1
    p: Optional[int] = None
    T: float = 1.0
    dt: float = 1e-3
    samples: int = 1000
    paths: Optional[int] = None
    seed: int = 0
    map: str = "identity"
    ball_center: Optional[Tuple[float, ...]] = None
    ball_radius: float = 1.0
    start: Optional[Tuple[float, ...]] = None
    out: str = "hdlab-out"
    workers: int = 1
    level: float = 0.01
    points: int = 1000
    sample_radius: float = 2.0
    phi: str = "x1"
    u: str = "x1"
    time_change: bool = True
    oversample: int = 4
    max_steps: int = 10 ** 7
    resolution: int = 48
    rel_tol: float = 0.02
    tol_harmonic: Optional[float] = None
    tol_conformal: Optional[float] = None
    tol_contact: Optional[float] = None

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise ConfigError("command", f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")
        if self.paths is None:
            self.paths = 1 if self.command == "simulate-path" else 200
        for name in ("n", "samples", "paths", "points", "workers", "oversample", "max_steps", "resolution"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.p is not None and self.p < 1:
            raise ConfigError("p", f"must be >= 1, got {self.p}")
        for name in ("T", "dt", "ball_radius", "sample_radius", "rel_tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(name, f"must be positive, got {v}")
        if not 0 < self.level < 1:
            raise ConfigError("level", f"must lie in (0, 1), got {self.level}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {self.seed}")
        for name in ("ball_center", "start"):
            v = getattr(self, name)
            if v is not None and len(v) != 2 * self.n + 1:
                raise ConfigError(name, f"needs {2 * self.n + 1} coordinates for H^{self.n}, got {len(v)}")
        for name in ("tol_harmonic", "tol_conformal", "tol_contact"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(name, f"must be positive, got {v}")
        out = Path(self.out).absolute()
        if out.exists() and not out.is_dir():
            raise ConfigError("out", f"{out} exists and is not a directory")
        base = out
        while not base.exists():
            base = base.parent
        if not os.access(base, os.W_OK):
            raise ConfigError("out", f"output directory {out} is not writable")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("ball_center", "start"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d


_CONVERTERS = {
    "command": str, "n": int, "p": int, "T": float, "dt": float, "samples": int,
    "paths": int, "seed": int, "map": str, "ball_center": _floats, "ball_radius": float,
    "start": _floats, "out": str, "workers": int, "level": float, "points": int,
    "sample_radius": float, "phi": str, "u": str, "time_change": _bool,
    "oversample": int, "max_steps": int, "resolution": int, "rel_tol": float,
    "tol_harmonic": float, "tol_conformal": float, "tol_contact": float,
}
assert set(_CONVERTERS) == {f.name for f in fields(ExperimentConfig)}


def _convert(key: str, value):
    if key not in _CONVERTERS:
        raise ConfigError(key, "unknown key")
    try:
        return _CONVERTERS[key](value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"invalid value {value!r} ({exc})") from None


def read_config_file(path) -> dict:
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError("config", f"line {lineno}: expected 'key = value'")
        key = key.strip().replace("-", "_")
        values[key] = _convert(key, value.strip())
    return values


def _env_values(env: Mapping[str, str]) -> dict:
    values = {}
    lower = {k.lower(): k for k in _CONVERTERS}
    for name, value in env.items():
        if not name.startswith("HDL_"):
            continue
        key = lower.get(name[4:].lower())
        if key is None:
            raise ConfigError(name, "unknown environment override")
        values[key] = _convert(key, value)
    return values


class _ArgParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


def build_parser() -> argparse.ArgumentParser:
    ap = _ArgParser(prog="hdlab", description="Horizontal Brownian motion experiments",
                    argument_default=argparse.SUPPRESS)
    ap.add_argument("positional_command", nargs="?", metavar="COMMAND",
                    help=f"one of {', '.join(COMMANDS)} (same as --command)")
    ap.add_argument("--config", help="file of 'key = value' lines")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "time_change":
            ap.add_argument(flag, dest=f.name, metavar="BOOL")
        else:
            ap.add_argument(flag, dest=f.name)
    return ap


def parse_config(argv: Sequence[str], env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    env = os.environ if env is None else env
    ns = vars(build_parser().parse_args(list(argv)))
    merged = {}
    if "config" in ns:
        merged.update(read_config_file(ns.pop("config")))
    merged.update(_env_values(env))
    pos = ns.pop("positional_command", None)
    flags = {k: _convert(k, v) for k, v in ns.items()}
    if pos is not None:
        if "command" in flags and flags["command"] != pos:
            raise ConfigError("command", f"conflicting commands {pos!r} and {flags['command']!r}")
        flags["command"] = pos
    merged.update(flags)
    return ExperimentConfig(**merged).validate()


# --- experiments -------------------------------------------------------------

def _origin(n: int) -> Tuple[float, ...]:
    return (0.0,) * (2 * n + 1)


def _write_csv(path: Path, header: List[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _exit_csv(path: Path, exits, n: int) -> None:
    header = ["t_exit"] + path_header(n)[1:]
    rows = ([t] + list(p) for t, p, ok in zip(exits.times, exits.points, exits.exited) if ok)
    _write_csv(path, header, rows)


def run_simulate_path(cfg: ExperimentConfig, out: Path):
    start = np.array(cfg.start or _origin(cfg.n))
    grid = uniform_grid(cfg.T, cfg.dt)
    path = simulate_hbm(start, grid, RngSpec(cfg.seed), cfg.paths if cfg.paths > 1 else None)
    res = horizontality_residual(path)
    scale = max(1.0, float(np.max(np.abs(path.points)))) ** 2
    qv = quadratic_variation(path.horizontal, axis=-2)
    for i in range(path.n_paths):
        write_path_csv(path.path(i), out / f"path_{i:04d}.csv")
    report = {
        "horizontality_residual": res,
        "quadratic_variation": np.atleast_2d(qv).tolist(),
        "final_point": np.atleast_2d(path.points[..., -1, :]).tolist(),
        "rng": {"seed": cfg.seed, "streams": [0, path.n_paths]},
    }
    failures = []
    if res > 1e-12 * scale:
        failures.append(f"horizontality residual {res:.3g} exceeds {1e-12 * scale:.3g}")
    return report, failures


def run_dirichlet_solve(cfg: ExperimentConfig, out: Path):
    center = np.array(cfg.ball_center or _origin(cfg.n))
    start = np.array(cfg.start) if cfg.start is not None else center
    ball = koranyi_ball(center, cfg.ball_radius)
    phi = get_field(cfg.phi, cfg.n).build(cfg.n)
    exits = simulate_exits(ball, start, cfg.dt, RngSpec(cfg.seed), cfg.samples,
                           cfg.max_steps, workers=cfg.workers)
    _exit_csv(out / "exits.csv", exits, cfg.n)
    failures = []
    report = {"rng": {"seed": cfg.seed, "streams": [0, cfg.samples]},
              "discarded": exits.n_discarded,
              "mean_overshoot": float(np.nanmean(exits.overshoot))}
    try:
        est = estimate_from_exits(exits, phi, cfg.dt)
    except NonExitError as exc:
        return report, [str(exc)]
    report["estimate"] = est.to_dict()
    if np.array_equal(start, center):
        q = sphere_quadrature(center, cfg.ball_radius, phi, cfg.resolution)
        tol = max(3.0 * est.stderr, cfg.rel_tol * abs(q.value)) + 3.0 * (q.error if cfg.n > 1 else 0.0)
        report["kernel_reference"] = {"value": q.value, "quadrature_error": q.error,
                                      "method": q.method, "tolerance": tol}
        if abs(est.mean - q.value) > tol:
            failures.append(f"estimate {est.mean:.6g} differs from kernel value {q.value:.6g} by more than {tol:.3g}")
    return report, failures


def run_harmonic_measure_compare(cfg: ExperimentConfig, out: Path):
    center = np.array(cfg.ball_center or _origin(cfg.n))
    ball = koranyi_ball(center, cfg.ball_radius)
    exits = simulate_exits(ball, center, cfg.dt, RngSpec(cfg.seed), cfg.samples,
                           cfg.max_steps, workers=cfg.workers)
    _exit_csv(out / "exits.csv", exits, cfg.n)
    names = ["1", "x1^2", "y1^2", "t^2"]
    tests = {k: get_field(k, cfg.n).build(cfg.n) for k in names}
    failures = []
    rows = compare_exits_to_kernel(exits, ball, tests, cfg.dt, cfg.rel_tol)
    norm = kernel_normalization(cfg.n, cfg.ball_radius)
    mass_check = kernel_normalization(cfg.n, cfg.ball_radius, nodes=128).mass * norm.constant
    for r in rows:
        if not r.passed:
            failures.append(f"{r.name}: Monte Carlo {r.mc_mean:.6g} vs kernel {r.kernel:.6g} (tolerance {r.tolerance:.3g})")
    if abs(mass_check - 1.0) > 1e-3:
        failures.append(f"normalized kernel mass {mass_check:.6g} is not 1 within 1e-3")
    log.info("numeric / closed-form kernel constant ratio: %.12g", norm.ratio)
    report = {
        "rng": {"seed": cfg.seed, "streams": [0, cfg.samples]},
        "discarded": exits.n_discarded,
        "mean_overshoot": float(np.nanmean(exits.overshoot)),
        "comparisons": [r.to_dict() for r in rows],
        "normalization": norm.to_dict(),
        "normalized_mass": mass_check,
    }
    return report, failures


def run_check_morphism(cfg: ExperimentConfig, out: Path):
    f = parse_map(cfg.map, cfg.n if not _dimensionless_counterexample(cfg.map) else None)
    pts = sample_points(f.n, cfg.points, cfg.sample_radius, RngSpec(cfg.seed))
    tols = {k: v for k, v in (("harmonic", cfg.tol_harmonic), ("conformal", cfg.tol_conformal),
                              ("contact", cfg.tol_contact)) if v is not None}
    rep = is_harmonic_morphism(f, pts, tols)
    report = {"rng": {"seed": cfg.seed, "streams": [0, 1]}, "morphism": rep.to_dict()}
    failures = [f"{k} check failed" for k, ok in rep.to_dict()["verdicts"].items()
                if not ok and k != "harmonic_morphism"]
    if is_catalog_id(cfg.map) and f.n == f.p:
        d = distortion_check(parse_catalog(cfg.map), pts, f.n)
        report["distortion"] = {"max": d.residual.max, "mean": d.residual.mean}
        if d.residual.max > 1e-8 * max(1.0, float(np.max(d.jacobian))):
            failures.append(f"distortion identity residual {d.residual.max:.3g}")
    return report, failures


def _dimensionless_counterexample(map_id: str) -> bool:
    return map_id.strip() in ("projection", "anisotropic", "square")


def run_pushforward_test(cfg: ExperimentConfig, out: Path):
    f = parse_map(cfg.map, cfg.n if not _dimensionless_counterexample(cfg.map) else None)
    start = np.array(cfg.start) if cfg.start is not None and len(cfg.start) == 2 * f.n + 1 \
        else np.zeros(2 * f.n + 1)
    z = simulate_pushforward(f, start, cfg.T, cfg.dt, cfg.paths, RngSpec(cfg.seed),
                             time_change=cfg.time_change, oversample=cfg.oversample)
    rep = bm_test_battery(z, cfg.level)
    rows = per_path_statistics(z)
    header = list(rows[0])
    _write_csv(out / "paths.csv", header, ([r[k] for k in header] for r in rows))
    report = {"rng": {"seed": cfg.seed, "streams": [0, cfg.paths]},
              "map": f.name, "time_change": cfg.time_change, "battery": rep.to_dict()}
    failures = [] if rep.passed else ["Brownian motion battery rejected the pushforward"]
    return report, failures


def run_mean_value_check(cfg: ExperimentConfig, out: Path):
    center = np.array(cfg.ball_center or _origin(cfg.n))
    nf = get_field(cfg.u, cfg.n)
    u = nf.build(cfg.n)
    u0 = float(u(center))
    q = sphere_quadrature(center, cfg.ball_radius, lambda G: u(G) - u0, cfg.resolution,
                          rng=RngSpec(cfg.seed))
    resid = q.value
    report = {"u": cfg.u, "harmonic": nf.harmonic, "average": u0 + resid,
              "center_value": u0, "residual": resid,
              "quadrature_error": q.error, "method": q.method}
    failures = []
    if nf.harmonic:
        tol = 1e-3 if cfg.n == 1 else max(1e-3, 4.0 * q.error)
        if abs(resid) > tol:
            failures.append(f"mean-value residual {resid:.3g} exceeds {tol:.3g} for harmonic {cfg.u}")
    return report, failures


RUNNERS = {
    "simulate-path": run_simulate_path,
    "dirichlet-solve": run_dirichlet_solve,
    "harmonic-measure-compare": run_harmonic_measure_compare,
    "check-morphism": run_check_morphism,
    "pushforward-test": run_pushforward_test,
    "mean-value-check": run_mean_value_check,
}


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
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def run(cfg: ExperimentConfig) -> Tuple[int, dict]:
    """Execute one experiment and write its files; returns (exit status, report)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "config.json", cfg.to_dict())
    t0 = time.perf_counter()
    status = EXIT_PASS
    try:
        body, failures = RUNNERS[cfg.command](cfg, out)
        if failures:
            status = EXIT_FAIL
    except Exception as exc:  # reported, not raised: exit code 3
        log.exception("runtime error")
        body, failures = {}, [f"{type(exc).__name__}: {exc}"]
        status = EXIT_RUNTIME
    report = {"command": cfg.command, "config": cfg.to_dict(), "version": __version__,
              "status": status, "passed": status == EXIT_PASS, "failures": failures,
              "result": body}
    _dump(out / "report.json", report)
    _dump(out / "metadata.json", {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "wall_time_s": time.perf_counter() - t0,
    })
    return status, report


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"hdlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    status, report = run(cfg)
    summary = "PASS" if status == EXIT_PASS else "FAIL"
    print(f"{cfg.command}: {summary} -> {Path(cfg.out) / 'report.json'}")
    for f in report["failures"]:
        print(f"  - {f}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
