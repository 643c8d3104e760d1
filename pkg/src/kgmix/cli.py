"""Experiment runner.

    kgmix CONFIG.yaml [--output-dir DIR] [--seed N] [--workers N] [-v]

The config is a flat YAML mapping.  ``experiment`` is required; every other
key has a default taken from the experiment's preset (see ``PRESETS``) and
then from ``ExperimentConfig``.  Exit status: 0 when every in-experiment
check passes, 1 when some check fails, 2 for an invalid config.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import scipy.fft
import yaml

from . import __version__
from .experiments import RUNNERS
from .random_fields import support_per_axis

log = logging.getLogger("kgmix")

MAGNETIC = ("magnetic-decay", "cook", "theorem-a")
MIN_SAMPLES = {"clt": 1000, "theorem-a": 1000, "room-corridor": 100, "counterexample": 2}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Every key of the flat config file with its default."""

    experiment: str
    dim: int = 1                        # spatial dimension n
    points_per_axis: int = 512          # N, even
    box_length: float = 400.0           # L
    mass: float = 1.0                   # m > 0
    D0: float | None = None             # position amplitude; None = unit pointwise variance
    D1: float | None = None             # velocity amplitude; None = unit pointwise variance
    r0: float = 2.0                     # correlation radius parameter of the initial density
    map_gain: float = 2.0               # gain of the tanh map for the non-Gaussian measure
    temperature: float = 1.0            # Gibbs temperature (sobolev-norm)
    times: list = field(default_factory=lambda: [25.0, 50.0, 100.0])
    samples: int = 10000
    seed: int = 20240601
    workers: int = 1
    test_radius: float = 3.0            # support radius of the bump test function
    test_amp0: float = 1.0
    test_amp1: float = 0.5
    lag_max: float = 20.0               # covariance-convergence: largest tested |z|
    r_list: list = field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])
    refinements: list = field(default_factory=lambda: [64, 128, 256, 512])
    room_width: float | None = None     # None = asymptotic layout t / ln t
    corridor_width: float | None = None
    delta: float = 0.25                 # exponent in the corridor width t^(1 - delta)
    envelope_times: list = field(default_factory=lambda: [1e3, 1e6])
    periods: int = 10                   # counterexample trace length in periods 2 pi / m
    points_per_period: int = 32
    potential_radius: float = 3.0       # R0
    potential_amplitude: float = 1.0
    t_max: float = 42.0                 # cook: quadrature horizon
    dt_quad: float = 0.5
    residual_times: list = field(default_factory=lambda: [10.0, 20.0, 40.0])
    output_dir: str = "runs"

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of keys to values")
        name = data.get("experiment")
        if name not in PRESETS:
            raise ConfigError(f"experiment: must be one of {sorted(PRESETS)}, got {name!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{**PRESETS[name], **data})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    "covariance-convergence": dict(dim=1, points_per_axis=512, box_length=400.0, r0=2.0, D0=1.0, D1=1.0,
                                   times=[25.0, 50.0, 100.0]),
    "clt": dict(dim=1, points_per_axis=512, box_length=400.0, r0=2.0, times=[24.0, 48.0, 96.0, 192.0],
                samples=10000),
    "gibbs-limit": dict(dim=1, points_per_axis=1024, box_length=64.0, r0=1.0, D0=1.0, D1=1.0),
    "sobolev-norm": dict(dim=1, points_per_axis=128, box_length=64.0, times=[1.0, 10.0, 100.0]),
    "room-corridor": dict(dim=2, points_per_axis=512, box_length=200.0, r0=2.0, times=[20.0, 40.0, 80.0],
                          samples=500, room_width=4.0, corridor_width=1.0, test_radius=8.0),
    "decay": dict(dim=1, points_per_axis=2048, box_length=600.0,
                  times=[20.0, 30.0, 45.0, 67.0, 100.0, 150.0, 200.0]),
    "counterexample": dict(dim=1, points_per_axis=64, box_length=32.0, samples=2000, times=[]),
    "magnetic-decay": dict(dim=2, points_per_axis=256, box_length=100.0, times=[float(t) for t in range(1, 43)]),
    "cook": dict(dim=2, points_per_axis=256, box_length=100.0, times=[]),
    "theorem-a": dict(dim=2, points_per_axis=256, box_length=100.0, r0=2.0, times=[42.0], samples=2000),
}


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def validate(cfg: ExperimentConfig) -> list:
    """Diagnostics naming the violated constraint; empty iff runnable."""
    out = []

    def need(cond, key, msg):
        if not cond:
            out.append(f"{key}: {msg}")

    name = cfg.experiment
    need(name in PRESETS, "experiment", f"must be one of {sorted(PRESETS)}")
    need(cfg.dim in (1, 2, 3) and isinstance(cfg.dim, int), "dim", "must be 1, 2 or 3")
    n = cfg.points_per_axis
    need(isinstance(n, int) and n >= 8 and n % 2 == 0, "points_per_axis", "must be an even integer >= 8")
    need(_is_number(cfg.box_length) and cfg.box_length > 0, "box_length", "must be positive")
    need(_is_number(cfg.mass) and cfg.mass > 0, "mass", "must be positive")
    need(_is_number(cfg.r0) and cfg.r0 > 0, "r0", "must be positive")
    for key in ("D0", "D1"):
        val = getattr(cfg, key)
        need(val is None or (_is_number(val) and val >= 0), key, "must be non-negative")
    need(isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    need(isinstance(cfg.workers, int) and cfg.workers >= 1, "workers", "must be a positive integer")
    need(isinstance(cfg.samples, int), "samples", "must be an integer")
    if name in MIN_SAMPLES and isinstance(cfg.samples, int):
        need(cfg.samples >= MIN_SAMPLES[name], "samples", f"must be at least {MIN_SAMPLES[name]} for {name}")
    times = cfg.times
    times_ok = isinstance(times, list) and all(_is_number(t) and t > 0 for t in times)
    need(times_ok, "times", "must be a list of positive numbers")
    if times_ok and name not in ("counterexample", "cook"):
        need(len(times) >= 1, "times", "must not be empty")
        need(times == sorted(times) and len(set(times)) == len(times), "times", "must be strictly increasing")
    need(_is_number(cfg.test_radius) and cfg.test_radius > 0, "test_radius", "must be positive")
    if out:
        return out

    half = cfg.box_length / 2
    reach_t = max(times) if times else 0.0
    if name == "covariance-convergence":
        need(0 < cfg.lag_max < half, "lag_max", "must lie in (0, L/2)")
    if name in ("covariance-convergence", "clt", "room-corridor", "theorem-a", "gibbs-limit"):
        need(2 * support_per_axis(cfg.r0, cfg.dim) < half, "r0",
             "correlation support must stay below L/2")
    if name == "gibbs-limit":
        r = cfg.r_list
        need(isinstance(r, list) and len(r) >= 2 and all(_is_number(x) and 0 < x <= 1 for x in r)
             and all(b < a for a, b in zip(r, r[1:])), "r_list", "must be strictly decreasing in (0, 1]")
    if name == "sobolev-norm":
        ref = cfg.refinements
        need(isinstance(ref, list) and len(ref) >= 2 and all(isinstance(x, int) and x >= 8 and x % 2 == 0
                                                             for x in ref)
             and ref == sorted(set(ref)), "refinements", "must be increasing even integers >= 8")
        need(_is_number(cfg.temperature) and cfg.temperature > 0, "temperature", "must be positive")
    if name in ("clt", "room-corridor", "decay"):
        need(reach_t + cfg.test_radius < half, "times",
             f"max(t) + test_radius = {reach_t + cfg.test_radius:g} must be below L/2 = {half:g}")
    if name == "room-corridor":
        if cfg.room_width is not None or cfg.corridor_width is not None:
            ok = _is_number(cfg.room_width) and _is_number(cfg.corridor_width)
            need(ok and cfg.room_width >= 1, "room_width", "must be >= 1")
            need(ok and cfg.corridor_width > 0, "corridor_width", "must be positive")
            if ok:
                need(cfg.room_width + cfg.corridor_width <= cfg.box_length, "room_width",
                     "layout period exceeds the box")
        else:
            need(0 < cfg.delta < 1, "delta", "must lie in (0, 1)")
    if name == "decay":
        e = cfg.envelope_times
        need(isinstance(e, list) and len(e) == 2 and 1 < e[0] < e[1], "envelope_times",
             "must be [t_lo, t_hi] with 1 < t_lo < t_hi")
    if name == "counterexample":
        need(isinstance(cfg.periods, int) and cfg.periods >= 2, "periods", "must be an integer >= 2")
        need(isinstance(cfg.points_per_period, int) and cfg.points_per_period >= 4, "points_per_period",
             "must be an integer >= 4")
    if name in MAGNETIC:
        need(cfg.dim == 2, "dim", "magnetic experiments are two-dimensional")
        need(0 < cfg.potential_radius < cfg.box_length / 4, "potential_radius", "must lie in (0, L/4)")
        need(cfg.potential_amplitude >= 0, "potential_amplitude", "must be non-negative")
        horizon = cfg.t_max if name == "cook" else reach_t
        key = "t_max" if name == "cook" else "times"
        reach = horizon + cfg.test_radius + cfg.potential_radius
        need(reach < half, key, f"t + test_radius + potential_radius = {reach:g} must be below L/2 = {half:g}")
        if name == "cook":
            need(_is_number(cfg.dt_quad) and 0 < cfg.dt_quad <= cfg.t_max, "dt_quad", "must lie in (0, t_max]")
            rt = cfg.residual_times
            need(isinstance(rt, list) and all(_is_number(x) and 0 < x <= cfg.t_max for x in rt),
                 "residual_times", "must lie in (0, t_max]")
        if name == "theorem-a":
            need(_is_number(cfg.dt_quad) and cfg.dt_quad > 0, "dt_quad", "must be positive")
    return out


# ----------------------------------------------------------------- output

def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool,)):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    try:
        f = float(value)
    except (TypeError, ValueError):
        return str(value)
    if f.is_integer() and abs(f) < 2**53 and not isinstance(value, float):
        return str(int(f))
    return "%.17g" % f


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass
class RunManifest:
    config: dict
    artifacts: list
    checks: dict
    passed: bool
    wall_clock_seconds: float
    steps: int
    version: str = __version__

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run(cfg: ExperimentConfig) -> RunManifest:
    """Validate, execute the experiment, write CSV files and manifest.json."""
    problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    out_dir = Path(cfg.output_dir)
    if not out_dir.parent.exists():
        raise ConfigError(f"output_dir: parent directory {out_dir.parent} does not exist")
    out_dir.mkdir(exist_ok=True)
    log.info("running %s into %s", cfg.experiment, out_dir)
    start = time.perf_counter()
    with scipy.fft.set_workers(cfg.workers):
        result = RUNNERS[cfg.experiment](cfg)
    elapsed = time.perf_counter() - start
    artifacts = []
    for name, (header, rows) in result.tables.items():
        path = out_dir / f"{name}.csv"
        write_csv(path, header, rows)
        artifacts.append({"file": path.name, "sha256": file_digest(path)})
    diag = out_dir / "diagnostics.json"
    diag.write_text(json.dumps(_jsonable({"checks": result.checks, "record": result.record}), indent=2,
                               sort_keys=True) + "\n")
    artifacts.append({"file": diag.name, "sha256": file_digest(diag)})
    manifest = RunManifest(cfg.to_dict(), artifacts, dict(result.checks), result.passed, elapsed, result.steps)
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest.to_dict()), indent=2) + "\n")
    for check, ok in result.checks.items():
        log.info("%s %s", "PASS" if ok else "FAIL", check)
    return manifest


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    data = dict(data or {}) if isinstance(data, dict) or data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of keys to values")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(data)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kgmix", description="Run a Klein-Gordon random field experiment.")
    p.add_argument("config", help="flat YAML config file")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--seed", type=int, help="override seed")
    p.add_argument("--workers", type=int, help="worker-count hint for FFTs and sample chunks")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, {"output_dir": args.output_dir, "seed": args.seed, "workers": args.workers})
        manifest = run(cfg)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    status = "pass" if manifest.passed else "FAIL"
    print(f"{cfg.experiment}: {status}")
    for check, ok in manifest.checks.items():
        print(f"  {'pass' if ok else 'FAIL'}  {check}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
