"""Config-driven experiment orchestration: recovery runs, threshold sweeps
against the d^{k*/2} sample-complexity law, and report generation.

A config (JSON, schema version 1) names a catalog link, a list of ambient
dimensions, an estimator (fixed schedule or adaptive), and either an
explicit n grid or a threshold search. Thresholds are resolved on a
geometric n grid with factor sqrt(2) by bisection on the median error over
seeds, and the fitted slope of log n*(d) against log d is reported with
its standard error. Runs that never reach the target error at the grid
maximum are recorded as censored and excluded from the fit.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .budget import max_threads
from .estimator import (
    DEFAULT_FEATURES,
    KernelSpec,
    LeapSchedule,
    adaptive_recover,
    iterate_leaps,
)
from .models import make_link, plant_model, sample, subspace_distance
from .rng import derive_seed

CONFIG_VERSION = 1
GRID_FACTOR = math.sqrt(2.0)

CSV_COLUMNS = (
    "link", "r", "d", "n", "k_star_declared", "schedule", "kernel",
    "seed", "error", "runtime_ms", "path", "censored",
)


class ConfigError(ValueError):
    pass


@dataclass
class RunRecord:
    link: str
    r: int
    d: int
    n: int
    k_star_declared: int
    schedule: str
    kernel: str
    seed: int
    error: float
    runtime_ms: float
    path: str
    censored: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))


@dataclass
class ExperimentConfig:
    link_name: str
    r: int
    noise: float
    d_list: list
    schedule: LeapSchedule | None  # None means adaptive
    adaptive: dict | None
    kernel: KernelSpec
    features: int
    grid: dict
    seeds: list

    @property
    def k_star_declared(self) -> int:
        if self.schedule is not None:
            return max(k for k, _ in self.schedule.steps)
        return int(self.adaptive.get("kmax", 4))

    def schedule_tag(self) -> str:
        return self.schedule.tag() if self.schedule is not None else "adaptive"


def parse_kernel(text: str) -> KernelSpec:
    """CLI kernel syntax: rbf, rbf:sigma=0.5, laplacian, laplacian:sigma=2."""
    head, _, rest = text.partition(":")
    sigma = None
    if rest:
        key, _, val = rest.partition("=")
        if key != "sigma":
            raise ConfigError(f"unknown kernel option {key!r}")
        sigma = float(val)
    return KernelSpec(kind=head, sigma=sigma)


def load_config(payload: dict | str) -> ExperimentConfig:
    if isinstance(payload, str):
        with open(payload) as fh:
            payload = json.load(fh)
    if payload.get("v") != CONFIG_VERSION:
        raise ConfigError(f"config schema version must be {CONFIG_VERSION}")
    link = payload.get("link", {})
    for key in ("name", "r"):
        if key not in link:
            raise ConfigError(f"config link section missing {key!r}")
    d_list = payload.get("d")
    if not d_list:
        raise ConfigError("config needs a nonempty d list")
    est = payload.get("estimator", {})
    schedule = None
    adaptive = None
    if "schedule" in est:
        schedule = LeapSchedule(steps=tuple((int(k), int(s)) for k, s in est["schedule"]))
    elif "adaptive" in est:
        adaptive = dict(est["adaptive"])
    else:
        raise ConfigError("estimator needs either a schedule or an adaptive section")
    kernel = parse_kernel(est.get("kernel", "rbf"))
    grid = payload.get("grid", {})
    mode = grid.get("mode")
    if mode == "threshold":
        eps = float(grid.get("target_error", 0.0))
        if not 0.0 < eps < 1.0:
            raise ConfigError("threshold grid needs target_error in (0, 1)")
    elif mode == "n_list":
        if not grid.get("n"):
            raise ConfigError("n_list grid needs a nonempty n list")
    else:
        raise ConfigError("grid mode must be 'threshold' or 'n_list'")
    seeds = payload.get("seeds")
    if not seeds:
        raise ConfigError("config needs a nonempty seeds list")
    return ExperimentConfig(
        link_name=link["name"],
        r=int(link["r"]),
        noise=float(link.get("noise", 0.0)),
        d_list=[int(d) for d in d_list],
        schedule=schedule,
        adaptive=adaptive,
        kernel=kernel,
        features=int(est.get("features", DEFAULT_FEATURES)),
        grid=grid,
        seeds=[int(s) for s in seeds],
    )


# ---------------------------------------------------------------------------
# Single runs
# ---------------------------------------------------------------------------


def run_recovery(config: ExperimentConfig, d: int, n: int, seed: int) -> RunRecord:
    """Plant, sample, recover, and score one configuration point.

    All randomness expands from the run's master seed into named streams,
    so a rerun with identical arguments reproduces the record bit-exactly.
    """
    link = make_link(config.link_name, config.r, config.noise)
    t0 = time.perf_counter()
    diagnostics: dict = {}
    try:
        model = plant_model(link, d, derive_seed(seed, "plant"))
        dataset = sample(model, n, derive_seed(seed, "sample"))
        if config.schedule is not None:
            recovered = iterate_leaps(
                dataset, config.schedule, config.kernel, path="features",
                features=config.features, seed=derive_seed(seed, "estimate"),
                diagnostics=diagnostics,
            )
        else:
            recovered, executed = adaptive_recover(
                dataset,
                k_max=int(config.adaptive.get("kmax", 4)),
                s_max=int(config.adaptive.get("smax", d)),
                kernel=config.kernel,
                max_steps=int(config.adaptive.get("max_steps", 4)),
                path="features",
                features=config.features,
                seed=derive_seed(seed, "estimate"),
            )
            diagnostics["adaptive_steps"] = executed
        error = subspace_distance(recovered, model.index_space())
    except Exception as exc:  # recorded, not raised: sweeps continue
        diagnostics["error_message"] = f"{type(exc).__name__}: {exc}"
        error = 1.0
    runtime_ms = (time.perf_counter() - t0) * 1000.0
    return RunRecord(
        link=config.link_name,
        r=config.r,
        d=d,
        n=n,
        k_star_declared=config.k_star_declared,
        schedule=config.schedule_tag(),
        kernel=config.kernel.describe(),
        seed=seed,
        error=float(error),
        runtime_ms=runtime_ms,
        path="features",
        diagnostics=diagnostics,
    )


def _run_point(args):
    config, d, n, seed = args
    return run_recovery(config, d, n, seed)


def _run_many(config, points):
    workers = max_threads()
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_point, [(config, d, n, s) for d, n, s in points]))
    return [run_recovery(config, d, n, s) for d, n, s in points]


# ---------------------------------------------------------------------------
# Threshold sweeps
# ---------------------------------------------------------------------------


def geometric_grid(lo: int, hi: int) -> list:
    """Integer grid from lo to hi with ratio sqrt(2), deduplicated."""
    if lo < 2:
        lo = 2
    out = []
    value = float(lo)
    while value < hi:
        out.append(int(round(value)))
        value *= GRID_FACTOR
    out.append(int(hi))
    dedup = sorted(set(out))
    return dedup


def _n_grid(config: ExperimentConfig, d: int) -> list:
    grid = config.grid
    scale = float(d) ** (config.k_star_declared / 2.0)
    lo = int(math.ceil(float(grid.get("n_lo_mult", 8.0)) * scale))
    hi = int(math.ceil(float(grid.get("n_hi_mult", 512.0)) * scale))
    cap = grid.get("n_max")
    if cap is not None:
        hi = min(hi, int(cap))
    min_steps = max(2, len(config.schedule.steps) if config.schedule else 4)
    return geometric_grid(max(lo, 2 * min_steps), hi)


def threshold_sweep(config: ExperimentConfig, progress=None) -> dict:
    """Smallest n per d with median recovery error at most the target.

    Thresholds come from bisection over the geometric grid (the median
    error is treated as nonincreasing in n); the law fit is least squares
    of log n*(d) on log d over uncensored dimensions.
    """
    if config.grid.get("mode") != "threshold":
        raise ConfigError("threshold_sweep needs a threshold grid")
    if len(set(config.d_list)) < 3:
        raise ConfigError("threshold sweep needs at least 3 distinct d values")
    if len(config.seeds) < 3:
        raise ConfigError("threshold sweep needs at least 3 seeds")
    eps = float(config.grid["target_error"])
    records: list[RunRecord] = []
    table = []

    def median_error(d, n, cache={}):
        if (d, n) not in cache:
            runs = _run_many(config, [(d, n, s) for s in config.seeds])
            records.extend(runs)
            cache[(d, n)] = float(np.median([r.error for r in runs]))
            if progress:
                progress(f"d={d} n={n} median_error={cache[(d, n)]:.3f}")
        return cache[(d, n)]

    for d in config.d_list:
        grid = _n_grid(config, d)
        if median_error(d, grid[-1]) > eps:
            table.append({"d": d, "n_star": None, "censored": True})
            continue
        lo, hi = 0, len(grid) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if median_error(d, grid[mid]) <= eps:
                hi = mid
            else:
                lo = mid + 1
        table.append({"d": d, "n_star": grid[lo], "censored": False})

    for rec in records:
        entry = next(t for t in table if t["d"] == rec.d)
        rec.censored = bool(entry["censored"])

    fit = fit_threshold_slope(table)
    return {"table": table, "records": records, "target_error": eps, **fit}


def fit_threshold_slope(table) -> dict:
    """Least-squares slope of log n* against log d, uncensored cells only."""
    pts = [(t["d"], t["n_star"]) for t in table if not t["censored"]]
    if len(pts) < 2:
        return {"slope": None, "slope_se": None, "intercept": None,
                "censored_count": sum(t["censored"] for t in table)}
    pts = sorted(pts)
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    dof = max(1, len(pts) - 2)
    denom = float(np.sum((lx - lx.mean()) ** 2))
    se = math.sqrt(float(np.sum(resid**2)) / dof / denom) if denom > 0 else float("nan")
    return {
        "slope": float(slope),
        "slope_se": float(se),
        "intercept": float(intercept),
        "censored_count": sum(t["censored"] for t in table),
    }


def grid_runs(config: ExperimentConfig, progress=None) -> list:
    """All (d, n, seed) runs for an explicit n-list grid."""
    if config.grid.get("mode") != "n_list":
        raise ConfigError("grid_runs needs an n_list grid")
    points = [(d, int(n), s) for d in config.d_list
              for n in config.grid["n"] for s in config.seeds]
    records = _run_many(config, points)
    if progress:
        for rec in records:
            progress(f"d={rec.d} n={rec.n} seed={rec.seed} error={rec.error:.3f}")
    return records


def write_records(records, path: str) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_records(path: str) -> list:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(RunRecord.from_json(line))
    return records


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def report(in_dir: str, out_dir: str) -> dict:
    """Aggregate run records into CSV tables and plain-text xy series."""
    runs_path = os.path.join(in_dir, "runs.jsonl")
    if not os.path.exists(runs_path):
        raise FileNotFoundError(f"no runs.jsonl under {in_dir}")
    records = read_records(runs_path)
    os.makedirs(out_dir, exist_ok=True)

    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([
                rec.link, rec.r, rec.d, rec.n, rec.k_star_declared, rec.schedule,
                rec.kernel, rec.seed, f"{rec.error:.6f}", f"{rec.runtime_ms:.1f}",
                rec.path, int(rec.censored),
            ])

    groups: dict = {}
    for rec in records:
        key = (rec.link, rec.r, rec.d, rec.n, rec.schedule, rec.kernel)
        groups.setdefault(key, []).append(rec.error)
    agg_path = os.path.join(out_dir, "aggregates.csv")
    with open(agg_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["link", "r", "d", "n", "schedule", "kernel",
                         "median_error", "iqr_error", "n_seeds"])
        for key in sorted(groups):
            errs = np.array(groups[key])
            iqr = float(np.percentile(errs, 75) - np.percentile(errs, 25))
            writer.writerow([*key, f"{np.median(errs):.6f}", f"{iqr:.6f}", len(errs)])

    series = []
    by_link_d: dict = {}
    for key, errs in groups.items():
        link, r, d, n = key[0], key[1], key[2], key[3]
        by_link_d.setdefault((link, d), []).append((n, float(np.median(errs))))
    for (link, d), pts in sorted(by_link_d.items()):
        if len(pts) < 2:
            continue
        name = f"error_vs_n__{link}_d{d}.txt"
        _write_series(os.path.join(out_dir, name), sorted(pts),
                      header="n median_error")
        series.append(name)

    threshold_path = os.path.join(in_dir, "threshold.json")
    if os.path.exists(threshold_path):
        with open(threshold_path) as fh:
            th = json.load(fh)
        pts = [(t["d"], t["n_star"]) for t in th["table"] if not t["censored"]]
        if pts:
            name = "threshold_curve.txt"
            _write_series(os.path.join(out_dir, name), sorted(pts), header="d n_star")
            series.append(name)

    for rec in records[:1]:
        spectra = rec.diagnostics.get("step_eigvals")
        if spectra:
            name = f"spectrum__{rec.link}_d{rec.d}_n{rec.n}_seed{rec.seed}.txt"
            pts = list(enumerate(spectra[0], start=1))
            _write_series(os.path.join(out_dir, name), pts, header="rank eigenvalue")
            series.append(name)

    return {"results_csv": results_path, "aggregates_csv": agg_path, "series": series}


def _write_series(path: str, points, header: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        for x, y in points:
            fh.write(f"{x} {y}\n")
