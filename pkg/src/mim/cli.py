"""Command-line interface.

Subcommands: simulate (draw and persist a planted dataset), leap (brute
force leap decomposition of a catalog link), estimate (spectral recovery
from a dataset file), sweep (config-driven experiments), report (CSV and
plot series from sweep output).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .estimator import (
    DEFAULT_FEATURES,
    LeapSchedule,
    adaptive_recover,
    iterate_leaps,
    subspace_from_json,
    subspace_to_json,
)
from .harness import (
    grid_runs,
    load_config,
    parse_kernel,
    report,
    threshold_sweep,
    write_records,
)
from .leap import LeapBudget, info_leap_decomposition, leap_decomposition
from .models import (
    make_link,
    plant_model,
    read_dataset,
    sample,
    subspace_distance,
    write_dataset,
)
from .rng import derive_seed


def _cmd_simulate(args) -> int:
    link = make_link(args.link, args.r, args.noise)
    model = plant_model(link, args.d, derive_seed(args.seed, "plant"))
    dataset = sample(model, args.n, derive_seed(args.seed, "sample"))
    write_dataset(dataset, args.out)
    truth = subspace_to_json(
        model.index_space(),
        provenance={"link": args.link, "r": args.r, "d": args.d, "seed": args.seed},
    )
    with open(args.out + ".truth.json", "w") as fh:
        fh.write(truth)
    print(f"wrote {args.n} x {args.d} dataset to {args.out} "
          f"(truth basis in {args.out}.truth.json)")
    return 0


def _cmd_leap(args) -> int:
    link = make_link(args.link, args.r, args.noise)
    budget = LeapBudget(n_mc=args.budget, bins=args.bins, seed=args.seed)
    decompose = info_leap_decomposition if args.info else leap_decomposition
    dec = decompose(link, k_max=args.kmax, tol=args.tol, budget=budget)
    with open(args.out, "w") as fh:
        fh.write(dec.to_json())
    kind = "information" if args.info else "generative"
    print(f"{kind} leaps for {link.tag()}: {dec.leaps} (exponent {dec.k_star})")
    print(f"report written to {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    dataset = read_dataset(args.data)
    kernel = parse_kernel(args.kernel)
    diagnostics: dict = {}
    if args.schedule:
        with open(args.schedule) as fh:
            payload = json.load(fh)
        schedule = LeapSchedule(steps=tuple((int(k), int(s)) for k, s in payload["steps"]))
        recovered = iterate_leaps(dataset, schedule, kernel, path=args.path,
                                  features=args.features, seed=args.seed,
                                  diagnostics=diagnostics)
        tag = schedule.tag()
    elif args.adaptive:
        recovered, executed = adaptive_recover(
            dataset, k_max=args.kmax, s_max=args.smax, kernel=kernel,
            path=args.path, features=args.features, seed=args.seed)
        tag = "adaptive:" + ";".join(f"k{k}s{s}" for k, s in executed)
        diagnostics["adaptive_steps"] = executed
    else:
        print("estimate needs --schedule or --adaptive", file=sys.stderr)
        return 2
    provenance = {
        "schedule": tag,
        "kernel": kernel.describe(),
        "seed": args.seed,
        "n": dataset.n,
        "path": args.path,
        "fold_bounds": diagnostics.get("fold_bounds"),
    }
    with open(args.out, "w") as fh:
        fh.write(subspace_to_json(recovered, provenance))
    print(f"recovered a {recovered.dim}-dimensional subspace of R^{dataset.d} -> {args.out}")
    if args.truth:
        with open(args.truth) as fh:
            truth = subspace_from_json(fh.read())
        err = subspace_distance(recovered, truth)
        print(f"distance to reference subspace: {err:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    config = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)

    def progress(msg):
        print(msg, flush=True)

    if config.grid.get("mode") == "threshold":
        result = threshold_sweep(config, progress=progress)
        write_records(result["records"], os.path.join(args.out, "runs.jsonl"))
        summary = {
            "table": result["table"],
            "slope": result["slope"],
            "slope_se": result["slope_se"],
            "intercept": result["intercept"],
            "target_error": result["target_error"],
            "censored_count": result["censored_count"],
        }
        with open(os.path.join(args.out, "threshold.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        print(json.dumps(summary["table"]))
        if result["slope"] is not None:
            print(f"fitted slope: {result['slope']:.3f} +- {result['slope_se']:.3f}")
    else:
        records = grid_runs(config, progress=progress)
        write_records(records, os.path.join(args.out, "runs.jsonl"))
        print(f"{len(records)} runs written")
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        with open(args.config) as src:
            fh.write(src.read())
    return 0


def _cmd_report(args) -> int:
    out = report(args.infile, args.out)
    print(f"results: {out['results_csv']}")
    print(f"aggregates: {out['aggregates_csv']}")
    for name in out["series"]:
        print(f"series: {name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mim",
                                     description="Multi-index model toolkit")
    parser.add_argument("--version", action="version", version=f"mim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a planted dataset to a file")
    p.add_argument("--link", required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("leap", help="brute-force leap decomposition of a link")
    p.add_argument("--link", required=True)
    p.add_argument("--r", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--kmax", type=int, default=6)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--budget", type=int, default=1_000_000)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--info", action="store_true",
                   help="use label-correlation moments instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_leap)

    p = sub.add_parser("estimate", help="recover the index space from a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--schedule", help="JSON file with {'steps': [[k, s], ...]}")
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--smax", type=int, default=8)
    p.add_argument("--kernel", default="rbf",
                   help="rbf[:sigma=<f>] or laplacian[:sigma=<f>]")
    p.add_argument("--features", type=int, default=DEFAULT_FEATURES)
    p.add_argument("--path", default="auto", choices=["auto", "exact", "features"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="subspace JSON to score against")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("sweep", help="run a config-driven experiment sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="aggregate sweep output")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
