"""Command line entry point: ``stochtrans run`` and ``stochtrans plot``."""

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .config import ConfigError, load_config, validate_config
from .experiments import ACCEPTANCE_FILES, acceptance_config, run_experiment
from .io import canonical_json, content_hash, file_hash, read_csv, save_trajectory, svg_line_chart, write_csv, write_json

EXIT_PASS, EXIT_ERROR, EXIT_CHECK_FAILED = 0, 1, 2


def _write_outputs(out, cfg, result):
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg)
    for stem, (header, rows) in result.tables.items():
        write_csv(out / f"{stem}.csv", header, rows)
    write_csv(out / "checks.csv", ["check", "passed", "detail"],
              [(k, v["passed"], v["detail"]) for k, v in sorted(result.checks.items())])
    if result.plots:
        (out / "plots").mkdir(exist_ok=True)
        index = {}
        for name, chart in result.plots.items():
            rows = []
            for label, x, y, yerr in chart["series"]:
                err = yerr if yerr is not None else [0.0] * len(x)
                rows.extend((label, a, b, e) for a, b, e in zip(x, y, err))
            write_csv(out / "plots" / f"{name}.csv", ["series", "x", "y", "yerr"], rows)
            index[name] = {k: v for k, v in chart.items() if k != "series"}
        write_json(out / "plots" / "index.json", index)
    for name, traj, spec in result.trajectories:
        save_trajectory(out / "trajectories" / name, traj, spec)
    write_json(out / "summary.json", {"kind": result.kind, "passed": result.passed,
                                      "checks": result.checks, "summary": result.summary})


def _write_manifest(out, cfg):
    files = sorted(p for p in out.rglob("*") if p.is_file() and p != out / "manifest.json")
    manifest = {
        "config_hash": content_hash(canonical_json(cfg)),
        "seed": cfg["seed"],
        "kind": cfg["kind"],
        "code_version": __version__,
        "numpy_version": np.__version__,
        "kernel_backend": backend(),
        "files": [{"path": p.relative_to(out).as_posix(), "sha256": file_hash(p)} for p in files],
    }
    write_json(out / "manifest.json", manifest)


def cmd_run(args):
    try:
        if args.acceptance is not None:
            cfg = validate_config(acceptance_config(args.acceptance))
        else:
            cfg = load_config(args.config)
        if args.seed is not None:
            cfg = validate_config(dict(cfg, seed=args.seed))
    except ConfigError as exc:
        print(f"config error at {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_ERROR
    out = Path(args.out)
    try:
        result = run_experiment(cfg, threads=args.threads)
        _write_outputs(out, cfg, result)
        _write_manifest(out, cfg)
    except Exception as exc:  # noqa: BLE001 - report and map to the error exit code
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_ERROR
    for name, chk in sorted(result.checks.items()):
        print(f"{'PASS' if chk['passed'] else 'FAIL'} {name}: {chk['detail']}")
    if args.check and not result.passed:
        return EXIT_CHECK_FAILED
    return EXIT_PASS


def _chart_from_csv(path, meta):
    header, rows = read_csv(path)
    col = {h: i for i, h in enumerate(header)}
    series = {}
    for r in rows:
        s = series.setdefault(r[col["series"]] if "series" in col else "data", ([], [], []))
        s[0].append(float(r[col["x"]]))
        s[1].append(float(r[col["y"]]))
        s[2].append(float(r[col["yerr"]]) if "yerr" in col else 0.0)
    return svg_line_chart([(k, x, y, e) for k, (x, y, e) in series.items()], **meta)


def cmd_plot(args):
    target = Path(args.path)
    try:
        if target.is_dir():
            pdir = target / "plots" if (target / "plots").is_dir() else target
            index_path = pdir / "index.json"
            index = json.loads(index_path.read_text()) if index_path.exists() else {}
            made = []
            for csv_path in sorted(pdir.glob("*.csv")):
                svg = csv_path.with_suffix(".svg")
                svg.write_text(_chart_from_csv(csv_path, index.get(csv_path.stem, {"title": csv_path.stem})))
                made.append(svg)
        else:
            svg = Path(args.output) if args.output else target.with_suffix(".svg")
            svg.write_text(_chart_from_csv(target, {"title": target.stem, "log_x": args.log_x, "log_y": args.log_y}))
            made = [svg]
    except (OSError, KeyError, ValueError) as exc:
        print(f"plot failed: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for m in made:
        print(m)
    return EXIT_PASS


def build_parser():
    parser = argparse.ArgumentParser(prog="stochtrans", description="Stochastic transport experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment configuration")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a JSON experiment configuration")
    src.add_argument("--acceptance", type=int, choices=sorted(ACCEPTANCE_FILES),
                     help="run a bundled acceptance configuration by number")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads for replicas")
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--check", action="store_true", help="exit 2 when an embedded check fails")
    run.add_argument("-v", "--verbose", action="store_true", help="print tracebacks on errors")
    run.set_defaults(func=cmd_run)
    plot = sub.add_parser("plot", help="render SVG line charts from plot CSVs")
    plot.add_argument("path", help="run output directory, its plots/ directory or a single CSV")
    plot.add_argument("-o", "--output", help="SVG path when plotting a single CSV")
    plot.add_argument("--log-x", action="store_true")
    plot.add_argument("--log-y", action="store_true")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
