"""Command line entry point: ``spectral-ranges {run,fetch-tecator,plot-data,compare}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import core_data, pipeline, report
from .errors import PipelineError, SpectralRangesError

log = logging.getLogger("spectral_ranges")


def _dataset_override(args):
    if args.data:
        d = {"kind": "csv", "path": args.data, "has_header": not args.no_header}
        if args.target_column is not None:
            tc = args.target_column
            d["target_column"] = int(tc) if tc.lstrip("-").isdigit() else tc
        if args.axis_unit:
            d["axis_unit"] = args.axis_unit
        return d
    if args.cache_dir or args.tecator_url:
        d = {"kind": "tecator"}
        if args.cache_dir:
            d["cache_dir"] = args.cache_dir
        if args.tecator_url:
            d["url"] = args.tecator_url
        return d
    return None


def _parameter_overrides(args) -> dict:
    p = {}
    for name in ("P", "k_neighbors", "folds"):
        v = getattr(args, name)
        if v is not None:
            p[name] = v
    return p


def _configs(args) -> list[pipeline.PipelineConfig]:
    pipelines = args.pipeline or []
    if "all" in pipelines:
        pipelines = list(pipeline.PIPELINES)
    dataset = _dataset_override(args)
    params = _parameter_overrides(args)

    if args.config:
        base = pipeline.PipelineConfig.load(args.config).to_dict()
        if dataset:
            base["dataset"] = dataset
        base["parameters"] = pipeline._merge(base["parameters"], params)
        if args.seed is not None:
            base["seed"] = args.seed
        if args.output_dir:
            base["output_dir"] = args.output_dir
        pipelines = pipelines or [base["pipeline"]]
        out = []
        for pl in pipelines:
            d = dict(base, pipeline=pl)
            if len(pipelines) > 1:
                d["output_dir"] = str(Path(base["output_dir"]) / pl)
            out.append(pipeline.PipelineConfig.from_dict(d))
        return out

    if not args.preset:
        raise SystemExit("run: give --config FILE or --preset NAME")
    if not pipelines:
        raise SystemExit("run: --pipeline is required with --preset")
    output = Path(args.output_dir or "runs")
    overrides = {"parameters": params}
    if dataset:
        overrides["dataset"] = dataset
    return [
        pipeline.preset(
            args.preset,
            pl,
            str(output / pl if len(pipelines) > 1 else output),
            seed=0 if args.seed is None else args.seed,
            **overrides,
        )
        for pl in pipelines
    ]


def cmd_run(args) -> int:
    configs = _configs(args)
    reports = []
    for cfg in configs:
        r = pipeline.run_pipeline(cfg)
        fit = r.data["fit"]
        print(
            f"{r.data['method']}: {r.data['n_variables']} variables, "
            f"test NMSE {fit['test_nmse']:.4f} -> {cfg.output_dir}"
        )
        for lo, hi in r.data["selected_wavelength_ranges"]:
            print(f"  selected range [{lo:g}, {hi:g}]")
        reports.append(r)
    if len(reports) > 1:
        rows = report.compare_runs(reports)
        root = Path(configs[0].output_dir).parent
        report.write_comparison(rows, root / "comparison.csv")
        (root / "comparison.txt").write_text(report.format_comparison(rows) + "\n", encoding="utf-8")
        print(report.format_comparison(rows))
    return 0


def cmd_fetch(args) -> int:
    kw = {"refresh": args.refresh}
    if args.url:
        kw["url"] = args.url
    if args.cache_dir:
        kw["cache_dir"] = args.cache_dir
    s = core_data.fetch_tecator(**kw)
    print(f"tecator: {s.n_samples} spectra x {s.n_vars} variables, target = fat")
    if args.csv:
        core_data.save_csv(s, args.csv, "fat")
        print(f"written to {args.csv}")
    return 0


def cmd_plot_data(args) -> int:
    r = pipeline.RunReport.load(args.run_dir)
    kinds = report.PLOT_KINDS if "all" in args.what else args.what
    out_dir = args.out_dir or Path(args.run_dir) / "plot_data"
    for kind in kinds:
        try:
            print(report.emit_plot_data(r, kind, out_dir))
        except SpectralRangesError as exc:
            if "all" in args.what:
                log.info("skipping %s: %s", kind, exc)
                continue
            raise
    return 0


def cmd_compare(args) -> int:
    rows = report.compare_runs([pipeline.RunReport.load(p) for p in args.run_dirs])
    if args.out:
        report.write_comparison(rows, args.out)
    print(report.format_comparison(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spectral-ranges", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one or more pipelines")
    run.add_argument("--config", help="JSON pipeline configuration")
    run.add_argument("--preset", choices=("tecator-table1", "wine-table2"))
    run.add_argument(
        "--pipeline",
        action="append",
        choices=pipeline.PIPELINES + ("all",),
        help="repeatable; 'all' runs the four pipelines and writes a comparison table",
    )
    run.add_argument("--data", help="CSV dataset (overrides the configured dataset)")
    run.add_argument("--target-column", help="index or header name of the target column")
    run.add_argument("--no-header", action="store_true")
    run.add_argument("--axis-unit", choices=core_data.AXIS_UNITS)
    run.add_argument("--cache-dir", help="Tecator cache directory")
    run.add_argument("--tecator-url")
    run.add_argument("--output-dir")
    run.add_argument("--seed", type=int)
    run.add_argument("--P", type=int, dest="P")
    run.add_argument("--k-neighbors", type=int)
    run.add_argument("--folds", type=int)
    run.set_defaults(func=cmd_run)

    fetch = sub.add_parser("fetch-tecator", help="download and cache the Tecator data")
    fetch.add_argument("--url")
    fetch.add_argument("--cache-dir")
    fetch.add_argument("--refresh", action="store_true")
    fetch.add_argument("--csv", help="also write the spectra as CSV")
    fetch.set_defaults(func=cmd_fetch)

    plot = sub.add_parser("plot-data", help="export CSV plot data from a finished run")
    plot.add_argument("run_dir")
    plot.add_argument("--what", action="append", choices=report.PLOT_KINDS + ("all",), required=True)
    plot.add_argument("--out-dir")
    plot.set_defaults(func=cmd_plot_data)

    cmp_ = sub.add_parser("compare", help="tabulate method / variables / test NMSE")
    cmp_.add_argument("run_dirs", nargs="+")
    cmp_.add_argument("--out", help="CSV output path")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SpectralRangesError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
