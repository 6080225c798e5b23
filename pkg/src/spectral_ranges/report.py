"""Plot-data export and run comparison tables.

Only delimited text is written; any plotting tool can rebuild the figures
(selected ranges over the mean spectrum, independent components, MI
trajectory, cluster-count CV curve) from these files.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .errors import ArtifactNotAvailable, ConfigError
from .pipeline import METHOD_NAMES, RunReport

PLOT_KINDS = ("ranges_over_mean_spectrum", "ica_components", "mi_trajectory", "cluster_cv_curve")

_PRODUCERS = {
    "ranges_over_mean_spectrum": "cluster_mi_lssvm or ica_mi_lssvm",
    "ica_components": "ica_mi_lssvm",
    "mi_trajectory": "cluster_mi_lssvm or ica_mi_lssvm",
    "cluster_cv_curve": "cluster_mi_lssvm",
}


def _missing(what: str, report: RunReport) -> ArtifactNotAvailable:
    return ArtifactNotAvailable(
        f"{what} is not available for a {report.pipeline} run; it is produced by {_PRODUCERS[what]}"
    )


def _write(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def emit_plot_data(report: RunReport, what: str, out_dir) -> Path:
    """Write the CSV for one figure kind and return its path."""
    if what not in PLOT_KINDS:
        raise ValueError(f"unknown plot data kind {what!r}; expected one of {PLOT_KINDS}")
    d = report.data
    proj, sel = d.get("projection", {}), d.get("selection")
    out = Path(out_dir) / f"{what}.csv"

    if what == "ranges_over_mean_spectrum":
        if sel is None:
            raise _missing(what, report)
        wl, mean = d["spectrum"]["wavelengths"], d["spectrum"]["mean_train"]
        selected = [0] * len(wl)
        for r in d["selected_ranges"]:
            lo, hi = r["index_interval"]
            for i in range(lo, hi + 1):
                selected[i] = 1
        boundary = [0] * len(wl)
        if proj.get("kind") == "clustering":
            for b in proj["boundaries"][1:-1]:
                boundary[b] = 1
        rows = [[w, m, s, b] for w, m, s, b in zip(wl, mean, selected, boundary)]
        return _write(out, ["wavelength", "mean_absorbance", "selected", "boundary"], rows)

    if what == "ica_components":
        if proj.get("kind") != "ica":
            raise _missing(what, report)
        comps = sorted(sel["best_subset"]) if sel else list(range(proj["k"]))
        wl = d["spectrum"]["wavelengths"]
        rows = [[w] + [proj["sources"][c][i] for c in comps] for i, w in enumerate(wl)]
        return _write(out, ["wavelength"] + [f"ic{c}" for c in comps], rows)

    if what == "mi_trajectory":
        if sel is None:
            raise _missing(what, report)
        rows = [
            [step + 1, feat, mi] for step, (feat, mi) in enumerate(zip(sel["forward_order"], sel["mi_trajectory"]))
        ]
        return _write(out, ["step", "feature", "joint_mi"], rows)

    if proj.get("kind") != "clustering":
        raise _missing(what, report)
    cv = proj["cv_scores"]
    rows = [[m, "inf" if v is None else v] for m, v in zip(cv["M"], cv["cv_nmse"])]
    return _write(out, ["M", "cv_nmse"], rows)


def compare_runs(reports: Sequence[RunReport]) -> list[dict]:
    """One row per report: method, number of (latent) variables, test NMSE.

    Refuses reports computed on different data or different splits.
    """
    if not reports:
        raise ConfigError("compare_runs needs at least one report")
    ref = reports[0].data["dataset"]
    for r in reports[1:]:
        ds = r.data["dataset"]
        if ds["sha256"] != ref["sha256"]:
            raise ConfigError("reports were computed on different datasets")
        if ds["split_sha256"] != ref["split_sha256"]:
            raise ConfigError(
                f"reports use different train/test splits ({ref['n_train']}/{ref['n_test']} vs "
                f"{ds['n_train']}/{ds['n_test']}); NMSE values are not comparable"
            )
    return [
        {
            "method": METHOD_NAMES.get(r.pipeline, r.pipeline),
            "n_variables": r.data["n_variables"],
            "test_nmse": r.data["fit"]["test_nmse"],
        }
        for r in reports
    ]


TABLE_HEADER = ("Method", "Number of (latent) variables", "NMSE test")


def write_comparison(rows: list[dict], path) -> Path:
    return _write(Path(path), TABLE_HEADER, [[r["method"], r["n_variables"], r["test_nmse"]] for r in rows])


def format_comparison(rows: list[dict]) -> str:
    cells = [TABLE_HEADER] + [(r["method"], str(r["n_variables"]), f"{r['test_nmse']:.4f}") for r in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(3)]
    lines = ["  ".join(c[i].ljust(widths[i]) for i in range(3)).rstrip() for c in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
