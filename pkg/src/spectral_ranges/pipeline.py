"""End-to-end runs: preprocessing, projection, MI selection and final model.

A run is fully described by a :class:`PipelineConfig`.  Every stage writes
its artifacts (JSON or CSV) into ``output_dir`` as soon as it finishes, so
a failed run leaves what it had computed behind for inspection.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from filelock import FileLock

from . import core_data, func_cluster, ica_proj, mi_select, models
from .errors import ConfigError, PipelineError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PIPELINES = ("cluster_mi_lssvm", "ica_mi_lssvm", "lssvm_full", "plsr_baseline")
METHOD_NAMES = {
    "plsr_baseline": "PLSR on raw data",
    "lssvm_full": "LS-SVM",
    "ica_mi_lssvm": "ICA + MI + LS-SVM",
    "cluster_mi_lssvm": "Clustering + MI + LS-SVM",
}

DEFAULT_PARAMETERS = {
    "P": 7,
    "k_neighbors": 6,
    "mi_metric": "euclidean",
    "folds": 3,
    "shuffle_folds": False,
    "ica": {
        "threshold": 0.01,
        "k_max": None,
        "n_components": None,
        "seed": None,
        "max_iter": 1000,
        "tol": 1e-4,
        "normalize_rows": False,
        "range_mass": 0.9,
    },
    "cluster": {"m_range": None},
    "lssvm_grid": {
        "gammas": [float(g) for g in models.DEFAULT_GAMMAS],
        "sigma_factors": [float(s) for s in models.DEFAULT_SIGMA_FACTORS],
    },
    "plsr": {"max_components": 20},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    dataset: dict
    pipeline: str
    seed: int
    output_dir: str
    preprocessing: list = field(default_factory=lambda: ["snv"])
    split: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.parameters = _merge(DEFAULT_PARAMETERS, self.parameters)
        self.validate()

    def validate(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        if self.seed is None or not isinstance(self.seed, int):
            raise ConfigError("an integer seed is required")
        kind = self.dataset.get("kind")
        if kind not in ("csv", "tecator"):
            raise ConfigError("dataset.kind must be 'csv' or 'tecator'")
        if kind == "csv" and not self.dataset.get("path"):
            raise ConfigError("dataset.path is required for csv datasets")
        for m in self.preprocessing:
            if m not in core_data.PREPROCESSING_METHODS:
                raise ConfigError(f"unknown preprocessing step {m!r}")
        p = self.parameters
        if not (isinstance(p["P"], int) and 1 <= p["P"] <= 12):
            raise ConfigError("parameters.P must be an integer in [1, 12]")
        if not (isinstance(p["k_neighbors"], int) and p["k_neighbors"] >= 1):
            raise ConfigError("parameters.k_neighbors must be a positive integer")
        if not (isinstance(p["folds"], int) and p["folds"] >= 2):
            raise ConfigError("parameters.folds must be an integer >= 2")
        if p["mi_metric"] not in mi_select.METRICS:
            raise ConfigError(f"parameters.mi_metric must be one of {tuple(mi_select.METRICS)}")
        if not 0 < p["ica"]["threshold"] < 1:
            raise ConfigError("parameters.ica.threshold must lie in (0, 1)")
        if not 0 < p["ica"]["range_mass"] <= 1:
            raise ConfigError("parameters.ica.range_mass must lie in (0, 1]")
        grid = p["lssvm_grid"]
        if not grid["gammas"] or not grid["sigma_factors"]:
            raise ConfigError("LS-SVM grid must be non-empty")
        if any(v <= 0 for v in list(grid["gammas"]) + list(grid["sigma_factors"])):
            raise ConfigError("LS-SVM grid values must be positive")
        if self.split and "kind" not in self.split:
            raise ConfigError("split needs a 'kind' ('head_tail' or 'explicit')")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def preset(name: str, pipeline: str, output_dir: str, seed: int = 0, **overrides) -> PipelineConfig:
    """Configurations reproducing the two benchmark protocols.

    ``tecator-table1``: first 172 spectra for learning, last 43 for test,
    SNV, 3 contiguous folds (57/57/58), P=7, k=6, ICA capped at 12
    components (fixed at 12).  ``wine-table2``: first 94 spectra form the learning pool
    minus samples 34, 35 and 84 (1-based), last 30 for test, 3 folds
    (30/30/31), up to 30 ICA components, row-normalized mixing matrix.
    The Wine data is not public, so ``dataset`` must be given.
    """
    if name == "tecator-table1":
        d = {
            "dataset": {"kind": "tecator"},
            "preprocessing": ["snv"],
            "split": {"kind": "head_tail", "n_train": 172, "excluded": []},
            "parameters": {"ica": {"k_max": 12, "n_components": 12}},
        }
    elif name == "wine-table2":
        d = {
            "dataset": None,
            "preprocessing": ["snv"],
            "split": {"kind": "head_tail", "n_train": 94, "excluded": [33, 34, 83]},
            "parameters": {"ica": {"k_max": 30, "normalize_rows": True}},
        }
    else:
        raise ConfigError(f"unknown preset {name!r}; expected 'tecator-table1' or 'wine-table2'")
    d = _merge(d, overrides)
    if d["dataset"] is None:
        raise ConfigError(f"preset {name} needs an explicit dataset (CSV path)")
    d.update(pipeline=pipeline, output_dir=str(output_dir), seed=seed)
    cfg = PipelineConfig.from_dict(d)
    cfg.parameters["preset"] = name
    return cfg


# --------------------------------------------------------------------------
# helpers


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_matrix_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in r])


def _read_matrix_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _sha256(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()


def _finite_or_none(v):
    return float(v) if v is not None and np.isfinite(v) else None


def load_dataset(cfg: PipelineConfig) -> core_data.SpectraSet:
    d = cfg.dataset
    if d["kind"] == "tecator":
        kw = {k: d[k] for k in ("url", "cache_dir") if d.get(k)}
        return core_data.fetch_tecator(**kw)
    return core_data.load_csv(
        d["path"],
        target_column=d.get("target_column", -1),
        has_header=d.get("has_header", True),
        wavelength_row=d.get("wavelength_row"),
        axis_unit=d.get("axis_unit", core_data.NANOMETER),
    )


def build_split(cfg: PipelineConfig, n_samples: int) -> core_data.SplitSpec:
    sp = cfg.split or {"kind": "head_tail", "n_train": int(round(0.8 * n_samples))}
    if sp["kind"] == "head_tail":
        return core_data.head_tail_split(n_samples, int(sp["n_train"]), sp.get("excluded", ()))
    if sp["kind"] == "explicit":
        return core_data.SplitSpec(sp["train_indices"], sp["test_indices"], sp.get("excluded_indices", ()))
    raise ConfigError(f"unknown split kind {sp['kind']!r}")


def lssvm_evaluator(cfg: PipelineConfig, folds):
    grid = cfg.parameters["lssvm_grid"]

    def evaluate(X, y):
        sig = np.sqrt(X.shape[1]) * np.asarray(grid["sigma_factors"], dtype=float)
        return models.cv_tune_lssvm(X, y, folds, grid["gammas"], sig).cv_nmse

    return evaluate


def fit_final_lssvm(cfg: PipelineConfig, Ftr, ytr, Fte, yte, folds) -> models.FitReport:
    grid = cfg.parameters["lssvm_grid"]
    sig = np.sqrt(Ftr.shape[1]) * np.asarray(grid["sigma_factors"], dtype=float)
    tune = models.cv_tune_lssvm(Ftr, ytr, folds, grid["gammas"], sig)
    model = models.fit_lssvm(Ftr, ytr, tune.gamma, tune.sigma)
    warn = list(model.warnings)
    kkt = model.kkt_residual(ytr)
    if kkt > 1e-8:
        warn.append(f"KKT relative residual {kkt:.2e}")
    return models.FitReport(
        model_kind="lssvm",
        hyperparameters={"gamma": tune.gamma, "sigma": tune.sigma, "kernel": "rbf"},
        n_features=int(Ftr.shape[1]),
        train_nmse=models.nmse(ytr, model.predict(Ftr)),
        test_nmse=models.nmse(yte, model.predict(Fte)),
        cv_nmse=_finite_or_none(tune.cv_nmse),
        fold_spec=[[int(f[0]), int(f[-1])] for f in folds],
        warnings=warn,
    )


# --------------------------------------------------------------------------
# report


@dataclass
class RunReport:
    data: dict
    timings: dict = field(default_factory=dict)

    @property
    def pipeline(self) -> str:
        return self.data["config"]["pipeline"]

    def to_dict(self) -> dict:
        return {**copy.deepcopy(self.data), "timings": dict(self.timings)}

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = copy.deepcopy(d)
        timings = d.pop("timings", {})
        return cls(d, timings)

    def dumps(self) -> str:
        """Canonical serialization without timings (identical for identical runs)."""
        return json.dumps(self.data, indent=2, sort_keys=True, allow_nan=False) + "\n"

    def save(self, output_dir) -> None:
        out = Path(output_dir)
        (out / "report.json").write_text(self.dumps(), encoding="utf-8")
        _write_json(out / "timings.json", self.timings)

    @classmethod
    def load(cls, path) -> "RunReport":
        path = Path(path)
        folder = path if path.is_dir() else path.parent
        file = path / "report.json" if path.is_dir() else path
        data = json.loads(file.read_text(encoding="utf-8"))
        tpath = folder / "timings.json"
        timings = json.loads(tpath.read_text(encoding="utf-8")) if tpath.exists() else {}
        return cls(data, timings)


class _Stages:
    def __init__(self):
        self.timings: dict = {}

    @contextmanager
    def __call__(self, name):
        log.info("stage %s: start", name)
        t0 = time.perf_counter()
        try:
            yield
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(name, exc) from exc
        finally:
            self.timings[name] = time.perf_counter() - t0
        log.info("stage %s: done in %.2fs", name, self.timings[name])


def run_pipeline(cfg: PipelineConfig) -> RunReport:
    """Run one configured pipeline and persist every artifact."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with FileLock(str(out / ".lock")):
        return _run(cfg, out)


def _run(cfg: PipelineConfig, out: Path) -> RunReport:
    stage = _Stages()
    p = cfg.parameters
    _write_json(out / "config.json", cfg.to_dict())
    data: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        # output_dir stays in config.json only, so reports of identical runs
        # written to different folders are byte-identical
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
        "method": METHOD_NAMES[cfg.pipeline],
    }

    with stage("load"):
        s = load_dataset(cfg)
        split = build_split(cfg, s.n_samples)
        train, test = core_data.apply_split(s, split)
        data["dataset"] = {
            "n_samples": s.n_samples,
            "n_vars": s.n_vars,
            "axis_unit": s.axis_unit,
            "synthesized_axis": bool(s.metadata.get("synthesized_axis", False)),
            "sha256": _sha256(s.absorbance, s.target, s.wavelengths),
            "split": split.to_dict(),
            "split_sha256": hashlib.sha256(json.dumps(split.to_dict()).encode()).hexdigest(),
            "n_train": train.n_samples,
            "n_test": test.n_samples,
        }

    with stage("preprocess"):
        train, test = core_data.preprocess_pair(train, test, cfg.preprocessing)
        folds = models.make_folds(train.n_samples, p["folds"], p["shuffle_folds"], cfg.seed)
        data["folds"] = [[int(i) for i in f] for f in folds]
        data["spectrum"] = {
            "wavelengths": [float(v) for v in train.wavelengths],
            "mean_train": [float(v) for v in train.absorbance.mean(axis=0)],
        }

    ytr, yte = train.target, test.target
    wl = train.wavelengths
    projection: dict = {"kind": "none"}
    Ftr = Fte = None

    with stage("projection"):
        if cfg.pipeline == "cluster_mi_lssvm":
            tree = func_cluster.build_tree(train)
            m_range = p["cluster"]["m_range"]
            if m_range is not None:
                m_range = range(int(m_range[0]), int(m_range[1]) + 1)
            choice = func_cluster.select_num_clusters(tree, train, folds, m_range)
            clustering = func_cluster.cut(tree, choice.M_best)
            Ftr = func_cluster.cluster_features(train, clustering)
            Fte = func_cluster.cluster_features(test, clustering)
            projection = {
                "kind": "clustering",
                "M": clustering.M,
                "boundaries": list(clustering.boundaries),
                "wavelength_ranges": clustering.wavelength_ranges(wl),
                "cv_scores": {"M": choice.m_values, "cv_nmse": [_finite_or_none(v) for v in choice.scores]},
                "tree": tree.to_dict(),
            }
            _write_json(out / "clustering.json", projection)
        elif cfg.pipeline == "ica_mi_lssvm":
            ip = p["ica"]
            Z = train.absorbance
            k_max = ip["k_max"]
            if k_max is None:
                k_max = min(train.n_samples - 1, 30)
            k_max = min(int(k_max), ica_proj.numerical_rank(Z))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                choice = ica_proj.choose_k(Z, ip["threshold"], k_max)
            k = choice.k if ip["n_components"] is None else min(int(ip["n_components"]), k_max)
            seed = cfg.seed if ip["seed"] is None else int(ip["seed"])
            model = ica_proj.fast_ica(Z, k, max_iter=ip["max_iter"], tol=ip["tol"], seed=seed)
            Ftr = ica_proj.projection_features(model, ip["normalize_rows"])
            Fte = model.transform(test.absorbance)
            if ip["normalize_rows"]:
                Fte = ica_proj.normalize_rows(Fte)
            supports = [ica_proj.support_interval(src, ip["range_mass"]) for src in model.sources_S]
            projection = {
                "kind": "ica",
                "k": model.k,
                "k_by_threshold": choice.k,
                "error_curve": choice.error_curve,
                "threshold_reached": choice.reached,
                "warnings": choice.warnings,
                "reconstruction_error": ica_proj.reconstruction_error(model, Z),
                "converged": model.converged,
                "n_iter": model.n_iter,
                "residual": model.residual,
                "normalize_rows": bool(ip["normalize_rows"]),
                "sources": [[float(v) for v in row] for row in model.sources_S],
                "support_intervals": [list(map(int, si)) for si in supports],
            }
            _write_json(
                out / "ica.json",
                {k: v for k, v in projection.items() if k != "sources"},
            )
            _write_matrix_csv(
                out / "ica_sources.csv",
                ["component"] + [repr(float(v)) for v in wl],
                [[i] + list(row) for i, row in enumerate(model.sources_S)],
            )
            _write_matrix_csv(
                out / "ica_mixing.csv",
                [f"ic{i}" for i in range(model.k)],
                model.mixing_A,
            )
        else:
            Ftr, Fte = train.absorbance, test.absorbance
        data["projection"] = projection

    if Ftr is not None:
        _write_matrix_csv(
            out / "features_train.csv",
            [f"f{j}" for j in range(Ftr.shape[1])] + ["target"],
            np.column_stack([Ftr, ytr]),
        )
        _write_matrix_csv(
            out / "features_test.csv",
            [f"f{j}" for j in range(Fte.shape[1])] + ["target"],
            np.column_stack([Fte, yte]),
        )

    selection = None
    with stage("selection"):
        if cfg.pipeline in ("cluster_mi_lssvm", "ica_mi_lssvm"):
            P = min(p["P"], Ftr.shape[1])
            order, traj = mi_select.forward_select(
                Ftr, ytr, P, p["k_neighbors"], metric=p["mi_metric"], seed=cfg.seed
            )
            selection = mi_select.exhaustive_search(
                Ftr, ytr, order, lssvm_evaluator(cfg, folds), evaluator_id="lssvm-rbf-cv-grid"
            )
            selection.mi_trajectory = traj
            selection.parameters = {"P": P, "k_neighbors": p["k_neighbors"], "metric": p["mi_metric"]}
            data["selection"] = selection.to_dict()
            _write_json(out / "selection.json", data["selection"])
        else:
            data["selection"] = None

    with stage("fit"):
        if cfg.pipeline == "plsr_baseline":
            fit = _fit_plsr(cfg, train, test, folds)
            n_variables = fit.hyperparameters["n_components"]
        else:
            subset = list(selection.best_subset) if selection else list(range(Ftr.shape[1]))
            fit = fit_final_lssvm(cfg, Ftr[:, subset], ytr, Fte[:, subset], yte, folds)
            n_variables = len(subset)
        data["fit"] = fit.to_dict()
        data["n_variables"] = int(n_variables)
        _write_json(out / "fit.json", data["fit"])

    data["selected_ranges"] = _selected_ranges(data, wl)
    data["selected_wavelength_ranges"] = [r["wavelength_range"] for r in data["selected_ranges"]]
    report = RunReport(data, stage.timings)
    report.save(out)
    return report


def _fit_plsr(cfg, train, test, folds) -> models.FitReport:
    Xtr, ytr = train.absorbance, train.target
    ncomp, curve = models.cv_tune_plsr(Xtr, ytr, folds, cfg.parameters["plsr"]["max_components"])
    model = models.fit_plsr(Xtr, ytr, ncomp)
    return models.FitReport(
        model_kind="plsr",
        hyperparameters={"n_components": int(model.n_components), "cv_curve": [float(v) for v in curve]},
        n_features=int(Xtr.shape[1]),
        train_nmse=models.nmse(ytr, model.predict(Xtr)),
        test_nmse=models.nmse(test.target, model.predict(test.absorbance)),
        cv_nmse=float(curve[ncomp - 1]),
        fold_spec=[[int(f[0]), int(f[-1])] for f in folds],
        warnings=["PLS deflation stopped early"] if model.truncated else [],
    )


def _selected_ranges(data: dict, wl) -> list:
    proj, sel = data["projection"], data.get("selection")
    if sel is None:
        return []
    out = []
    for j in sorted(sel["best_subset"]):
        if proj["kind"] == "clustering":
            b = proj["boundaries"]
            lo, hi = b[j], b[j + 1] - 1
        else:
            lo, hi = proj["support_intervals"][j]
        out.append({"feature": j, "index_interval": [lo, hi], "wavelength_range": [float(wl[lo]), float(wl[hi])]})
    return out


def rerun_final_stage(output_dir) -> models.FitReport:
    """Repeat the final fit from the persisted features, folds and selection."""
    out = Path(output_dir)
    cfg = PipelineConfig.load(out / "config.json")
    if cfg.pipeline == "plsr_baseline":
        raise ConfigError("the PLSR baseline has no persisted feature stage")
    _, tr = _read_matrix_csv(out / "features_train.csv")
    _, te = _read_matrix_csv(out / "features_test.csv")
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    folds = [np.asarray(f, dtype=int) for f in report["folds"]]
    Ftr, ytr, Fte, yte = tr[:, :-1], tr[:, -1], te[:, :-1], te[:, -1]
    if cfg.pipeline in ("cluster_mi_lssvm", "ica_mi_lssvm"):
        sel = json.loads((out / "selection.json").read_text(encoding="utf-8"))
        subset = list(sel["best_subset"])
    else:
        subset = list(range(Ftr.shape[1]))
    return fit_final_lssvm(cfg, Ftr[:, subset], ytr, Fte[:, subset], yte, folds)
