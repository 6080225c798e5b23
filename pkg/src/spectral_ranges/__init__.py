"""Wavelength-range selection for smooth spectra.

Spectra are projected either on contiguous variable clusters or on
independent components, the projected variables are selected by k-NN
mutual information, and an RBF LS-SVM is trained on the selection.
"""

from .core_data import SpectraSet, SplitSpec, apply_split, fetch_tecator, load_csv, preprocess
from .func_cluster import abs_correlation, build_tree, cluster_features, cut, select_num_clusters
from .ica_proj import choose_k, fast_ica, projection_features, reconstruction_error, whiten
from .mi_select import exhaustive_search, forward_select, ksg_mi
from .models import cv_tune_lssvm, fit_lssvm, fit_ols, fit_plsr, nmse
from .pipeline import PipelineConfig, RunReport, preset, run_pipeline
from .report import compare_runs, emit_plot_data

__version__ = "0.1.0"

__all__ = [
    "SpectraSet", "SplitSpec", "apply_split", "fetch_tecator", "load_csv", "preprocess",
    "abs_correlation", "build_tree", "cluster_features", "cut", "select_num_clusters",
    "choose_k", "fast_ica", "projection_features", "reconstruction_error", "whiten",
    "exhaustive_search", "forward_select", "ksg_mi",
    "cv_tune_lssvm", "fit_lssvm", "fit_ols", "fit_plsr", "nmse",
    "PipelineConfig", "RunReport", "preset", "run_pipeline",
    "compare_runs", "emit_plot_data",
]
