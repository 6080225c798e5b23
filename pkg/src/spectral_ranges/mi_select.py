"""Mutual-information feature selection.

``ksg_mi`` is the first Kraskov-Stögbauer-Grassberger k-NN estimator.
``forward_select`` greedily grows a feature set by joint MI with the target;
``exhaustive_search`` then scores every non-empty subset of the forward
candidates with a model evaluator (typically cross-validated LS-SVM).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .errors import SelectionError

log = logging.getLogger(__name__)

METRICS = {"euclidean": 2.0, "max": np.inf}
JITTER_SCALE = 1e-10


def _unit_ball_log_volume(d: int, p: float) -> float:
    if np.isinf(p):
        return d * math.log(2.0)
    return d / 2.0 * math.log(math.pi) - gammaln(d / 2.0 + 1.0)


def _standardize(A):
    A = np.asarray(A, dtype=float)
    sd = A.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (A - A.mean(axis=0)) / sd


def _break_ties(A, seed):
    """Perturb only columns that contain repeated values.

    The perturbation is 1e-10 times the column scale and depends on the
    seed and the column position, so results stay deterministic.
    """
    out = None
    for j in range(A.shape[1]):
        col = A[:, j]
        if np.unique(col).size < col.size:
            if out is None:
                out = A.copy()
            rng = np.random.default_rng([seed, j])
            scale = max(np.abs(col).max(), 1.0)
            out[:, j] = col + JITTER_SCALE * scale * rng.uniform(-1.0, 1.0, col.size)
    return A if out is None else out


def ksg_mi(
    X,
    y,
    k_neighbors: int = 6,
    metric: str = "euclidean",
    standardize: bool = True,
    seed: int = 0,
) -> float:
    """Estimate I(X; y) in nats with the first KSG estimator.

    For every point the distance ``eps`` to its ``k``-th neighbour in the
    joint space is found; ``n_x`` and ``n_y`` count points strictly within
    ``eps`` in each marginal space under the same norm. The estimate is

        psi(k) + psi(N) - <psi(n_x + 1) + psi(n_y + 1)> + log(c_dx c_dy / c_dxy)

    where ``c_d`` is the volume of the unit ball of the norm (the last term
    vanishes for the max norm). It is returned unclamped.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if Y.shape[0] != n:
        raise ValueError("X and y have different numbers of samples")
    if n <= k_neighbors + 1:
        raise ValueError(f"need more than {k_neighbors + 1} samples, got {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("ksg_mi input contains non-finite values")
    p = METRICS[metric]
    if standardize:
        X, Y = _standardize(X), _standardize(Y)
    X = _break_ties(X, seed)
    Y = _break_ties(Y, seed + 1)
    J = np.hstack([X, Y])

    dist, _ = cKDTree(J).query(J, k=k_neighbors + 1, p=p)
    eps = dist[:, -1]
    radius = np.nextafter(eps, 0.0)
    nx = cKDTree(X).query_ball_point(X, radius, p=p, return_length=True) - 1
    ny = cKDTree(Y).query_ball_point(Y, radius, p=p, return_length=True) - 1
    dx, dy = X.shape[1], Y.shape[1]
    vol = (
        _unit_ball_log_volume(dx, p) + _unit_ball_log_volume(dy, p) - _unit_ball_log_volume(dx + dy, p)
    )
    return float(
        digamma(k_neighbors) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1)) + vol
    )


def forward_select(
    features,
    y,
    P: int = 7,
    k_neighbors: int = 6,
    metric: str = "euclidean",
    seed: int = 0,
) -> tuple[list, list]:
    """Greedy forward selection by joint MI with ``y``.

    Returns the selected feature order and the MI of each growing set.
    The trajectory may go down; it is never used to stop early.
    Ties go to the lowest feature index.
    """
    F = np.asarray(features, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    M = F.shape[1]
    if not 1 <= P <= M:
        raise ValueError(f"P must be in [1, {M}], got {P}")
    F = _standardize(F)
    order: list = []
    trajectory: list = []
    for _ in range(P):
        best_j, best_mi = None, -np.inf
        for j in range(M):
            if j in order:
                continue
            mi = ksg_mi(F[:, order + [j]], y, k_neighbors, metric=metric, seed=seed)
            if mi > best_mi:
                best_j, best_mi = j, mi
        order.append(best_j)
        trajectory.append(best_mi)
    return order, trajectory


@dataclass
class SelectionResult:
    forward_order: list
    mi_trajectory: list
    best_subset: tuple
    best_score: float
    subset_scores: dict  # tuple of feature indices -> CV NMSE
    evaluator_id: str
    failures: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    def to_dict(self, top: int = 20) -> dict:
        ranked = sorted(self.subset_scores.items(), key=lambda kv: _subset_key(kv[0], kv[1]))
        shown = ranked[:top]
        if tuple(self.best_subset) not in dict(shown):
            shown.append((tuple(self.best_subset), self.best_score))
        return {
            "forward_order": [int(i) for i in self.forward_order],
            "mi_trajectory": [float(v) for v in self.mi_trajectory],
            "best_subset": [int(i) for i in self.best_subset],
            "best_score": _json_float(self.best_score),
            "subset_scores": [
                {"subset": [int(i) for i in s], "cv_nmse": _json_float(v)} for s, v in shown
            ],
            "n_subsets_evaluated": len(self.subset_scores),
            "failures": {",".join(map(str, s)): r for s, r in self.failures.items()},
            "evaluator_id": self.evaluator_id,
            "parameters": dict(self.parameters),
        }


def _json_float(v):
    return None if not np.isfinite(v) else float(v)


def _subset_key(subset, score):
    return (score, len(subset), tuple(sorted(subset)))


Evaluator = Callable[[np.ndarray, np.ndarray], float]


def exhaustive_search(
    features,
    y,
    candidates: Sequence[int],
    evaluator: Evaluator,
    evaluator_id: str = "custom",
    max_candidates: int = 12,
) -> SelectionResult:
    """Score all ``2**P - 1`` non-empty subsets of ``candidates``.

    ``evaluator(X_subset, y)`` returns a CV NMSE; an exception marks that
    subset as failed (scored ``inf``). The best subset has the lowest score,
    then the fewest features, then the smallest sorted index tuple.
    """
    F = np.asarray(features, dtype=float)
    cands = [int(c) for c in candidates]
    P = len(cands)
    if not 1 <= P <= max_candidates:
        raise ValueError(f"exhaustive search needs 1..{max_candidates} candidates, got {P}")
    if len(set(cands)) != P:
        raise ValueError("candidate list has duplicates")
    scores: dict = {}
    failures: dict = {}
    for r in range(1, P + 1):
        for subset in itertools.combinations(cands, r):
            try:
                v = float(evaluator(F[:, list(subset)], y))
                if np.isnan(v):
                    raise ValueError("evaluator returned NaN")
            except Exception as exc:  # noqa: BLE001 - any evaluator failure is scored, not fatal
                failures[subset] = f"{type(exc).__name__}: {exc}"
                v = np.inf
            scores[subset] = v
    if len(failures) == len(scores):
        raise SelectionError(f"evaluator failed on all {len(scores)} subsets; first: {next(iter(failures.values()))}")
    best = min(scores, key=lambda s: _subset_key(s, scores[s]))
    return SelectionResult(
        forward_order=cands,
        mi_trajectory=[],
        best_subset=best,
        best_score=scores[best],
        subset_scores=scores,
        evaluator_id=evaluator_id,
        failures=failures,
    )
