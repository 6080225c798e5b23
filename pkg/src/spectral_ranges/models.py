"""Regression models, fold assignment, grid-search CV and the NMSE metric.

LS-SVM regression solves the dual saddle-point system

    [ 0   1^T        ] [b]     [0]
    [ 1   K + I/gamma] [a]  =  [y]

with an RBF kernel ``K_ij = exp(-||x_i - x_j||^2 / (2 sigma^2))`` on
standardized features.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
from scipy.spatial.distance import cdist

from .errors import NumericalError, UndefinedMetricError

log = logging.getLogger(__name__)

DEFAULT_GAMMAS = tuple(10.0 ** np.arange(-2, 7))
DEFAULT_SIGMA_FACTORS = tuple(10.0 ** np.linspace(-1, 2, 7))
ILL_CONDITIONED_RCOND = 1e-12


def nmse(y_true, y_pred) -> float:
    """Mean squared error divided by the sample variance (ddof=1) of ``y_true``.

    A constant predictor equal to the mean of ``y_true`` scores ``(Q-1)/Q``.
    """
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} vs {y_pred.size}")
    if y_true.size < 2:
        raise UndefinedMetricError("NMSE needs at least two samples")
    var = y_true.var(ddof=1)
    if not var > 0:
        raise UndefinedMetricError("NMSE undefined: target has zero variance on this set")
    return float(np.mean((y_pred - y_true) ** 2) / var)


# --------------------------------------------------------------------------
# folds


def contiguous_folds(n: int, k: int) -> list[np.ndarray]:
    """Split ``range(n)`` into ``k`` contiguous blocks.

    Block sizes differ by at most one and the larger blocks come last, so
    172 samples give 57/57/58 and 91 give 30/30/31.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    base, extra = divmod(n, k)
    sizes = [base] * (k - extra) + [base + 1] * extra
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [np.arange(edges[i], edges[i + 1]) for i in range(k)]


def shuffled_folds(n: int, k: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(perm[f]) for f in contiguous_folds(n, k)]


def make_folds(n: int, k: int, shuffle: bool = False, seed: Optional[int] = None) -> list[np.ndarray]:
    if shuffle:
        if seed is None:
            raise ValueError("shuffled folds need a seed")
        return shuffled_folds(n, k, seed)
    return contiguous_folds(n, k)


def _complement(n, test_idx):
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask)


# --------------------------------------------------------------------------
# OLS


@dataclass(frozen=True)
class LinearModel:
    coef: np.ndarray
    intercept: float
    rank: int

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept


def fit_ols(X, y, rcond: float = 1e-10) -> LinearModel:
    """Minimum-norm least squares with an (unpenalized) intercept."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    keep = s > rcond * s[0] if s.size and s[0] > 0 else np.zeros(s.shape, dtype=bool)
    coef = Vt[keep].T @ ((U[:, keep].T @ (y - ym)) / s[keep])
    return LinearModel(coef, float(ym - xm @ coef), int(keep.sum()))


def cv_nmse_ols(X, y, folds: Sequence[np.ndarray]) -> float:
    """Mean fold NMSE of OLS; ``inf`` when a training fold has fewer rows than features."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    scores = []
    for test in folds:
        train = _complement(len(y), test)
        if train.size < X.shape[1]:
            return float("inf")
        model = fit_ols(X[train], y[train])
        try:
            scores.append(nmse(y[test], model.predict(X[test])))
        except UndefinedMetricError:
            return float("inf")
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# PLS1


@dataclass(frozen=True)
class PlsrModel:
    n_components: int
    weights: np.ndarray  # d x a
    x_loadings: np.ndarray  # d x a
    scores: np.ndarray  # n x a
    y_loadings: np.ndarray  # a
    x_mean: np.ndarray
    y_mean: float
    coef: np.ndarray
    truncated: bool = False

    def predict(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) @ self.coef + self.y_mean


def fit_plsr(X, y, n_components: int, tol: float = 1e-10) -> PlsrModel:
    """PLS1 by deflation.

    If the deflated covariance ``X_a^T y_a`` vanishes before ``n_components``
    the model stops there and ``truncated`` is set.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n, d = X.shape
    if n_components < 1 or n_components > min(d, n - 1):
        raise ValueError(f"n_components must be in [1, {min(d, n - 1)}], got {n_components}")
    x_mean, y_mean = X.mean(axis=0), float(y.mean())
    Xa, ya = X - x_mean, y - y_mean
    ref = np.linalg.norm(Xa.T @ ya)
    W, P, T, Q = [], [], [], []
    truncated = False
    for _ in range(n_components):
        w = Xa.T @ ya
        norm = np.linalg.norm(w)
        if ref == 0 or norm <= tol * ref:
            truncated = True
            break
        w /= norm
        t = Xa @ w
        tt = t @ t
        p = Xa.T @ t / tt
        q = ya @ t / tt
        Xa = Xa - np.outer(t, p)
        ya = ya - q * t
        W.append(w)
        P.append(p)
        T.append(t)
        Q.append(q)
    a = len(W)
    if a == 0:
        W_, P_, T_, Q_ = np.zeros((d, 0)), np.zeros((d, 0)), np.zeros((n, 0)), np.zeros(0)
        coef = np.zeros(d)
    else:
        W_, P_, T_, Q_ = np.array(W).T, np.array(P).T, np.array(T).T, np.array(Q)
        coef = W_ @ np.linalg.solve(P_.T @ W_, Q_)
    return PlsrModel(a, W_, P_, T_, Q_, x_mean, y_mean, coef, truncated)


def cv_tune_plsr(X, y, folds: Sequence[np.ndarray], max_components: int = 20) -> tuple[int, np.ndarray]:
    """Pick the PLS component count with the lowest mean fold NMSE (ties: fewer)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n_train_min = min(len(y) - len(f) for f in folds)
    upper = min(max_components, X.shape[1], n_train_min - 1)
    per_fold = []
    for test in folds:
        train = _complement(len(y), test)
        model = fit_plsr(X[train], y[train], upper)
        preds = []
        # nested models: prediction with a components reuses the first a columns
        for a in range(1, model.n_components + 1):
            W, P, q = model.weights[:, :a], model.x_loadings[:, :a], model.y_loadings[:a]
            coef = W @ np.linalg.solve(P.T @ W, q)
            preds.append(nmse(y[test], (X[test] - model.x_mean) @ coef + model.y_mean))
        preds += [np.inf] * (upper - model.n_components)
        per_fold.append(preds)
    curve = np.mean(np.array(per_fold), axis=0)
    best = int(np.argmin(curve)) + 1
    return best, curve


# --------------------------------------------------------------------------
# LS-SVM


def rbf_kernel(A, B, sigma: float) -> np.ndarray:
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma**2))


def _standardization(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


@dataclass(frozen=True)
class LsSvmModel:
    alphas: np.ndarray
    bias: float
    support_inputs: np.ndarray
    gamma: float
    sigma: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    rcond: float = float("nan")
    warnings: tuple = ()

    def decision(self, X) -> np.ndarray:
        Xs = (np.atleast_2d(np.asarray(X, dtype=float)) - self.feature_mean) / self.feature_scale
        return rbf_kernel(Xs, self.support_inputs, self.sigma) @ self.alphas + self.bias

    predict = decision

    def kkt_residual(self, y) -> float:
        """Relative residual of the saddle system on the stored training data."""
        y = np.asarray(y, dtype=float)
        K = rbf_kernel(self.support_inputs, self.support_inputs, self.sigma)
        top = self.alphas.sum()
        rest = self.bias + K @ self.alphas + self.alphas / self.gamma - y
        return float(np.sqrt(top**2 + rest @ rest) / max(np.linalg.norm(y), np.finfo(float).tiny))


def _saddle_solver(H):
    """Return a solver for the LS-SVM block system and an rcond estimate of H."""
    n = H.shape[0]
    try:
        cf = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
        anorm = np.abs(H).sum(axis=0).max()
        rcond, info = lapack.dpocon(cf[0], anorm, uplo="L")
        solve_h = lambda v: scipy.linalg.cho_solve(cf, v, check_finite=False)  # noqa: E731
    except np.linalg.LinAlgError:
        # H should be positive definite; fall back to a symmetric indefinite solve
        lu = scipy.linalg.lu_factor(H, check_finite=False)
        rcond = 0.0
        solve_h = lambda v: scipy.linalg.lu_solve(lu, v, check_finite=False)  # noqa: E731
    ones = np.ones(n)
    eta = solve_h(ones)
    s = ones @ eta

    def solve(r0, r):
        nu = solve_h(r)
        b = (ones @ nu - r0) / s
        return b, nu - b * eta

    return solve, float(rcond)


def fit_lssvm(X, y, gamma: float, sigma: float, refine_steps: int = 2) -> LsSvmModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if not (gamma > 0 and sigma > 0):
        raise ValueError("gamma and sigma must be positive")
    if X.shape[0] < 2:
        raise ValueError("LS-SVM needs at least two training samples")
    mean, scale = _standardization(X)
    Xs = (X - mean) / scale
    K = rbf_kernel(Xs, Xs, sigma)
    H = K + np.eye(len(y)) / gamma
    solve, rcond = _saddle_solver(H)
    b, a = solve(0.0, y)
    for _ in range(refine_steps):
        r0 = -a.sum()
        r = y - b - H @ a
        db, da = solve(r0, r)
        b, a = b + db, a + da
    if not (np.isfinite(b) and np.all(np.isfinite(a))):
        raise NumericalError("LS-SVM solve produced non-finite coefficients")
    notes = ()
    if rcond < ILL_CONDITIONED_RCOND:
        notes = (f"ill-conditioned kernel system (rcond {rcond:.2e})",)
    return LsSvmModel(a, float(b), Xs, float(gamma), float(sigma), mean, scale, rcond, notes)


def default_sigmas(n_features: int) -> tuple:
    return tuple(np.sqrt(n_features) * np.asarray(DEFAULT_SIGMA_FACTORS))


@dataclass
class TuneResult:
    gamma: float
    sigma: float
    cv_nmse: float
    gammas: tuple
    sigmas: tuple
    scores: np.ndarray = field(repr=False)  # len(gammas) x len(sigmas)


def _fold_scores_eigen(Xtr, ytr, Xte, yte, gammas, sigma):
    """Test-fold NMSE for every gamma at fixed sigma from one eigendecomposition."""
    mean, scale = _standardization(Xtr)
    A, B = (Xtr - mean) / scale, (Xte - mean) / scale
    lam, V = np.linalg.eigh(rbf_kernel(A, A, sigma))
    Kte = rbf_kernel(B, A, sigma)
    ones = np.ones(len(ytr))
    Vt1, Vty = V.T @ ones, V.T @ ytr
    out = []
    for g in gammas:
        d = 1.0 / (lam + 1.0 / g)
        eta, nu = V @ (d * Vt1), V @ (d * Vty)
        b = (ones @ nu) / (ones @ eta)
        a = nu - b * eta
        pred = Kte @ a + b
        try:
            out.append(nmse(yte, pred) if np.all(np.isfinite(pred)) else np.inf)
        except UndefinedMetricError:
            out.append(np.inf)
    return out


def cv_tune_lssvm(
    X,
    y,
    folds: int | Sequence[np.ndarray] = 3,
    gammas: Optional[Sequence[float]] = None,
    sigmas: Optional[Sequence[float]] = None,
) -> TuneResult:
    """Grid search over (gamma, sigma) minimizing mean fold NMSE.

    ``folds`` is either a fold count (contiguous blocks) or explicit test-index
    arrays. Ties go to the smaller gamma, then the larger sigma.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if isinstance(folds, (int, np.integer)):
        folds = contiguous_folds(len(y), int(folds))
    if len(folds) < 2:
        raise ValueError("need at least 2 folds")
    gammas = tuple(float(g) for g in (DEFAULT_GAMMAS if gammas is None else gammas))
    sigmas = tuple(float(s) for s in (default_sigmas(X.shape[1]) if sigmas is None else sigmas))
    if not gammas or not sigmas:
        raise ValueError("hyperparameter grid is empty")

    scores = np.zeros((len(gammas), len(sigmas)))
    for test in folds:
        train = _complement(len(y), test)
        for j, s in enumerate(sigmas):
            try:
                col = _fold_scores_eigen(X[train], y[train], X[test], y[test], gammas, s)
            except (np.linalg.LinAlgError, FloatingPointError, ValueError):
                col = [np.inf] * len(gammas)
            scores[:, j] += np.asarray(col) / len(folds)
    scores[~np.isfinite(scores)] = np.inf

    v, g, neg_s = min(
        (scores[i, j], gammas[i], -sigmas[j]) for i in range(len(gammas)) for j in range(len(sigmas))
    )
    return TuneResult(g, -neg_s, float(v), gammas, sigmas, scores)


# --------------------------------------------------------------------------
# reporting


@dataclass
class FitReport:
    model_kind: str
    hyperparameters: dict
    n_features: int
    train_nmse: float
    test_nmse: float
    cv_nmse: float
    fold_spec: list
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(**d)
