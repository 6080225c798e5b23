"""Independent component projection of spectra.

The observed signals are the spectra (rows of ``Z``, one per sample) and
the observations are the wavelength points, so ``Z (p x n) = A (p x k) S (k x n)``.
Columns of ``A`` are the per-spectrum coefficients used as features.

Whitening is PCA based: each spectrum is centred over wavelengths and
projected on the top ``k`` eigenvectors of the ``p x p`` covariance, so the
reconstruction ``A S`` is the rank-``k`` PCA approximation.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateSpectrumError, NumericalError, RankError

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Whitening:
    row_mean: np.ndarray  # p
    transform: np.ndarray  # k x p, D^-1/2 E^T
    inverse: np.ndarray  # p x k, E D^1/2
    eigenvalues: np.ndarray  # all p eigenvalues, descending

    def apply(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        return self.transform @ (Z - Z.mean(axis=1, keepdims=True))


def _center_rows(Z):
    Z = np.asarray(Z, dtype=float)
    mean = Z.mean(axis=1)
    return Z - mean[:, None], mean


def _eig_desc(Zc):
    n = Zc.shape[1]
    lam, E = np.linalg.eigh(Zc @ Zc.T / n)
    order = np.argsort(lam)[::-1]
    lam, E = lam[order], E[:, order]
    lam = np.maximum(lam, 0.0)
    # deterministic eigenvector signs
    flip = np.sign(E[np.argmax(np.abs(E), axis=0), np.arange(E.shape[1])])
    flip[flip == 0] = 1.0
    return lam, E * flip


def numerical_rank(Z) -> int:
    Zc, _ = _center_rows(Z)
    s = np.linalg.svd(Zc, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > RANK_RTOL * s[0]))


def whiten(Z, k: int) -> tuple[np.ndarray, Whitening]:
    """PCA whitening of the rows of ``Z`` to ``k`` dimensions.

    Returns the whitened ``k x n`` signals (zero row means, identity row
    covariance) and the transform pair. Raises :class:`RankError` when ``k``
    exceeds the numerical rank of the centred data.
    """
    Zc, mean = _center_rows(Z)
    p, n = Zc.shape
    rank = numerical_rank(Z)
    if k < 1 or k > rank:
        raise RankError(f"requested {k} components but the centred data has rank {rank}", rank)
    lam, E = _eig_desc(Zc)
    Ek, lk = E[:, :k], lam[:k]
    transform = (Ek / np.sqrt(lk)).T
    inverse = Ek * np.sqrt(lk)
    return transform @ Zc, Whitening(mean, transform, inverse, lam)


def _sym_orth(W):
    u, _, vt = np.linalg.svd(W)
    return u @ vt


@dataclass(frozen=True)
class IcaModel:
    mixing_A: np.ndarray  # p x k
    unmixing_W: np.ndarray  # k x k, in whitened coordinates
    sources_S: np.ndarray  # k x n
    whitening: Optional[Whitening]
    k: int
    converged: bool = True
    n_iter: int = 0
    residual: float = 0.0

    @property
    def unmixing(self) -> np.ndarray:
        """Full unmixing map from centred spectra to sources (k x p)."""
        return self.unmixing_W @ self.whitening.transform

    def transform(self, Z) -> np.ndarray:
        """Least-squares coefficients of new spectra on the estimated sources.

        On the spectra the model was fitted on this reproduces ``mixing_A``.
        """
        Zc, _ = _center_rows(np.atleast_2d(Z))
        if self.k == 0:
            return np.zeros((Zc.shape[0], 0))
        n = self.sources_S.shape[1]
        return Zc @ self.sources_S.T / n

    def reconstruct(self) -> np.ndarray:
        return self.mixing_A @ self.sources_S


def fast_ica(
    Z,
    k: int,
    max_iter: int = 1000,
    tol: float = 1e-4,
    seed: int = 0,
    stabilized: bool = True,
    patience: int = 10,
) -> IcaModel:
    """Symmetric FastICA with the cubic nonlinearity ``g(u) = u**3``.

    Each iteration applies the fixed-point step

        W <- W + mu * diag(1 / (beta - 3 n)) (g(Y) Y^T - diag(beta)) W,
        beta_i = sum_t y_it g(y_it),

    (``mu = 1`` is the plain fixed-point update) followed by symmetric
    orthogonalization. With ``stabilized`` the step ``mu`` is halved each
    time the convergence measure fails to improve for ``patience``
    consecutive iterations. Convergence: ``1 - min |diag(W_new W_old^T)| < tol``.

    Sources are scaled to unit variance and each is signed so that its
    largest-magnitude entry is positive.
    """
    X, wh = whiten(Z, k)
    n = X.shape[1]
    rng = np.random.default_rng(seed)
    W = _sym_orth(rng.standard_normal((k, k)))
    mu = 1.0
    best, stall = np.inf, 0
    converged = False
    crit = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Y = W @ X
        G = Y**3
        beta = np.einsum("ij,ij->i", Y, G)
        step = ((G @ Y.T) - np.diag(beta)) @ W / (beta - 3.0 * n)[:, None]
        W_new = _sym_orth(W + mu * step)
        if not np.all(np.isfinite(W_new)):
            raise NumericalError(f"FastICA produced non-finite values at iteration {it}", iteration=it)
        crit = 1.0 - np.min(np.abs(np.einsum("ij,ij->i", W_new, W)))
        W = W_new
        if crit < tol:
            converged = True
            break
        if stabilized:
            if crit < best:
                best, stall = crit, 0
            else:
                stall += 1
                if stall >= patience:
                    mu /= 2.0
                    best, stall = crit, 0
    if not converged:
        log.warning("FastICA did not converge in %d iterations (residual %.3g)", max_iter, crit)

    S = W @ X
    S = S / S.std(axis=1, keepdims=True)
    # rows of W are unit vectors, so sources already have unit variance; the
    # division above only removes round-off
    sign = np.sign(S[np.arange(k), np.argmax(np.abs(S), axis=1)])
    sign[sign == 0] = 1.0
    W = W * sign[:, None]
    S = S * sign[:, None]
    A = wh.inverse @ W.T
    return IcaModel(A, W, S, wh, k, converged, it, float(max(crit, 0.0)))


def empty_model(Z) -> IcaModel:
    Zc, mean = _center_rows(Z)
    p, n = Zc.shape
    return IcaModel(np.zeros((p, 0)), np.zeros((0, 0)), np.zeros((0, n)), None, 0)


def reconstruction_error(model: IcaModel, Z) -> float:
    """``||Zc - A S||_F^2 / ||Zc||_F^2`` with ``Zc`` the row-centred spectra."""
    Zc, _ = _center_rows(Z)
    if Zc.shape != (model.mixing_A.shape[0], model.sources_S.shape[1]):
        raise ValueError("model and data shapes disagree")
    total = float(np.sum(Zc**2))
    if total == 0:
        raise ValueError("reconstruction error undefined for constant spectra")
    return float(np.sum((Zc - model.reconstruct()) ** 2) / total)


@dataclass
class ComponentChoice:
    k: int
    error_curve: list  # error for k = 1..k_max
    reached: bool
    warnings: list = field(default_factory=list)


def choose_k(Z, threshold: float = 0.01, k_max: Optional[int] = None) -> ComponentChoice:
    """Smallest ``k`` whose reconstruction error is at most ``threshold``.

    The curve is the PCA tail energy, which is what ``A S`` reconstructs.
    If no ``k <= k_max`` qualifies, ``k_max`` is returned with a warning.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    Zc, _ = _center_rows(Z)
    rank = numerical_rank(Z)
    if k_max is None:
        k_max = min(Zc.shape[0] - 1, 30)
    k_max = int(k_max)
    if not 1 <= k_max <= rank:
        raise RankError(f"k_max={k_max} exceeds the numerical rank {rank}", rank)
    lam, _ = _eig_desc(Zc)
    total = lam.sum()
    tail = 1.0 - np.cumsum(lam) / total
    curve = [float(max(t, 0.0)) for t in tail[:k_max]]
    hits = [i for i, e in enumerate(curve) if e <= threshold]
    if hits:
        return ComponentChoice(hits[0] + 1, curve, True)
    msg = f"reconstruction error {curve[-1]:.3g} at k_max={k_max} is above threshold {threshold}"
    warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return ComponentChoice(k_max, curve, False, [msg])


def normalize_rows(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    sd = F.std(axis=1, ddof=1, keepdims=True)
    bad = np.flatnonzero(~(sd[:, 0] > 0))
    if bad.size:
        raise DegenerateSpectrumError(f"row {bad[0]} of the mixing matrix is constant", row=int(bad[0]))
    return (F - F.mean(axis=1, keepdims=True)) / sd


def projection_features(model: IcaModel, normalize: bool = False) -> np.ndarray:
    """The mixing matrix as a feature table (one column per component).

    With ``normalize`` every row is centred and scaled to unit variance.
    """
    A = np.array(model.mixing_A, dtype=float)
    return normalize_rows(A) if normalize else A


def support_interval(source, mass: float = 0.9) -> tuple[int, int]:
    """Shortest index interval holding ``mass`` of the squared signal (leftmost on ties)."""
    sq = np.asarray(source, dtype=float) ** 2
    target = mass * sq.sum()
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    best = (0, len(sq) - 1)
    j = 0
    for i in range(len(sq)):
        j = max(j, i)
        while j < len(sq) and csum[j + 1] - csum[i] < target:
            j += 1
        if j == len(sq):
            break
        if j - i < best[1] - best[0]:
            best = (i, j)
    return best
