"""Agglomerative clustering of spectral variables restricted to adjacent merges.

Variables are columns of the training matrix.  Similarity between two
variables is their absolute correlation; between two clusters it is the
minimum over all cross pairs (full linkage).  Only neighbouring intervals
may be merged, so every cluster is a wavelength range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core_data import SpectraSet
from .errors import DegenerateVariableError
from .models import contiguous_folds, cv_nmse_ols

TIE_ATOL = 1e-12  # NMSE is scale free, so an absolute tolerance is meaningful
# correlations that agree to this many digits are treated as exact ties
CORR_TIE_ATOL = 1e-12


def abs_correlation(x, y) -> float:
    """|cov(x, y)| / sqrt(var(x) var(y)) from sample moments."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("abs_correlation needs two vectors of equal length >= 2")
    xc, yc = x - x.mean(), y - y.mean()
    vx, vy = xc @ xc, yc @ yc
    if vx <= 0 or vy <= 0:
        raise DegenerateVariableError("abs_correlation of a constant vector is undefined")
    return float(min(1.0, abs(xc @ yc) / np.sqrt(vx * vy)))


def abs_correlation_matrix(X, wavelengths=None) -> np.ndarray:
    """Pairwise absolute correlation between the columns of ``X``."""
    X = np.asarray(X, dtype=float)
    Xc = X - X.mean(axis=0)
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    flat = np.flatnonzero(norms <= 1e-12 * scale * np.sqrt(X.shape[0]))
    if flat.size:
        j = int(flat[0])
        wl = None if wavelengths is None else float(wavelengths[j])
        where = f"wavelength {wl:g}" if wl is not None else f"variable {j}"
        raise DegenerateVariableError(f"{where} is constant over the training set", index=j, wavelength=wl)
    Z = Xc / norms
    R = np.abs(Z.T @ Z)
    np.clip(R, 0.0, 1.0, out=R)
    np.fill_diagonal(R, 1.0)
    return R


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    similarity: float
    node: int
    interval: tuple  # (lo, hi) inclusive


@dataclass
class ClusterTree:
    """Merge history.

    Leaves are nodes ``0..n_vars-1``; the merge at step ``t`` creates node
    ``n_vars + t``.
    """

    n_vars: int
    merges: list = field(default_factory=list)

    def intervals(self) -> dict:
        out = {i: (i, i) for i in range(self.n_vars)}
        for m in self.merges:
            out[m.node] = m.interval
        return out

    def merge_sequence(self) -> list:
        return [(m.interval[0], m.left, m.right) for m in self.merges]

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "merges": [[m.left, m.right, m.similarity, m.interval[0], m.interval[1]] for m in self.merges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterTree":
        n = d["n_vars"]
        merges = [
            Merge(int(l), int(r), float(s), n + t, (int(lo), int(hi)))
            for t, (l, r, s, lo, hi) in enumerate(d["merges"])
        ]
        return cls(n, merges)


@dataclass(frozen=True)
class Clustering:
    """``M`` contiguous intervals; interval ``j`` is ``[boundaries[j], boundaries[j+1] - 1]``."""

    boundaries: tuple

    def __post_init__(self):
        b = tuple(int(v) for v in self.boundaries)
        if len(b) < 2 or b[0] != 0 or any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValueError(f"invalid cluster boundaries {b}")
        object.__setattr__(self, "boundaries", b)

    @property
    def M(self) -> int:
        return len(self.boundaries) - 1

    @property
    def n_vars(self) -> int:
        return self.boundaries[-1]

    @property
    def intervals(self) -> list:
        b = self.boundaries
        return [(b[j], b[j + 1] - 1) for j in range(self.M)]

    def wavelength_ranges(self, wavelengths) -> list:
        wl = np.asarray(wavelengths, dtype=float)
        return [[float(wl[lo]), float(wl[hi])] for lo, hi in self.intervals]


def build_tree(train: SpectraSet | np.ndarray, wavelengths=None) -> ClusterTree:
    """Constrained full-linkage agglomeration of the columns of ``train``.

    Ties between equally similar neighbouring pairs go to the leftmost pair;
    similarities within ``CORR_TIE_ATOL`` of the maximum count as tied, so
    round-off cannot reorder pairs that are equal in exact arithmetic.
    After merging ``A`` and ``B``, the similarity to the left neighbour
    ``C`` is ``min(sim(C, A), min |R[C, B]|)``, and symmetrically on the
    right, which equals the full min-linkage recomputed from scratch.
    """
    if isinstance(train, SpectraSet):
        X, wavelengths = train.absorbance, train.wavelengths
    else:
        X = np.asarray(train, dtype=float)
    n = X.shape[1]
    R = abs_correlation_matrix(X, wavelengths)

    # current clusters in order: (lo, hi, node id)
    lo = list(range(n))
    hi = list(range(n))
    node = list(range(n))
    sim = [float(R[i, i + 1]) for i in range(n - 1)]
    tree = ClusterTree(n)
    for t in range(n - 1):
        top = max(sim) - CORR_TIE_ATOL
        i = next(j for j, v in enumerate(sim) if v >= top)
        s = sim[i]
        a_lo, b_hi = lo[i], hi[i + 1]
        b_lo = lo[i + 1]
        a_hi = hi[i]
        new = n + t
        tree.merges.append(Merge(node[i], node[i + 1], s, new, (a_lo, b_hi)))
        if i > 0:
            c_lo, c_hi = lo[i - 1], hi[i - 1]
            sim[i - 1] = min(sim[i - 1], float(R[c_lo : c_hi + 1, b_lo : b_hi + 1].min()))
        if i + 2 < len(lo):
            c_lo, c_hi = lo[i + 2], hi[i + 2]
            sim[i + 1] = min(sim[i + 1], float(R[a_lo : a_hi + 1, c_lo : c_hi + 1].min()))
        hi[i] = b_hi
        node[i] = new
        del lo[i + 1], hi[i + 1], node[i + 1], sim[i]
    return tree


def cut(tree: ClusterTree, M: int) -> Clustering:
    """Clustering left after undoing the last ``M - 1`` merges."""
    n = tree.n_vars
    if not 1 <= M <= n:
        raise ValueError(f"M must be in [1, {n}], got {M}")
    starts = set(range(n))
    for m in tree.merges[: n - M]:
        lo, hi = m.interval
        # the right child started somewhere inside (lo, hi]; drop it
        right_lo = _child_lo(tree, m.right)
        starts.discard(right_lo)
    return Clustering(tuple(sorted(starts)) + (n,))


def _child_lo(tree: ClusterTree, node_id: int) -> int:
    if node_id < tree.n_vars:
        return node_id
    return tree.merges[node_id - tree.n_vars].interval[0]


def cluster_features(s: SpectraSet | np.ndarray, c: Clustering) -> np.ndarray:
    """Row-wise mean over each interval (piecewise-constant approximation)."""
    X = s.absorbance if isinstance(s, SpectraSet) else np.asarray(s, dtype=float)
    if c.n_vars != X.shape[1]:
        raise ValueError(f"clustering covers {c.n_vars} variables, data has {X.shape[1]}")
    b = np.asarray(c.boundaries)
    sums = np.add.reduceat(X, b[:-1], axis=1)
    return sums / np.diff(b)


@dataclass
class ClusterCountSelection:
    M_best: int
    m_values: list
    scores: list  # mean CV NMSE per M, inf where a fold could not be fitted


def select_num_clusters(
    tree: ClusterTree,
    train: SpectraSet,
    folds: int | Sequence[np.ndarray] = 3,
    m_range: Optional[Iterable[int]] = None,
) -> ClusterCountSelection:
    """Choose M by cross-validated OLS on the cluster means.

    Scores within ``TIE_ATOL`` of the minimum count as ties, which go to the
    smaller M; without this, round-off decides between exact fits.
    """
    y = train.target
    if isinstance(folds, (int, np.integer)):
        if folds < 2:
            raise ValueError("need at least 2 folds")
        folds = contiguous_folds(len(y), int(folds))
    m_values = sorted(set(range(1, tree.n_vars + 1) if m_range is None else (int(m) for m in m_range)))
    if not m_values or m_values[0] < 1 or m_values[-1] > tree.n_vars:
        raise ValueError(f"m_range must lie within [1, {tree.n_vars}]")
    scores = [cv_nmse_ols(cluster_features(train, cut(tree, M)), y, folds) for M in m_values]
    floor = min(scores) + TIE_ATOL
    best = next(M for M, v in zip(m_values, scores) if v <= floor)
    return ClusterCountSelection(best, m_values, scores)
