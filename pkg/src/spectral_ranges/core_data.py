"""Spectra containers, CSV ingestion, preprocessing and train/test splits.

A :class:`SpectraSet` holds one spectrum per row.  All arrays are stored
read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import re
import tempfile
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from filelock import FileLock

from .errors import (
    DegenerateSlopeError,
    DegenerateSpectrumError,
    IngestionError,
    InvalidSplitError,
    NetworkError,
    ParseError,
)

log = logging.getLogger(__name__)

NANOMETER = "nanometer"
WAVENUMBER = "wavenumber"
AXIS_UNITS = (NANOMETER, WAVENUMBER)
PREPROCESSING_METHODS = ("snv", "msc", "derivative1")

TECATOR_URL = "http://lib.stat.cmu.edu/datasets/tecator"
TECATOR_N_SAMPLES = 215
TECATOR_N_VARS = 100
# absorbances(100), principal components(22), moisture, fat, protein
TECATOR_VALUES_PER_SAMPLE = 125
TECATOR_FAT_COLUMN = 123


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SpectraSet:
    """Matrix of spectra (rows = samples) with a monotone axis and a target."""

    absorbance: np.ndarray
    wavelengths: np.ndarray
    target: np.ndarray
    axis_unit: str = NANOMETER
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        X = _frozen(self.absorbance)
        wl = _frozen(self.wavelengths)
        y = _frozen(self.target)
        if X.ndim != 2:
            raise ValueError("absorbance must be a 2-D matrix")
        n, d = X.shape
        if n < 2 or d < 2:
            raise ValueError(f"need at least 2 samples and 2 variables, got {n}x{d}")
        if wl.shape != (d,):
            raise ValueError(f"wavelengths has shape {wl.shape}, expected ({d},)")
        if y.shape != (n,):
            raise ValueError(f"target has shape {y.shape}, expected ({n},)")
        if self.axis_unit not in AXIS_UNITS:
            raise ValueError(f"axis_unit must be one of {AXIS_UNITS}")
        step = np.diff(wl)
        if not (np.all(step > 0) or np.all(step < 0)):
            raise ValueError("wavelengths must be strictly monotone")
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            r, c = bad[0]
            raise IngestionError(f"non-finite absorbance at row {r}, column {c}")
        if not np.all(np.isfinite(y)):
            raise IngestionError(f"non-finite target at row {int(np.argmax(~np.isfinite(y)))}")
        object.__setattr__(self, "absorbance", X)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "target", y)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_samples(self) -> int:
        return self.absorbance.shape[0]

    @property
    def n_vars(self) -> int:
        return self.absorbance.shape[1]

    def replace(self, **changes) -> "SpectraSet":
        return dataclasses.replace(self, **changes)

    def take(self, rows) -> "SpectraSet":
        rows = np.asarray(rows, dtype=int)
        return self.replace(absorbance=self.absorbance[rows], target=self.target[rows])


@dataclass(frozen=True)
class SplitSpec:
    train_indices: tuple
    test_indices: tuple
    excluded_indices: tuple = ()

    def __post_init__(self):
        for name in ("train_indices", "test_indices", "excluded_indices"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))

    def validate(self, n_samples: int) -> None:
        sets = [set(self.train_indices), set(self.test_indices), set(self.excluded_indices)]
        names = ("train", "test", "excluded")
        for name, idx, s in zip(names, (self.train_indices, self.test_indices, self.excluded_indices), sets):
            if len(s) != len(idx):
                raise InvalidSplitError(f"duplicate indices in {name} set")
            out = [i for i in idx if i < 0 or i >= n_samples]
            if out:
                raise InvalidSplitError(f"{name} index {out[0]} out of range for {n_samples} samples")
        for a in range(3):
            for b in range(a + 1, 3):
                common = sets[a] & sets[b]
                if common:
                    raise InvalidSplitError(
                        f"{names[a]} and {names[b]} sets overlap at index {min(common)}"
                    )
        covered = len(sets[0]) + len(sets[1]) + len(sets[2])
        if covered != n_samples:
            missing = sorted(set(range(n_samples)) - sets[0] - sets[1] - sets[2])
            raise InvalidSplitError(f"split leaves samples unassigned, first is {missing[0]}")

    def to_dict(self) -> dict:
        return {
            "train_indices": list(self.train_indices),
            "test_indices": list(self.test_indices),
            "excluded_indices": list(self.excluded_indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(d["train_indices"], d["test_indices"], d.get("excluded_indices", ()))


def head_tail_split(n_samples: int, n_train: int, excluded: Iterable[int] = ()) -> SplitSpec:
    """First ``n_train`` rows form the training pool, the rest the test set.

    ``excluded`` are 0-based indices removed from the training pool.
    """
    excluded = sorted(set(int(i) for i in excluded))
    if any(i >= n_train for i in excluded):
        raise InvalidSplitError("excluded indices must lie in the training pool")
    train = [i for i in range(n_train) if i not in excluded]
    return SplitSpec(train, range(n_train, n_samples), excluded)


def apply_split(s: SpectraSet, spec: SplitSpec) -> tuple[SpectraSet, SpectraSet]:
    spec.validate(s.n_samples)
    return s.take(spec.train_indices), s.take(spec.test_indices)


# --------------------------------------------------------------------------
# ingestion


def _parse_float(text: str) -> float:
    return float(text.strip())


def load_csv(
    path: Union[str, os.PathLike],
    target_column: Union[int, str] = -1,
    has_header: bool = True,
    wavelength_row: Optional[int] = None,
    axis_unit: str = NANOMETER,
) -> SpectraSet:
    """Read spectra from a comma-separated file.

    Parameters
    ----------
    path : path-like
        UTF-8 CSV file, one sample per row.
    target_column : int or str
        Column holding the dependent variable. A string is looked up in the
        header row; negative integers count from the end.
    has_header : bool
        Whether the first row is a header. Header cells of the absorbance
        columns are used as wavelengths when they parse as numbers.
    wavelength_row : int, optional
        0-based index (after the header) of a row carrying the wavelengths
        instead of a sample. Its target cell is ignored.
    axis_unit : {"nanometer", "wavenumber"}

    Returns
    -------
    SpectraSet
        ``metadata["synthesized_axis"]`` is True when no wavelengths were
        found and ``0..n_vars-1`` was used instead.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise IngestionError(f"{path}: empty file")
    header = rows.pop(0) if has_header else None
    width = len(header) if header is not None else len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise IngestionError(f"{path}: row {i} has {len(r)} columns, expected {width}")

    if isinstance(target_column, str):
        if header is None:
            raise IngestionError("a named target column requires a header row")
        names = [h.strip() for h in header]
        if target_column not in names:
            raise IngestionError(f"target column {target_column!r} not in header")
        tcol = names.index(target_column)
    else:
        tcol = target_column % width
    vcols = [c for c in range(width) if c != tcol]

    wavelengths = None
    if wavelength_row is not None:
        wl_cells = rows.pop(wavelength_row)
        try:
            wavelengths = np.array([_parse_float(wl_cells[c]) for c in vcols])
        except ValueError as exc:
            raise IngestionError(f"{path}: wavelength row is not numeric") from exc
    elif header is not None:
        try:
            wavelengths = np.array([_parse_float(header[c]) for c in vcols])
        except ValueError:
            wavelengths = None

    X = np.empty((len(rows), len(vcols)))
    y = np.empty(len(rows))
    for i, r in enumerate(rows):
        for j, c in enumerate(list(vcols) + [tcol]):
            try:
                v = _parse_float(r[c])
            except ValueError as exc:
                raise IngestionError(f"{path}: unparsable cell at row {i}, column {c}: {r[c]!r}") from exc
            if not np.isfinite(v):
                raise IngestionError(f"{path}: non-finite cell at row {i}, column {c}")
            if j < len(vcols):
                X[i, j] = v
            else:
                y[i] = v

    synthesized = wavelengths is None
    if synthesized:
        wavelengths = np.arange(len(vcols), dtype=float)
    return SpectraSet(
        X,
        wavelengths,
        y,
        axis_unit=axis_unit,
        metadata={"source": str(path), "synthesized_axis": synthesized},
    )


def save_csv(s: SpectraSet, path: Union[str, os.PathLike], target_name: str = "target") -> None:
    """Write ``s`` in the layout :func:`load_csv` reads by default."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([repr(float(v)) for v in s.wavelengths] + [target_name])
        for row, t in zip(s.absorbance, s.target):
            w.writerow([repr(float(v)) for v in row] + [repr(float(t))])


# --------------------------------------------------------------------------
# Tecator


_NUMBER_LINE = re.compile(r"^\s*[-+0-9.eE\s]+$")


def parse_tecator(raw: bytes) -> SpectraSet:
    """Parse the StatLib Tecator distribution.

    The numeric block at the end of the file holds 125 values per sample.
    The first 215 samples are kept (the last 25 are the extrapolation sets),
    so rows 0..171 and 172..214 are the usual training and test blocks.
    """
    text = raw.decode("latin-1")
    lines = text.splitlines()
    block: list[str] = []
    for line in reversed(lines):
        if not line.strip():
            continue
        if _NUMBER_LINE.match(line):
            block.append(line)
        else:
            break
    block.reverse()
    try:
        values = np.array([float(tok) for line in block for tok in line.split()])
    except ValueError as exc:
        raise ParseError(f"tecator: unparsable numeric token ({exc})") from exc
    if values.size == 0 or values.size % TECATOR_VALUES_PER_SAMPLE:
        raise ParseError(
            f"tecator: {values.size} numeric values is not a multiple of {TECATOR_VALUES_PER_SAMPLE}"
        )
    data = values.reshape(-1, TECATOR_VALUES_PER_SAMPLE)
    if data.shape[0] < TECATOR_N_SAMPLES:
        raise ParseError(f"tecator: found {data.shape[0]} samples, expected {TECATOR_N_SAMPLES}")
    data = data[:TECATOR_N_SAMPLES]
    return SpectraSet(
        data[:, :TECATOR_N_VARS],
        np.linspace(850.0, 1050.0, TECATOR_N_VARS),
        data[:, TECATOR_FAT_COLUMN],
        axis_unit=NANOMETER,
        metadata={"source": "tecator", "target": "fat", "synthesized_axis": False},
    )


def fetch_tecator(
    url: str = TECATOR_URL,
    cache_dir: Union[str, os.PathLike, None] = None,
    refresh: bool = False,
    timeout: float = 30.0,
) -> SpectraSet:
    """Download (or reuse the cached copy of) the Tecator data set.

    The cache lives in ``<cache_dir>/tecator/raw.dat`` next to ``meta.json``.
    A download is only committed to the cache after it parses, so a
    truncated transfer never poisons it.
    """
    if cache_dir is None:
        cache_dir = Path(os.environ.get("SPECTRAL_RANGES_CACHE", Path.home() / ".cache" / "spectral_ranges"))
    folder = Path(cache_dir) / "tecator"
    folder.mkdir(parents=True, exist_ok=True)
    raw_path = folder / "raw.dat"
    meta_path = folder / "meta.json"

    with FileLock(str(folder / ".lock")):
        if raw_path.exists() and not refresh:
            raw = raw_path.read_bytes()
            try:
                meta = json.loads(meta_path.read_text())
            except (OSError, ValueError):
                meta = None
            if meta is not None and meta.get("byte_length") == len(raw):
                s = parse_tecator(raw)
                return s.replace(metadata={**s.metadata, "url": meta.get("url", url)})
            log.warning("tecator cache metadata missing or inconsistent, refetching")

        try:
            with urllib.request.urlopen(url, timeout=timeout) as resp:
                raw = resp.read()
        except (urllib.error.URLError, OSError) as exc:
            raise NetworkError(f"cannot download {url} and no cached copy in {folder}: {exc}") from exc

        s = parse_tecator(raw)
        fd, tmp = tempfile.mkstemp(dir=folder)
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, raw_path)
        meta_path.write_text(
            json.dumps({"url": url, "timestamp": time.time(), "byte_length": len(raw)}, indent=2)
        )
        return s.replace(metadata={**s.metadata, "url": url})


# --------------------------------------------------------------------------
# preprocessing


def snv(X: np.ndarray) -> np.ndarray:
    """Standard normal variate: each row to mean 0 and unit sample variance."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=1, keepdims=True)
    sd = X.std(axis=1, ddof=1, keepdims=True)
    flat = np.flatnonzero(sd[:, 0] <= 1e-12 * np.maximum(1.0, np.abs(mu[:, 0])))
    if flat.size:
        raise DegenerateSpectrumError(f"spectrum in row {flat[0]} is constant", row=int(flat[0]))
    return (X - mu) / sd


def msc(X: np.ndarray, reference: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Multiplicative scatter correction against ``reference``."""
    X = np.asarray(X, dtype=float)
    ref = np.asarray(reference, dtype=float)
    rc = ref - ref.mean()
    denom = rc @ rc
    if denom <= 0:
        raise DegenerateSlopeError("MSC reference spectrum is constant")
    b = (X - X.mean(axis=1, keepdims=True)) @ rc / denom
    a = X.mean(axis=1) - b * ref.mean()
    small = np.flatnonzero(np.abs(b) < tol)
    if small.size:
        raise DegenerateSlopeError(f"MSC slope below tolerance in row {small[0]}", row=int(small[0]))
    return (X - a[:, None]) / b[:, None]


def preprocess(s: SpectraSet, method: str, reference: Optional[np.ndarray] = None) -> SpectraSet:
    """Apply one preprocessing step.

    For ``msc`` the reference defaults to the mean spectrum of ``s``; pass
    the training mean explicitly when correcting test spectra.
    """
    if method == "snv":
        return s.replace(absorbance=snv(s.absorbance))
    if method == "msc":
        ref = s.absorbance.mean(axis=0) if reference is None else reference
        return s.replace(absorbance=msc(s.absorbance, ref))
    if method == "derivative1":
        if s.n_vars < 3:
            raise ValueError("derivative1 needs at least 3 variables")
        wl = s.wavelengths
        return s.replace(
            absorbance=np.diff(s.absorbance, axis=1),
            wavelengths=(wl[:-1] + wl[1:]) / 2.0,
        )
    raise ValueError(f"unknown preprocessing method {method!r}; expected one of {PREPROCESSING_METHODS}")


def preprocess_pair(
    train: SpectraSet, test: SpectraSet, methods: Sequence[str]
) -> tuple[SpectraSet, SpectraSet]:
    """Run ``methods`` in order; MSC references come from training spectra only."""
    for m in methods:
        ref = train.absorbance.mean(axis=0) if m == "msc" else None
        train, test = preprocess(train, m, ref), preprocess(test, m, ref)
    return train, test
