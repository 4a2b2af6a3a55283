"""Sparse datasets, the sparse line format, n-gram features and column scaling.

Rows are held as a CSR matrix so that penalties and gradients vectorize
over examples. :class:`SparseVector` is the single-row view used by the
per-example APIs (prediction, noising, online steps).

On-disk format, one example per line::

    #dim 1050
    1 2:0.5 6:1.2   # trailing comment

Indices are 1-based and strictly ascending on disk, 0-based in memory.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp


class DataFormatError(ValueError):
    """A malformed line in a sparse dataset file."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class SparseVector:
    """A sparse feature vector with strictly ascending 0-based indices."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=float)
        if idx.shape != val.shape or idx.ndim != 1:
            raise ValueError("indices and values must be 1-d arrays of equal length")
        if idx.size:
            if idx[0] < 0 or idx[-1] >= self.dim:
                raise ValueError(f"index out of range for dim {self.dim}")
            if np.any(np.diff(idx) <= 0):
                raise ValueError("indices must be strictly ascending")
        if not np.all(np.isfinite(val)):
            raise ValueError("values must be finite")
        keep = val != 0.0
        object.__setattr__(self, "indices", idx[keep])
        object.__setattr__(self, "values", val[keep])

    @classmethod
    def from_dense(cls, x: Sequence[float]) -> SparseVector:
        x = np.asarray(x, dtype=float)
        idx = np.flatnonzero(x)
        return cls(idx, x[idx], x.size)

    @classmethod
    def from_dict(cls, entries: dict[int, float], dim: int) -> SparseVector:
        idx = np.array(sorted(entries), dtype=np.int64)
        return cls(idx, np.array([entries[i] for i in idx], dtype=float), dim)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out

    def dot(self, beta: np.ndarray) -> float:
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.dim,):
            raise ValueError(f"dimension mismatch: vector has {self.dim}, beta has {beta.shape}")
        return float(self.values @ beta[self.indices])

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (self.dim == other.dim and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    """Labelled rows ``X`` (n x d, CSR) with labels ``y`` (length n)."""

    X: sp.csr_matrix
    y: np.ndarray

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=float)
        X.eliminate_zeros()
        X.sort_indices()
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError(f"{X.shape[0]} rows but {y.shape} labels")
        if not np.all(np.isfinite(X.data)):
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_rows(cls, rows: Sequence[SparseVector], labels: Sequence[float], dim: int | None = None) -> Dataset:
        if dim is None:
            dim = rows[0].dim if rows else 0
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        for i, r in enumerate(rows):
            if r.dim != dim:
                raise ValueError(f"row {i} has dim {r.dim}, expected {dim}")
            indptr[i + 1] = indptr[i] + r.nnz
        indices = np.concatenate([r.indices for r in rows]) if rows else np.zeros(0, dtype=np.int64)
        values = np.concatenate([r.values for r in rows]) if rows else np.zeros(0)
        X = sp.csr_matrix((values, indices, indptr), shape=(len(rows), dim))
        return cls(X, np.asarray(labels, dtype=float))

    @classmethod
    def from_dense(cls, X, y) -> Dataset:
        return cls(sp.csr_matrix(np.asarray(X, dtype=float)), y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def row(self, i: int) -> SparseVector:
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        return SparseVector(self.X.indices[lo:hi], self.X.data[lo:hi], self.dim)

    def rows(self) -> Iterator[SparseVector]:
        for i in range(self.n):
            yield self.row(i)

    def subset(self, index) -> Dataset:
        index = np.asarray(index)
        return Dataset(self.X[index], self.y[index])

    def with_labels(self, y) -> Dataset:
        return Dataset(self.X, y)


@dataclass(frozen=True)
class UnlabeledSet:
    """Unlabelled rows ``Z`` (m x d)."""

    X: sp.csr_matrix

    def __post_init__(self):
        X = sp.csr_matrix(self.X, dtype=float)
        X.eliminate_zeros()
        X.sort_indices()
        object.__setattr__(self, "X", X)

    @classmethod
    def from_dataset(cls, data: Dataset) -> UnlabeledSet:
        return cls(data.X)

    @classmethod
    def empty(cls, dim: int) -> UnlabeledSet:
        return cls(sp.csr_matrix((0, dim)))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


# --------------------------------------------------------------------------
# sparse line format
# --------------------------------------------------------------------------

_HEADER = re.compile(r"^#dim\s+(\d+)\s*$")


def parse_sparse_lines(lines: Iterable[str]) -> Dataset:
    """Parse the sparse line format. Raises :class:`DataFormatError`."""
    header_dim = None
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for lineno, raw in enumerate(lines, start=1):
        if lineno == 1:
            m = _HEADER.match(raw.strip())
            if m:
                header_dim = int(m.group(1))
                continue
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise DataFormatError(lineno, f"bad label {tokens[0]!r}") from None
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise DataFormatError(lineno, f"expected index:value, got {tok!r}")
            try:
                j = int(key)
                v = float(val)
            except ValueError:
                raise DataFormatError(lineno, f"bad entry {tok!r}") from None
            if j < 1:
                raise DataFormatError(lineno, f"indices are 1-based, got {j}")
            if j <= prev:
                raise DataFormatError(lineno, f"indices not strictly ascending at {j}")
            if not math.isfinite(v):
                raise DataFormatError(lineno, f"non-finite value {val!r}")
            if header_dim is not None and j > header_dim:
                raise DataFormatError(lineno, f"index {j} exceeds header dim {header_dim}")
            prev = j
            indices.append(j - 1)
            values.append(v)
        indptr.append(len(indices))
    if not labels:
        raise ValueError("empty dataset")
    dim = header_dim if header_dim is not None else max(indices, default=-1) + 1
    X = sp.csr_matrix(
        (np.array(values, dtype=float), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(labels), dim),
    )
    return Dataset(X, np.array(labels))


def read_sparse_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_sparse_lines(fh)


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return format(float(v), ".17g")


def format_sparse_lines(data: Dataset | UnlabeledSet, header: bool = True) -> Iterator[str]:
    """Yield lines for ``data``. Unlabelled sets are written with label 0."""
    X = data.X
    y = data.y if isinstance(data, Dataset) else np.zeros(X.shape[0])
    if header:
        yield f"#dim {X.shape[1]}"
    for i in range(X.shape[0]):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        entries = " ".join(f"{j + 1}:{_fmt(v)}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        yield f"{_fmt(y[i])} {entries}".rstrip()


def write_sparse_dataset(data: Dataset | UnlabeledSet, path, header: bool = True) -> None:
    Path(path).write_text("\n".join(format_sparse_lines(data, header)) + "\n", encoding="utf-8")


def read_vocabulary(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def write_vocabulary(vocab: Sequence[str], path) -> None:
    Path(path).write_text("".join(f"{tok}\n" for tok in vocab), encoding="utf-8")


# --------------------------------------------------------------------------
# n-gram featurization
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _ngrams(tokens: list[str], order: int) -> list[str]:
    grams = list(tokens)
    if order == 2:
        grams.extend(f"{a}_{b}" for a, b in zip(tokens, tokens[1:]))
    return grams


def featurize_ngrams(
    documents: Sequence[str],
    labels: Sequence[float],
    order: int = 1,
    min_count: int = 0,
    vocabulary: Sequence[str] | None = None,
) -> tuple[Dataset, list[str]]:
    """Bag-of-n-gram counts.

    ``min_count`` is applied to corpus-wide counts. Pass ``vocabulary`` to
    featurize held-out text against a training vocabulary; unknown n-grams
    are dropped.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    counts = [Counter(_ngrams(tokenize(doc), order)) for doc in documents]
    if vocabulary is None:
        total: Counter = Counter()
        for c in counts:
            total.update(c)
        vocabulary = sorted(g for g, k in total.items() if k >= min_count)
    vocab = list(vocabulary)
    lookup = {g: j for j, g in enumerate(vocab)}
    rows = []
    for c in counts:
        entries = {lookup[g]: float(k) for g, k in c.items() if g in lookup}
        rows.append(SparseVector.from_dict(entries, len(vocab)))
    return Dataset.from_rows(rows, labels, dim=len(vocab)), vocab


# --------------------------------------------------------------------------
# column normalization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingReport:
    """Per-column multipliers; all-zero columns keep factor 1 and are listed."""

    factors: np.ndarray
    mode: str = "none"
    zero_columns: tuple[int, ...] = field(default=())


def normalize_columns(data: Dataset, mode: str = "unit_second_moment") -> tuple[Dataset, ScalingReport]:
    """Rescale columns so that ``sum_i x_ij**2 == 1``."""
    if data.n == 0:
        raise ValueError("empty dataset")
    if mode == "none":
        return data, ScalingReport(np.ones(data.dim), "none")
    if mode != "unit_second_moment":
        raise ValueError(f"unknown normalization mode {mode!r}")
    sq = np.asarray(data.X.multiply(data.X).sum(axis=0)).ravel()
    zero = sq == 0.0
    factors = np.ones(data.dim)
    factors[~zero] = 1.0 / np.sqrt(sq[~zero])
    report = ScalingReport(factors, mode, tuple(int(j) for j in np.flatnonzero(zero)))
    return apply_scaling(data, report), report


def apply_scaling(data, report: ScalingReport):
    """Apply stored column factors to a Dataset or UnlabeledSet."""
    if data.dim != report.factors.size:
        raise ValueError(f"dimension mismatch: data {data.dim}, scaling {report.factors.size}")
    X = sp.csr_matrix(data.X @ sp.diags(report.factors))
    if isinstance(data, Dataset):
        return Dataset(X, data.y)
    return UnlabeledSet(X)
