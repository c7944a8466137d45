"""Vector primitives and hard-thresholding operators.

Dense vectors are plain 1-d float64 numpy arrays; index sets are sorted
int64 arrays. Top-k selection breaks magnitude ties toward the smaller
index so that every solver run is reproducible bit for bit.
"""
import hashlib
from dataclasses import dataclass

import numpy as np


class BudgetError(ValueError):
    """Sparsity budget larger than the dimension (or negative)."""


class EmptySupportError(ValueError):
    """Operation needs at least one nonzero entry."""


def as_dense(x):
    """Convert to a finite float64 vector, rejecting NaN/Inf."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-d vector, got shape %s" % (x.shape,))
    if not np.all(np.isfinite(x)):
        raise ValueError("vector has non-finite entries")
    return x


def as_index_set(idx, d):
    """Validate and normalize an index set for dimension ``d``."""
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size:
        if idx.min() < 0 or idx.max() >= d:
            raise IndexError("index out of range for dimension %d" % d)
        if np.any(np.diff(idx) <= 0):
            idx = np.unique(idx)
    return idx


@dataclass(frozen=True)
class SparseSample:
    """One sample stored by its nonzero pattern."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.shape != values.shape or indices.ndim != 1:
            raise ValueError("indices and values must be 1-d and equally long")
        if indices.size and np.any(np.diff(indices) <= 0):
            raise ValueError("sample indices must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("sample has non-finite values")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    def densify(self, d):
        out = np.zeros(d)
        if self.indices.size and self.indices[-1] >= d:
            raise IndexError("sample index exceeds dimension %d" % d)
        out[self.indices] = self.values
        return out


def _check_budget(k, d):
    if k < 0 or k > d:
        raise BudgetError("sparsity budget k=%d outside [0, %d]" % (k, d))


def top_k_indices(x, k):
    """Indices of the ``k`` largest-magnitude entries of ``x``, sorted.

    Ties at the selection threshold go to the smaller index.
    """
    x = np.asarray(x)
    d = x.shape[0]
    _check_budget(k, d)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if k == d:
        return np.arange(d, dtype=np.int64)
    mag = np.abs(x)
    # k-th largest magnitude
    thr = np.partition(mag, d - k)[d - k]
    above = mag > thr
    n_above = int(np.count_nonzero(above))
    if n_above == k:
        return np.flatnonzero(above)
    at = np.flatnonzero(mag == thr)[: k - n_above]
    sel = above
    sel[at] = True
    return np.flatnonzero(sel)


def hard_threshold_k(x, k):
    """Keep the top-``k`` entries of ``x`` by magnitude, zero the rest."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    idx = top_k_indices(x, k)
    out[idx] = x[idx]
    return out


def restrict_to_support(x, F):
    x = np.asarray(x, dtype=np.float64)
    F = as_index_set(F, x.shape[0])
    out = np.zeros_like(x)
    out[F] = x[F]
    return out


def support(x):
    return np.flatnonzero(np.asarray(x))


def min_abs_on_support(x):
    x = np.abs(np.asarray(x, dtype=np.float64))
    nz = x[x != 0]
    if nz.size == 0:
        raise EmptySupportError("vector has empty support")
    return float(nz.min())


def inf_norm(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.max(np.abs(x))) if x.size else 0.0


def dot(x, s):
    """Inner product of a dense vector with a :class:`SparseSample`."""
    x = np.asarray(x, dtype=np.float64)
    if s.indices.size and s.indices[-1] >= x.shape[0]:
        raise ValueError(
            "dimension mismatch: sample index %d, vector length %d"
            % (s.indices[-1], x.shape[0])
        )
    return float(np.dot(x[s.indices], s.values))


def support_hash(idx):
    """Short stable digest of an index set (used in trace CSVs)."""
    idx = np.ascontiguousarray(np.asarray(idx, dtype=np.int64))
    return hashlib.sha1(idx.tobytes()).hexdigest()[:12]
