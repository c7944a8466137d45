"""Synthetic data generation, LibSVM I/O and row normalization."""
import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .objective import ProblemInstance, row_norms

GAUSSIAN_SAMPLER = "numpy.random.Generator(PCG64).standard_normal (ziggurat)"


class ParseError(ValueError):
    def __init__(self, path, lineno, msg):
        super().__init__("%s:%d: %s" % (path, lineno, msg))
        self.path = path
        self.lineno = lineno


@dataclass(frozen=True)
class SyntheticSpec:
    d: int
    k_bar: int
    N: int
    noise_sd: float = 1.0
    off_diag: float = 0.25
    seed: int = 0
    task: str = "regression"

    def __post_init__(self):
        errs = []
        if self.d < 1:
            errs.append("d must be >= 1")
        if not 0 <= self.k_bar <= self.d:
            errs.append("k_bar=%d must lie in [0, d=%d]" % (self.k_bar, self.d))
        if self.N < 1:
            errs.append("N must be >= 1")
        if not 0 <= self.off_diag < 1:
            errs.append("off_diag must lie in [0, 1)")
        if self.noise_sd < 0:
            errs.append("noise_sd must be >= 0")
        if self.task not in ("regression", "classification"):
            errs.append("task must be 'regression' or 'classification'")
        if errs:
            raise ValueError("; ".join(errs))


@dataclass
class Dataset:
    X: object
    y: np.ndarray
    true_w: np.ndarray = None
    spec: SyntheticSpec = None
    rows_normalized: bool = False

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def to_instance(self, loss, lam, k):
        y = self.y
        if loss.is_classification:
            y = coerce_labels(y)
        return ProblemInstance(self.X, y, lam, k, loss,
                               rows_normalized=self.rows_normalized)

    def normalized(self):
        return Dataset(normalize_rows(self.X), self.y, self.true_w, self.spec, True)


def equicorrelated_sqrt_apply(Z, off_diag):
    """Multiply rows of Z by the symmetric square root of
    (1 - c) I + c 11^T, using its closed-form eigenstructure."""
    n = Z.shape[1]
    if n == 0:
        return Z
    a = 1.0 - off_diag
    top = a + off_diag * n  # eigenvalue on the all-ones direction
    coef = (np.sqrt(top) - np.sqrt(a)) / n
    return np.sqrt(a) * Z + coef * Z.sum(axis=1, keepdims=True)


def generate_synthetic(spec):
    """Sparse linear model with a correlated informative block.

    The first ``k_bar`` features follow N(mu1, Sigma) with unit variances and
    constant correlation ``off_diag``; the rest follow N(mu2, I). Both mean
    vectors are drawn from N(0, I) once per call. The true weight vector is
    ones on the first block and responses are ``x^T w + noise``. For the
    classification task labels are the sign of the response (0 -> +1).
    """
    rng = np.random.default_rng(spec.seed)
    d, kb, N = spec.d, spec.k_bar, spec.N
    mu1 = rng.standard_normal(kb)
    mu2 = rng.standard_normal(d - kb)
    Z1 = rng.standard_normal((N, kb))
    Z2 = rng.standard_normal((N, d - kb))
    eps = rng.standard_normal(N) * spec.noise_sd
    X = np.empty((N, d))
    X[:, :kb] = mu1 + equicorrelated_sqrt_apply(Z1, spec.off_diag)
    X[:, kb:] = mu2 + Z2
    true_w = np.zeros(d)
    true_w[:kb] = 1.0
    y = X @ true_w + eps
    if spec.task == "classification":
        y = np.where(y >= 0, 1.0, -1.0)
    return Dataset(X, y, true_w, spec)


def normalize_rows(X):
    """Scale every row with norm > 1 to unit norm; other rows untouched."""
    norms = row_norms(X)
    scale = np.where(norms > 1.0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    if sp.issparse(X):
        return sp.diags(scale) @ sp.csr_matrix(X)
    return np.asarray(X) * scale[:, None]


def coerce_labels(y):
    y = np.asarray(y, dtype=np.float64)
    bad = ~np.isin(y, (-1.0, 0.0, 1.0))
    if np.any(bad):
        raise ValueError(
            "classification labels must be in {-1, 0, +1}; got %r at row %d"
            % (y[bad][0], int(np.flatnonzero(bad)[0]))
        )
    return np.where(y == 0.0, -1.0, y)


def load_libsvm(path, d=None, classification=False):
    """Parse a LibSVM text file into (CSR matrix, labels, d).

    Indices are 1-based and strictly increasing on each line; they are
    mapped to 0-based columns. ``d`` defaults to the largest index seen.
    """
    indptr, indices, data, labels = [0], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(float(tokens[0]))
            except ValueError:
                raise ParseError(path, lineno, "bad label %r" % tokens[0]) from None
            prev = 0
            for tok in tokens[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise ParseError(path, lineno, "expected idx:val, got %r" % tok)
                try:
                    j, v = int(idx), float(val)
                except ValueError:
                    raise ParseError(path, lineno, "bad pair %r" % tok) from None
                if j < 1:
                    raise ParseError(path, lineno, "indices are 1-based, got %d" % j)
                if j <= prev:
                    raise ParseError(path, lineno, "indices not strictly increasing at %d" % j)
                if not np.isfinite(v):
                    raise ParseError(path, lineno, "non-finite value %r" % val)
                prev = j
                indices.append(j - 1)
                data.append(v)
            indptr.append(len(indices))
    d_seen = max(indices) + 1 if indices else 0
    if d is None:
        d = d_seen
    elif d < d_seen:
        raise ValueError("%s: feature index %d exceeds d=%d" % (path, d_seen, d))
    X = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), d),
    )
    y = np.asarray(labels, dtype=np.float64)
    if classification:
        y = coerce_labels(y)
    return X, y, d


def _fmt(v):
    # repr of a Python float is the shortest round-tripping decimal
    v = float(v)
    return repr(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def write_libsvm(path, X, y):
    X = sp.csr_matrix(X)
    X.sort_indices()
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            parts = [_fmt(y[i])]
            parts += ["%d:%s" % (j + 1, _fmt(v))
                      for j, v in zip(X.indices[lo:hi], X.data[lo:hi]) if v != 0]
            fh.write(" ".join(parts) + "\n")


def write_sidecar(path, dataset):
    doc = {
        "d": dataset.d,
        "N": dataset.N,
        "true_w": [float(v) for v in dataset.true_w],
        "spec": asdict(dataset.spec) if dataset.spec else None,
        "gaussian_sampler": GAUSSIAN_SAMPLER,
        "mean_vectors": "drawn independently per data copy",
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def read_sidecar(path):
    with open(path) as fh:
        doc = json.load(fh)
    spec = SyntheticSpec(**doc["spec"]) if doc.get("spec") else None
    return np.asarray(doc["true_w"], dtype=np.float64), spec, doc
