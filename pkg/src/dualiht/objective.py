"""Primal and dual objectives, the primal-dual map and saddle-point checks.

The data matrix is stored sample-major (``X`` has shape ``(N, d)``, row i is
sample x_i), either as a dense array or a scipy CSR matrix.
"""
from dataclasses import asdict, dataclass, field
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from . import losses as L
from .vecops import (
    EmptySupportError,
    SparseSample,
    as_dense,
    hard_threshold_k,
    inf_norm,
    min_abs_on_support,
    support,
)

ENUM_BUDGET = 10**5


class CombinatorialBudgetError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemInstance:
    X: object
    y: np.ndarray
    lam: float
    k: int
    loss: L.LossModel
    rows_normalized: bool = False

    def __post_init__(self):
        X = self.X
        if sp.issparse(X):
            X = sp.csr_matrix(X, dtype=np.float64)
            X.sort_indices()
            if not np.all(np.isfinite(X.data)):
                raise ValueError("data matrix has non-finite entries")
        else:
            X = np.array(X, dtype=np.float64, order="C")
            if X.ndim != 2:
                raise ValueError("data matrix must be 2-d (N x d)")
            if not np.all(np.isfinite(X)):
                raise ValueError("data matrix has non-finite entries")
            X.setflags(write=False)
        y = np.array(self.y, dtype=np.float64)
        if y.shape != (X.shape[0],):
            raise ValueError("labels length %d != N=%d" % (y.size, X.shape[0]))
        y.setflags(write=False)
        N, d = X.shape
        if N < 1:
            raise ValueError("need at least one sample")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not 0 < self.k <= d:
            raise ValueError("sparsity budget k=%d outside (0, %d]" % (self.k, d))
        L.check_labels(self.loss, y)
        if self.rows_normalized and row_norms(X).max() > 1 + 1e-12:
            raise ValueError("rows_normalized set but some ||x_i|| > 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "k", int(self.k))

    @property
    def N(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def sample(self, i):
        if sp.issparse(self.X):
            row = self.X.getrow(i)
            return SparseSample(row.indices, row.data)
        nz = np.flatnonzero(self.X[i])
        return SparseSample(nz, self.X[i, nz])

    @property
    def samples(self):
        return [self.sample(i) for i in range(self.N)]

    def dense_X(self):
        return self.X.toarray() if sp.issparse(self.X) else np.asarray(self.X)

    def with_params(self, **kw):
        args = dict(X=self.X, y=self.y, lam=self.lam, k=self.k, loss=self.loss,
                    rows_normalized=self.rows_normalized)
        args.update(kw)
        return ProblemInstance(**args)


def row_norms(X):
    if sp.issparse(X):
        return np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    return np.linalg.norm(X, axis=1)


@dataclass
class PrimalState:
    w: np.ndarray
    F: np.ndarray

    @classmethod
    def from_vector(cls, w):
        w = np.asarray(w, dtype=np.float64)
        return cls(w, support(w))


@dataclass
class DualState:
    alpha: np.ndarray
    w_tilde: np.ndarray


def _check_dim(inst, w):
    w = as_dense(w)
    if w.shape[0] != inst.d:
        raise ValueError("dimension mismatch: len(w)=%d, d=%d" % (w.shape[0], inst.d))
    return w


def _check_alpha(inst, alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (inst.N,):
        raise ValueError("dual vector must have length N=%d" % inst.N)
    if not L.is_feasible(inst.loss, alpha, inst.y):
        raise L.DomainError("dual vector is infeasible")
    return alpha


def margins(inst, w):
    return np.asarray(inst.X @ w).ravel()


def primal_value(inst, w):
    w = _check_dim(inst, w)
    u = margins(inst, w)
    return float(np.mean(L.loss_value(inst.loss, u, inst.y)) + 0.5 * inst.lam * (w @ w))


def primal_subgradient(inst, w):
    w = _check_dim(inst, w)
    u = margins(inst, w)
    g = L.loss_derivative(inst.loss, u, inst.y)
    return np.asarray(inst.X.T @ g).ravel() / inst.N + inst.lam * w


def accumulator(inst, alpha):
    """The pre-truncation primal vector -(1/(lam N)) sum_i alpha_i x_i."""
    return -np.asarray(inst.X.T @ alpha).ravel() / (inst.lam * inst.N)


def primal_from_dual(inst, alpha):
    alpha = _check_alpha(inst, alpha)
    w = hard_threshold_k(accumulator(inst, alpha), inst.k)
    return PrimalState.from_vector(w)


def dual_value(inst, alpha):
    alpha = _check_alpha(inst, alpha)
    w = hard_threshold_k(accumulator(inst, alpha), inst.k)
    conj = L.conjugate_value(inst.loss, alpha, inst.y)
    return float(-np.mean(conj) - 0.5 * inst.lam * (w @ w))


def dual_supergradient(inst, alpha, w=None):
    """Super-gradient of the dual objective at ``alpha``.

    ``w`` defaults to the primal vector linked to ``alpha``; a stale primal
    iterate may be passed instead, as the batch solver does.
    """
    alpha = _check_alpha(inst, alpha)
    if w is None:
        w = primal_from_dual(inst, alpha).w
    elif isinstance(w, PrimalState):
        w = w.w
    w = _check_dim(inst, w)
    u = margins(inst, w)
    return (u - L.conjugate_derivative(inst.loss, alpha, inst.y)) / inst.N


def duality_gap(inst, w, alpha):
    return primal_value(inst, w) - dual_value(inst, alpha)


def gap_closed_form(inst, w, alpha):
    """Gap as an average of per-sample Fenchel-Young residuals.

    Valid when ``w`` is the primal vector linked to ``alpha``.
    """
    w = _check_dim(inst, w)
    alpha = _check_alpha(inst, alpha)
    u = margins(inst, w)
    fy = (
        L.loss_value(inst.loss, u, inst.y)
        + L.conjugate_value(inst.loss, alpha, inst.y)
        - alpha * u
    )
    return float(np.mean(fy))


def margin_epsilon_bar(inst, w):
    w = _check_dim(inst, w)
    if not np.any(w):
        raise EmptySupportError("margin undefined for the zero vector")
    return min_abs_on_support(w) - inf_norm(primal_subgradient(inst, w)) / inst.lam


@dataclass
class Certificate:
    """Residuals and verdicts of the sparse saddle-point checks."""

    tol: float
    effective_tol: float
    b_ok: bool
    b_residual: float
    b_worst_index: int
    c_ok: bool
    c_residual: float
    remark_ok: bool
    remark_support_residual: float
    remark_margin_residual: float
    gap: float
    gap_ok: bool
    primal_optimal: str
    passed: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def certify_saddle_point(inst, w, alpha, tol=1e-6, relative=False):
    """Check the sparse saddle-point conditions for a pair ``(w, alpha)``.

    (b) alpha_i lies in the subdifferential of l_i at w^T x_i;
    (c) w equals the hard-thresholded accumulator of alpha;
    remark form of (c): P'(w) vanishes on supp(w) and
    w_min >= ||P'(w)||_inf / lam, with P'(w) = X^T alpha / N + lam w.

    Global primal optimality is only reported as implied when every check
    passes and the duality gap is within tolerance. With ``relative`` the
    tolerance is scaled by ||w_tilde||_inf.
    """
    w = _check_dim(inst, w)
    alpha = np.asarray(alpha, dtype=np.float64)
    notes = []
    if np.count_nonzero(w) > inst.k:
        notes.append("w has more than k nonzeros")
    if not L.is_feasible(inst.loss, alpha, inst.y):
        notes.append("alpha infeasible")
        alpha = L.project_feasible(inst.loss, alpha, inst.y)
    wt = accumulator(inst, alpha)
    eff = tol * max(inf_norm(wt), np.finfo(float).tiny) if relative else tol

    u = margins(inst, w)
    lo, hi = L.loss_subdifferential(inst.loss, u, inst.y)
    if inst.loss.kind == "hinge":
        # margins within tolerance of the kink admit the whole interval
        near = np.abs(inst.y * u - 1.0) <= eff
        flo, fhi = L.feasible_bounds(inst.loss, inst.y)
        lo = np.where(near, flo, lo)
        hi = np.where(near, fhi, hi)
    b_res = np.maximum(lo - alpha, 0.0) + np.maximum(alpha - hi, 0.0)
    b_worst = int(np.argmax(b_res))
    b_residual = float(b_res[b_worst])

    c_residual = float(np.linalg.norm(w - hard_threshold_k(wt, inst.k)))

    pg = np.asarray(inst.X.T @ alpha).ravel() / inst.N + inst.lam * w
    F = support(w)
    sup_res = inf_norm(pg[F]) if F.size else 0.0
    w_min = min_abs_on_support(w) if F.size else 0.0
    off = np.delete(pg, F)
    margin_res = max(0.0, inf_norm(off) / inst.lam - w_min) if off.size else 0.0

    gap = primal_value(inst, w) - dual_value(inst, alpha)
    b_ok = b_residual <= eff
    c_ok = c_residual <= eff
    remark_ok = sup_res <= eff and margin_res <= eff
    gap_ok = gap <= eff
    passed = b_ok and c_ok and remark_ok and not notes
    if passed and gap_ok:
        optimal = "implied"
    else:
        optimal = "not certified"
    return Certificate(
        tol=tol,
        effective_tol=eff,
        b_ok=bool(b_ok),
        b_residual=b_residual,
        b_worst_index=b_worst,
        c_ok=bool(c_ok),
        c_residual=c_residual,
        remark_ok=bool(remark_ok),
        remark_support_residual=float(sup_res),
        remark_margin_residual=float(margin_res),
        gap=float(gap),
        gap_ok=bool(gap_ok),
        primal_optimal=optimal,
        passed=bool(passed and gap_ok),
        notes=notes,
    )


def _n_supports(d, s):
    return sum(comb(d, j) for j in range(1, s + 1))


def restricted_singular_values(inst_or_X, s):
    """Extreme singular values of X over all feature subsets of size <= s.

    For every nonempty F with |F| <= s the singular values of the feature
    restriction X_F are computed; the result is the largest of the largest
    and the smallest of the smallest. Brute force, so the number of
    subsets is capped at ``ENUM_BUDGET``.
    """
    X = inst_or_X.dense_X() if isinstance(inst_or_X, ProblemInstance) else inst_or_X
    X = np.asarray(X.toarray() if sp.issparse(X) else X, dtype=np.float64)
    d = X.shape[1]
    if not 1 <= s <= d:
        raise ValueError("s=%d outside [1, %d]" % (s, d))
    if _n_supports(d, s) > ENUM_BUDGET:
        raise CombinatorialBudgetError(
            "%d supports exceed the enumeration budget %d" % (_n_supports(d, s), ENUM_BUDGET)
        )
    smax, smin = 0.0, np.inf
    for size in range(1, s + 1):
        for F in combinations(range(d), size):
            sv = np.linalg.svd(X[:, F], compute_uv=False)
            smax = max(smax, sv[0])
            smin = min(smin, sv[-1])
    return float(smax), float(smin)


def top_k_margin(inst, alpha):
    """Gap between the k-th and (k+1)-th largest |w_tilde| entries."""
    wt = np.abs(accumulator(inst, alpha))
    if inst.k == inst.d:
        return np.inf
    srt = np.sort(wt)[::-1]
    return float(srt[inst.k - 1] - srt[inst.k])
