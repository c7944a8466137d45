"""Dual IHT solvers, primal IHT-family baselines and a brute-force oracle.

``diht`` and ``sdiht`` share one loop: a batch run is a stochastic run
whose only block is the full sample set, which keeps the m=1 stochastic
trace bitwise equal to the batch trace.
"""
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from . import losses as L
from .objective import (
    ENUM_BUDGET,
    CombinatorialBudgetError,
    DualState,
    PrimalState,
    accumulator,
    primal_value,
)
from .vecops import hard_threshold_k, support, support_hash, top_k_indices

SCHEDULES = ("theorem_mu", "constant", "inv_t", "lipschitz")
SOLVER_IDS = ("diht", "sdiht", "iht", "htp")


class ConfigError(ValueError):
    pass


class SolverAbort(RuntimeError):
    pass


@dataclass
class SolverConfig:
    max_iters: int = 100_000
    step_schedule: str = "theorem_mu"
    eta0: float = 1.0
    stop_gap_tol: float = 0.0
    stop_rel_primal_tol: float = 1e-4
    seed: int = 0
    m: int = 1
    record_every: int = 1
    target_primal: float = None
    resync_every: int = 1000
    divergence_limit: float = 1e12
    divergence_rows: int = 50

    def __post_init__(self):
        errs = []
        if self.max_iters < 0:
            errs.append("max_iters must be >= 0")
        if self.step_schedule not in SCHEDULES:
            errs.append("step_schedule must be one of %s" % ", ".join(SCHEDULES))
        if self.eta0 < 0:
            errs.append("eta0 must be >= 0")
        if self.stop_gap_tol < 0 or self.stop_rel_primal_tol < 0:
            errs.append("tolerances must be >= 0")
        if self.m < 1:
            errs.append("m must be >= 1")
        if self.record_every < 1:
            errs.append("record_every must be >= 1")
        if self.resync_every < 1:
            errs.append("resync_every must be >= 1")
        if errs:
            raise ConfigError("; ".join(errs))

    def to_dict(self):
        return asdict(self)


@dataclass
class BlockPartition:
    blocks: list

    def __post_init__(self):
        self.blocks = [np.sort(np.asarray(b, dtype=np.int64)) for b in self.blocks]

    @property
    def m(self):
        return len(self.blocks)

    def validate(self, N):
        if any(b.size == 0 for b in self.blocks):
            raise ValueError("partition has an empty block")
        allidx = np.concatenate(self.blocks)
        if allidx.size != N or not np.array_equal(np.sort(allidx), np.arange(N)):
            raise ValueError("blocks must be disjoint and cover [0, %d)" % N)


def make_partition(N, m, seed=0):
    """Random split of ``range(N)`` into ``m`` blocks whose sizes differ by <= 1."""
    if not 1 <= m <= N:
        raise ValueError("block count m=%d outside [1, N=%d]" % (m, N))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(N)
    return BlockPartition(np.array_split(perm, m))


def _spectral_norm(X):
    if sp.issparse(X):
        from scipy.sparse.linalg import svds

        return svds(X, k=1, return_singular_vectors=False)[0]
    return np.linalg.norm(X, 2)


def lipschitz_constant(inst, solver="iht"):
    """Gradient Lipschitz bound of the primal objective, or of the dual
    objective on a fixed support for the dual solvers."""
    smax2 = _spectral_norm(inst.X) ** 2
    mu = inst.loss.mu
    if solver in ("diht", "sdiht"):
        # conjugate curvature is mu for the quadratic conjugates, 0 for hinge
        return mu / inst.N + smax2 / (inst.lam * inst.N**2)
    return smax2 / ((mu if mu > 0 else 0.5) * inst.N) + inst.lam


def make_step_fn(config, inst, solver="diht"):
    """Return ``t -> eta`` for the configured schedule, validated up front."""
    s = config.step_schedule
    if s == "theorem_mu":
        if solver not in ("diht", "sdiht"):
            raise ConfigError("theorem_mu applies to dual solvers; use constant, inv_t or lipschitz")
        mu = inst.loss.mu
        if mu <= 0:
            raise ConfigError(
                "theorem_mu needs a smooth loss (mu > 0); %s loss has mu=0, "
                "use the constant or inv_t schedule" % inst.loss.kind
            )
        c = inst.N / mu
        if solver == "sdiht" and config.m != 1:
            c = c * config.m
        return lambda t: c / (t + 1)
    eta0 = config.eta0
    if s == "constant":
        return lambda t: eta0
    if s == "inv_t":
        return lambda t: eta0 / (t + 1)
    eta = eta0 / lipschitz_constant(inst, solver)
    return lambda t: eta


def step_size(t, config, inst, solver="diht"):
    """Step used at iteration ``t`` (0-based: the update producing t+1)."""
    return make_step_fn(config, inst, solver)(t)


@dataclass
class TraceRow:
    t: int
    seconds: float
    primal: float
    dual: float
    gap: float
    support: np.ndarray
    alpha_err: float = None

    @property
    def nnz(self):
        return int(self.support.size)


@dataclass
class RunReport:
    solver: str
    rows: list
    primal: PrimalState
    dual: DualState
    config: dict
    seed: int
    status: str = "max_iters"
    iterations: int = 0
    message: str = ""
    diverging: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def aborted(self):
        return self.status == "aborted"

    @property
    def final(self):
        return self.rows[-1]

    CSV_COLUMNS = ("t", "seconds", "primal", "dual", "gap", "nnz", "support_hash")

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            wr.writerow([r.t, repr(r.seconds), repr(r.primal), repr(r.dual),
                         repr(r.gap), r.nnz, support_hash(r.support)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_dict(self):
        rows = []
        for r in self.rows:
            row = {"t": r.t, "seconds": r.seconds, "primal": r.primal,
                   "dual": r.dual, "gap": r.gap, "nnz": r.nnz,
                   "support": [int(i) for i in r.support]}
            if r.alpha_err is not None:
                row["alpha_err"] = r.alpha_err
            rows.append(row)
        return {
            "solver": self.solver,
            "status": self.status,
            "message": self.message,
            "iterations": self.iterations,
            "seed": self.seed,
            "diverging": self.diverging,
            "config": self.config,
            "metadata": self.metadata,
            "final_support": [int(i) for i in self.primal.F],
            "final_w": {str(int(i)): float(self.primal.w[i]) for i in self.primal.F},
            "rows": rows,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _dual_value_fast(loss, alpha, y, w, lam):
    return float(-np.mean(L.conjugate_value(loss, alpha, y)) - 0.5 * lam * (w @ w))


def _primal_value_fast(loss, u, y, w, lam):
    return float(np.mean(L.loss_value(loss, u, y)) + 0.5 * lam * (w @ w))


def _check_T(config):
    if config.max_iters < 0:
        raise ConfigError("max_iters must be >= 0")


def _dual_loop(inst, config, partition, rng, solver, alpha_ref=None, record_at=(),
               callback=None):
    X, y, N, lam, k, loss = inst.X, inst.y, inst.N, inst.lam, inst.k, inst.loss
    T = config.max_iters
    step = make_step_fn(config, inst, solver)
    lo, hi = L.feasible_bounds(loss, y)
    smooth_proj = loss.kind != "squared"
    blocks = partition.blocks
    full = [b.size == N for b in blocks]
    Xb = [None if f else X[b] for b, f in zip(blocks, full)]
    scale = 1.0 / (lam * N)

    alpha = np.zeros(N)
    wt = np.zeros(inst.d)
    w = np.zeros(inst.d)
    u = np.zeros(N)
    record_at = set(record_at)
    rows = []
    P_prev = None
    status, message = "max_iters", ""
    since_sync = 0

    def make_row(t, elapsed, P, D, F):
        err = None
        if alpha_ref is not None:
            err = float(np.linalg.norm(alpha - alpha_ref) ** 2)
        return TraceRow(t, elapsed, P, D, P - D, F, err)

    P = _primal_value_fast(loss, u, y, w, lam)
    D = _dual_value_fast(loss, alpha, y, w, lam)
    rows.append(make_row(0, 0.0, P, D, support(w)))
    P_prev = P
    t0 = time.perf_counter()
    t = 0
    for t in range(1, T + 1):
        eta = step(t - 1)
        bi = int(rng.integers(len(blocks))) if len(blocks) > 1 else 0
        if full[bi]:
            g = (u - L.conjugate_derivative_unchecked(loss, alpha, y)) / N
            alpha = alpha + eta * g
            if smooth_proj:
                np.clip(alpha, lo, hi, out=alpha)
            wt = -(X.T @ alpha) * scale
            wt = np.asarray(wt).ravel()
            since_sync = 0
        else:
            B = blocks[bi]
            a_old = alpha[B]
            uB = np.asarray(Xb[bi] @ w).ravel()
            gB = (uB - L.conjugate_derivative_unchecked(loss, a_old, y[B])) / N
            a_new = a_old + eta * gB
            if smooth_proj:
                a_new = np.clip(a_new, lo[B], hi[B])
            alpha[B] = a_new
            wt -= np.asarray(Xb[bi].T @ (a_new - a_old)).ravel() * scale
            since_sync += 1
            if since_sync >= config.resync_every:
                wt = accumulator(inst, alpha)
                since_sync = 0
        idx = top_k_indices(wt, k)
        w = np.zeros(inst.d)
        w[idx] = wt[idx]
        is_record = t % config.record_every == 0 or t == T or t in record_at
        if full[bi] or is_record:
            u = np.asarray(X @ w).ravel()
        if not is_record:
            continue
        P = _primal_value_fast(loss, u, y, w, lam)
        D = _dual_value_fast(loss, alpha, y, w, lam)
        rows.append(make_row(t, time.perf_counter() - t0, P, D, support(w)))
        if callback is not None:
            callback(t, alpha, wt, w)
        if not np.isfinite(P) or P > config.divergence_limit:
            status = "aborted"
            message = "primal objective %r at iteration %d exceeds divergence limit" % (P, t)
            break
        if config.target_primal is not None and P <= config.target_primal:
            status = "reached_target"
            break
        if P - D <= config.stop_gap_tol:
            status = "converged_gap"
            break
        if config.stop_rel_primal_tol > 0 and P != 0 and \
                abs(P - P_prev) / abs(P) <= config.stop_rel_primal_tol:
            status = "converged_rel"
            break
        P_prev = P
    if rows[-1].t != t:
        # final iterate not recorded (loop exited on a non-record step)
        u = np.asarray(X @ w).ravel()
        P = _primal_value_fast(loss, u, y, w, lam)
        D = _dual_value_fast(loss, alpha, y, w, lam)
        rows.append(make_row(t, time.perf_counter() - t0, P, D, support(w)))
    return rows, alpha, wt, w, status, message, t


def diht(inst, config, alpha_ref=None, record_at=(), callback=None):
    """Dual iterative hard thresholding (batch projected super-gradient ascent).

    Starting from alpha = 0, w = 0, each iteration takes a projected
    super-gradient step on every dual variable using the previous primal
    iterate, then sets w to the top-k truncation of
    -(1/(lam N)) sum_i alpha_i x_i.

    Stops after ``max_iters`` iterations, when the duality gap drops to
    ``stop_gap_tol``, or when the relative primal change drops to
    ``stop_rel_primal_tol``. Stopping rules are evaluated on recorded
    iterations; ``callback(t, alpha, w_tilde, w)`` also runs there.
    """
    _check_T(config)
    partition = BlockPartition([np.arange(inst.N)])
    rng = np.random.default_rng(config.seed)
    return _finish("diht", inst, config, partition,
                   _dual_loop(inst, config, partition, rng, "diht", alpha_ref, record_at,
                              callback))


def sdiht(inst, config, partition=None, alpha_ref=None, record_at=(), callback=None):
    """Stochastic dual IHT: one uniformly drawn block of duals per iteration.

    Blocks are drawn with replacement across iterations from a single seeded
    generator, which also builds the partition when none is given. The
    accumulator is updated incrementally and recomputed from scratch every
    ``resync_every`` block updates.
    """
    _check_T(config)
    rng = np.random.default_rng(config.seed)
    if partition is None:
        partition = make_partition(inst.N, config.m, rng)
    partition.validate(inst.N)
    if partition.m != config.m:
        config = replace(config, m=partition.m)
    out = _finish("sdiht", inst, config, partition,
                  _dual_loop(inst, config, partition, rng, "sdiht", alpha_ref, record_at,
                             callback))
    out.metadata["block_sampling"] = "uniform with replacement, one block per iteration"
    out.metadata["block_sizes"] = [int(b.size) for b in partition.blocks]
    return out


def _finish(name, inst, config, partition, loop_out):
    rows, alpha, wt, w, status, message, t = loop_out
    return RunReport(
        solver=name,
        rows=rows,
        primal=PrimalState.from_vector(w),
        dual=DualState(alpha, wt),
        config=config.to_dict(),
        seed=config.seed,
        status=status,
        iterations=t,
        message=message,
    )


def _natural_dual(inst, u):
    # alpha_i = l_i'(u_i): feasible for all losses, gives a gap certificate
    return L.loss_derivative(inst.loss, u, inst.y)


def _primal_loop(inst, config, name, update):
    """Shared driver for the primal baselines; ``update(w, eta, t)`` -> w."""
    _check_T(config)
    step = make_step_fn(config, inst, name)
    X, y, lam, loss = inst.X, inst.y, inst.lam, inst.loss
    T = config.max_iters
    w = np.zeros(inst.d)
    u = np.zeros(inst.N)

    def row(t, elapsed):
        P = _primal_value_fast(loss, u, y, w, lam)
        a = _natural_dual(inst, u)
        wd = hard_threshold_k(accumulator(inst, a), inst.k)
        D = _dual_value_fast(loss, a, y, wd, lam)
        return TraceRow(t, elapsed, P, D, P - D, support(w))

    rows = [row(0, 0.0)]
    P_prev = rows[0].primal
    status, message = "max_iters", ""
    rises = 0
    diverging = False
    t0 = time.perf_counter()
    t = 0
    for t in range(1, T + 1):
        eta = step(t - 1)
        w = update(w, u, eta)
        u = np.asarray(X @ w).ravel()
        is_record = t % config.record_every == 0 or t == T
        if not is_record:
            continue
        r = row(t, time.perf_counter() - t0)
        rows.append(r)
        P = r.primal
        if not np.isfinite(P) or P > config.divergence_limit:
            status = "aborted"
            message = "primal objective %r at iteration %d exceeds divergence limit" % (P, t)
            break
        rises = rises + 1 if P > rows[-2].primal else 0
        if rises >= config.divergence_rows:
            diverging = True
        if config.target_primal is not None and P <= config.target_primal:
            status = "reached_target"
            break
        if r.gap <= config.stop_gap_tol:
            status = "converged_gap"
            break
        if config.stop_rel_primal_tol > 0 and P != 0 and \
                abs(P - P_prev) / abs(P) <= config.stop_rel_primal_tol:
            status = "converged_rel"
            break
        P_prev = P
    if rows[-1].t != t:
        rows.append(row(t, time.perf_counter() - t0))
    a = _natural_dual(inst, u)
    return RunReport(
        solver=name,
        rows=rows,
        primal=PrimalState.from_vector(w),
        dual=DualState(a, accumulator(inst, a)),
        config=config.to_dict(),
        seed=config.seed,
        status=status,
        iterations=t,
        message=message,
        diverging=diverging,
        metadata={"dual_column": "dual objective at alpha_i = l_i'(w^T x_i)"},
    )


def _grad(inst, w, u):
    g = L.loss_derivative(inst.loss, u, inst.y)
    return np.asarray(inst.X.T @ g).ravel() / inst.N + inst.lam * w


def iht_baseline(inst, config):
    """Primal IHT: w <- H_k(w - eta * grad P(w))."""
    def update(w, u, eta):
        return hard_threshold_k(w - eta * _grad(inst, w, u), inst.k)

    return _primal_loop(inst, config, "iht", update)


def htp_baseline(inst, config, inner_tol=1e-8, inner_max=1000):
    """Hard thresholding pursuit: IHT step to pick the support, then
    minimize P over that support."""
    def update(w, u, eta):
        F = top_k_indices(w - eta * _grad(inst, w, u), inst.k)
        return restricted_minimize(inst, F, w0=w, tol=inner_tol, max_iter=inner_max)[0]

    return _primal_loop(inst, config, "htp", update)


def restricted_ridge(inst, F):
    """Closed form of the squared-loss problem restricted to support F."""
    XF = inst.X[:, F]
    XF = XF.toarray() if sp.issparse(XF) else np.asarray(XF)
    A = XF.T @ XF + 0.5 * inst.lam * inst.N * np.eye(len(F))
    return np.linalg.solve(A, XF.T @ inst.y)


def _restricted_huber_newton(inst, XF, v, tol, max_iter):
    y, lam, N, g_ = inst.y, inst.lam, inst.N, inst.loss.gamma

    def obj(v):
        u = XF @ v
        return np.mean(L.loss_value(inst.loss, u, y)) + 0.5 * lam * v @ v

    for _ in range(max_iter):
        u = XF @ v
        grad = XF.T @ L.loss_derivative(inst.loss, u, y) / N + lam * v
        if np.linalg.norm(grad) <= tol:
            break
        z = y * u
        curv = ((z < 1.0) & (z >= 1.0 - g_)) / g_
        H = (XF.T * curv) @ XF / N + lam * np.eye(len(v))
        step = np.linalg.solve(H, grad)
        f0, s = obj(v), 1.0
        while obj(v - s * step) > f0 - 1e-4 * s * (grad @ step) and s > 1e-12:
            s *= 0.5
        v = v - s * step
    return v


def _restricted_hinge_dual(inst, XF, tol):
    # smooth box-constrained dual of the restricted problem
    y, lam, N = inst.y, inst.lam, inst.N
    lo, hi = L.feasible_bounds(inst.loss, y)

    def f(a):
        v = -(XF.T @ a) / (lam * N)
        val = np.mean(y * a) + 0.5 * lam * (v @ v)
        grad = y / N - (XF @ v) / N
        return val, grad

    res = minimize(f, np.zeros(N), jac=True, method="L-BFGS-B",
                   bounds=list(zip(lo, hi)), options={"gtol": tol, "ftol": 1e-15, "maxiter": 10000})
    return -(XF.T @ res.x) / (lam * N)


def restricted_minimize(inst, F, w0=None, tol=1e-10, max_iter=200):
    """argmin of P(w) over w with supp(w) contained in F; returns (w, P)."""
    F = np.asarray(F, dtype=np.int64)
    w = np.zeros(inst.d)
    if F.size == 0:
        return w, primal_value(inst, w)
    kind = inst.loss.kind
    if kind == "squared":
        w[F] = restricted_ridge(inst, F)
    else:
        XF = inst.X[:, F]
        XF = XF.toarray() if sp.issparse(XF) else np.asarray(XF)
        if kind == "huber":
            v0 = np.zeros(F.size) if w0 is None else np.asarray(w0)[F]
            w[F] = _restricted_huber_newton(inst, XF, v0, tol, max_iter)
        else:
            w[F] = _restricted_hinge_dual(inst, XF, tol)
    return w, primal_value(inst, w)


@dataclass
class OracleResult:
    w: np.ndarray
    primal: float
    support: np.ndarray


def brute_force_oracle(inst):
    """Global minimizer of the sparse problem by enumerating every size-k support."""
    n = comb(inst.d, inst.k)
    if n > ENUM_BUDGET:
        raise CombinatorialBudgetError(
            "C(%d, %d) = %d supports exceed the enumeration budget %d"
            % (inst.d, inst.k, n, ENUM_BUDGET)
        )
    best = None
    for F in combinations(range(inst.d), inst.k):
        w, P = restricted_minimize(inst, np.array(F))
        if best is None or P < best.primal:
            best = OracleResult(w, P, support(w))
    return best


def run_solver(name, inst, config, **kw):
    if name == "diht":
        return diht(inst, config, **kw)
    if name == "sdiht":
        return sdiht(inst, config, **kw)
    if name == "iht":
        return iht_baseline(inst, config)
    if name == "htp":
        return htp_baseline(inst, config)
    raise ConfigError("unknown solver %r; valid ids: %s" % (name, ", ".join(SOLVER_IDS)))
