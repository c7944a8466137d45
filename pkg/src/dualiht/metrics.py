"""Estimation error, support recovery rate and the time-to-target protocol."""
import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import generate_synthetic
from .losses import make_loss
from .solvers import SolverConfig, run_solver
from .vecops import support

DEFAULT_LAMBDA_GRID = tuple(10.0**e for e in range(-6, 3))
SELECTION_STATISTIC = "mean estimation error on validation replicates"


def estimation_error(w, true_w):
    """Relative parameter error ||w - w_true|| / ||w_true||."""
    w = np.asarray(w, dtype=np.float64)
    true_w = np.asarray(true_w, dtype=np.float64)
    if w.shape != true_w.shape:
        raise ValueError("dimension mismatch: %s vs %s" % (w.shape, true_w.shape))
    nrm = np.linalg.norm(true_w)
    if nrm == 0:
        raise ValueError("estimation error undefined for a zero true vector")
    return float(np.linalg.norm(w - true_w) / nrm)


def support_recovery_success(w, true_w):
    w, true_w = np.asarray(w), np.asarray(true_w)
    if w.shape != true_w.shape:
        raise ValueError("dimension mismatch: %s vs %s" % (w.shape, true_w.shape))
    return bool(np.array_equal(support(w), support(true_w)))


@dataclass
class Table:
    columns: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, **row):
        missing = set(self.columns) - set(row)
        if missing:
            raise KeyError("row is missing columns %s" % sorted(missing))
        self.rows.append(row)

    def to_csv(self, path=None):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for r in self.rows:
            wr.writerow([repr(v) if isinstance(v, float) else v
                         for v in (r[c] for c in self.columns)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_json(self, path=None):
        text = json.dumps({"columns": list(self.columns), "rows": self.rows,
                           "metadata": self.metadata}, indent=2, default=_jsonable)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError("not JSON serializable: %r" % type(o))


@dataclass
class TrialBatch:
    """Independent synthetic replicates split into validation and evaluation."""
    replicates: list
    n_validation: int
    n_evaluation: int
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_validation < 0 or self.n_evaluation < 1:
            raise ValueError("need n_validation >= 0 and n_evaluation >= 1")
        if len(self.replicates) != self.n_validation + self.n_evaluation:
            raise ValueError("%d replicates but split sizes sum to %d"
                             % (len(self.replicates), self.n_validation + self.n_evaluation))

    @property
    def validation(self):
        return self.replicates[:self.n_validation]

    @property
    def evaluation(self):
        return self.replicates[self.n_validation:]

    @classmethod
    def from_spec(cls, spec, n_validation, n_evaluation):
        """Draw replicates whose seeds are spawned from ``spec.seed``; each
        replicate draws its own mean vectors."""
        n = n_validation + n_evaluation
        children = np.random.SeedSequence(spec.seed).spawn(n)
        seeds = [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]
        reps = [generate_synthetic(replace(spec, seed=s)) for s in seeds]
        return cls(reps, n_validation, n_evaluation, seeds)


def make_solver(name, config=None):
    cfg = config or SolverConfig()

    def solve(inst):
        return run_solver(name, inst, cfg)

    solve.name = name
    solve.config = cfg
    return solve


def _weights(solver, inst):
    out = solver(inst)
    return out.primal.w if hasattr(out, "primal") else np.asarray(out)


def _run_all(solver, datasets, loss, lam, k, threads):
    insts = [ds.to_instance(loss, lam, k) for ds in datasets]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda i: _weights(solver, i), insts))
    return [_weights(solver, i) for i in insts]


@dataclass
class PssrResult:
    pssr: float
    lam: float
    mean_error: float
    errors: list
    successes: list
    validation_errors: dict
    selection: str = SELECTION_STATISTIC


def pssr_select(batch, solver, lam_grid, loss=None, k=None, threads=1):
    """Pick lambda by mean validation estimation error, then score the
    evaluation replicates at that lambda."""
    lam_grid = list(lam_grid)
    if not lam_grid:
        raise ValueError("empty lambda grid")
    if not batch.replicates:
        raise ValueError("empty batch")
    if isinstance(solver, str):
        solver = make_solver(solver)
    loss = loss or make_loss("squared")
    if k is None:
        k = batch.replicates[0].spec.k_bar
    val_err = {}
    if len(lam_grid) == 1 or batch.n_validation == 0:
        lam = lam_grid[0]
    else:
        for lam in lam_grid:
            ws = _run_all(solver, batch.validation, loss, lam, k, threads)
            val_err[lam] = float(np.mean([estimation_error(w, ds.true_w)
                                          for w, ds in zip(ws, batch.validation)]))
        # first grid value wins ties
        lam = min(lam_grid, key=lambda v: val_err[v])
    ws = _run_all(solver, batch.evaluation, loss, lam, k, threads)
    errs = [estimation_error(w, ds.true_w) for w, ds in zip(ws, batch.evaluation)]
    succ = [support_recovery_success(w, ds.true_w) for w, ds in zip(ws, batch.evaluation)]
    return PssrResult(float(np.mean(succ)), lam, float(np.mean(errs)), errs, succ, val_err)


def pssr(batch, solver, lam_grid, **kw):
    """Fraction of evaluation replicates whose support is recovered exactly."""
    return pssr_select(batch, solver, lam_grid, **kw).pssr


PSSR_COLUMNS = ("solver", "N", "lam", "pssr", "mean_error", "n_eval")


def pssr_sweep(spec, Ns, solvers, lam_grid, n_validation, n_evaluation,
               loss=None, k=None, threads=1):
    """Error and PSSR versus sample size; ``solvers`` maps label -> (name, config)."""
    table = Table(PSSR_COLUMNS, metadata={"selection": SELECTION_STATISTIC,
                                          "lam_grid": list(lam_grid), "spec": spec.__dict__,
                                          "solvers": {}, "seeds": {}})
    for N in Ns:
        batch = TrialBatch.from_spec(replace(spec, N=N), n_validation, n_evaluation)
        table.metadata["seeds"][N] = batch.seeds
        for label, (name, cfg) in solvers.items():
            table.metadata["solvers"][label] = {"solver": name, "config": cfg.to_dict()}
            res = pssr_select(batch, make_solver(name, cfg), lam_grid, loss=loss, k=k,
                              threads=threads)
            table.add(solver=label, N=N, lam=res.lam, pssr=res.pssr,
                      mean_error=res.mean_error, n_eval=n_evaluation)
    return table


TIME_COLUMNS = ("solver", "seconds", "iterations", "reached", "final_primal")


def _timed(name, inst, cfg):
    t0 = time.perf_counter()
    rep = run_solver(name, inst, cfg)
    return rep, time.perf_counter() - t0


def time_to_target(inst, reference_cfg, contenders, reference_solver="iht", warmup=True):
    """Run the reference to its stopping rule, then time each contender until
    its primal value reaches the reference's final primal value.

    ``contenders`` is a list of (label, solver name, SolverConfig). Contenders
    stop only on the target or their own ``max_iters``. Each timed run is
    preceded by a short discarded warm-up run.
    """
    def warm(name, cfg):
        if warmup:
            run_solver(name, inst, replace(cfg, max_iters=min(cfg.max_iters, 5)))

    warm(reference_solver, reference_cfg)
    ref, secs = _timed(reference_solver, inst, reference_cfg)
    target = ref.final.primal
    table = Table(TIME_COLUMNS, metadata={
        "target_primal": target,
        "reference": {"solver": reference_solver, "status": ref.status,
                      "config": reference_cfg.to_dict()},
        "contenders": {},
    })
    table.add(solver="%s (reference)" % reference_solver, seconds=secs,
              iterations=ref.iterations, reached=True, final_primal=target)
    for label, name, cfg in contenders:
        cfg = replace(cfg, target_primal=target, stop_gap_tol=0.0, stop_rel_primal_tol=0.0)
        table.metadata["contenders"][label] = {"solver": name, "config": cfg.to_dict()}
        warm(name, cfg)
        rep, secs = _timed(name, inst, cfg)
        P = rep.final.primal
        table.add(solver=label, seconds=secs, iterations=rep.iterations,
                  reached=bool(P <= target), final_primal=P)
    return table
