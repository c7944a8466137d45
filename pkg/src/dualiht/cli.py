"""Command-line front end: synth, train, bench and certify.

Exit codes: 0 success, 2 configuration or input error, 3 solver abort,
4 certification failure.
"""
import argparse
import datetime
import json
import os
import sys
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .data import (
    Dataset,
    ParseError,
    SyntheticSpec,
    generate_synthetic,
    load_libsvm,
    write_libsvm,
    write_sidecar,
)
from .losses import make_loss
from .metrics import pssr_sweep, time_to_target
from .objective import certify_saddle_point, duality_gap
from .solvers import ConfigError, SolverConfig, run_solver

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_CERT = 0, 2, 3, 4
SCHEMA_VERSION = 1
OUT_ENV = "DUALIHT_OUT"
SOLVER_FIELDS = {f.name for f in fields(SolverConfig)}

SolverId = Literal["diht", "sdiht", "iht", "htp"]


class ExperimentConfig(BaseModel):
    """Flat experiment description; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = SCHEMA_VERSION
    # data
    source: Literal["synthetic", "libsvm"] = "synthetic"
    libsvm_path: Optional[str] = None
    d: Optional[int] = Field(None, ge=1)
    k_bar: Optional[int] = Field(None, ge=0)
    N: Optional[int] = Field(None, ge=1)
    noise_sd: float = Field(1.0, ge=0)
    off_diag: float = Field(0.25, ge=0, lt=1)
    task: Literal["regression", "classification"] = "regression"
    data_seed: int = 0
    normalize: bool = False
    # problem
    loss: Literal["squared", "huber", "hinge"] = "squared"
    gamma: float = Field(0.25, gt=0)
    lam: float = Field(..., gt=0)
    k: int = Field(..., ge=1)
    # solver
    solver: SolverId = "diht"
    max_iters: int = Field(100_000, ge=0)
    step_schedule: Literal["theorem_mu", "constant", "inv_t", "lipschitz"] = "theorem_mu"
    eta0: float = Field(1.0, ge=0)
    stop_gap_tol: float = Field(0.0, ge=0)
    stop_rel_primal_tol: float = Field(1e-4, ge=0)
    m: int = Field(1, ge=1)
    record_every: int = Field(1, ge=1)
    resync_every: int = Field(1000, ge=1)
    divergence_limit: float = Field(1e12, gt=0)
    seed: int = 0
    # outputs and certification
    out_dir: Optional[str] = None
    certify_tol: float = Field(1e-6, ge=0)
    # benchmarks
    bench: Optional[Literal["pssr", "time", "both"]] = None
    Ns: List[int] = Field(default_factory=list)
    solvers: List[SolverId] = Field(default_factory=list)
    lam_grid: List[float] = Field(default_factory=list)
    n_validation: int = Field(0, ge=0)
    n_evaluation: int = Field(1, ge=1)
    reference_solver: SolverId = "iht"
    solver_params: Dict[str, Dict[str, Any]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _cross_checks(self):
        errs = []
        if self.source == "synthetic":
            missing = [n for n in ("d", "k_bar", "N") if getattr(self, n) is None]
            if missing:
                errs.append("synthetic source needs %s" % ", ".join(missing))
            elif self.k_bar > self.d:
                errs.append("k_bar=%d exceeds d=%d" % (self.k_bar, self.d))
            if self.d is not None and self.k > self.d:
                errs.append("k=%d exceeds d=%d" % (self.k, self.d))
        else:
            if not self.libsvm_path:
                errs.append("libsvm source needs libsvm_path")
            elif not Path(self.libsvm_path).is_file():
                errs.append("libsvm_path %r does not exist" % self.libsvm_path)
        for key, params in self.solver_params.items():
            if key not in ("diht", "sdiht", "iht", "htp", "reference"):
                errs.append("solver_params key %r is not a solver id or 'reference'" % key)
            bad = sorted(set(params) - SOLVER_FIELDS)
            if bad:
                errs.append("solver_params[%r] has unknown keys %s" % (key, bad))
                continue
            try:
                self.solver_config(key)
            except (ConfigError, TypeError, ValueError) as e:
                errs.append("solver_params[%r]: %s" % (key, e))
        if self.bench in ("pssr", "both"):
            if self.source != "synthetic":
                errs.append("pssr bench needs a synthetic source")
            if not self.Ns:
                errs.append("pssr bench needs Ns")
            if not self.lam_grid:
                errs.append("pssr bench needs lam_grid")
        if self.bench and not self.solvers:
            errs.append("bench needs a nonempty solvers list")
        if errs:
            raise ValueError("; ".join(errs))
        return self

    def solver_config(self, solver=None):
        base = {n: getattr(self, n) for n in SOLVER_FIELDS if hasattr(self, n)}
        base["seed"] = self.seed
        if solver is not None:
            base.update(self.solver_params.get(solver, {}))
        return SolverConfig(**base)

    def synthetic_spec(self, N=None):
        return SyntheticSpec(d=self.d, k_bar=self.k_bar, N=N or self.N, noise_sd=self.noise_sd,
                             off_diag=self.off_diag, seed=self.data_seed, task=self.task)


class CliError(Exception):
    def __init__(self, msg, code=EXIT_CONFIG):
        super().__init__(msg)
        self.code = code


def _format_validation(err):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<config>"
        lines.append("  - %s: %s" % (loc, e["msg"]))
    return "invalid configuration (%d problem%s):\n%s" % (
        len(lines), "" if len(lines) == 1 else "s", "\n".join(lines))


def resolve_config_path(name):
    p = Path(name)
    if p.is_file():
        return p
    bundled = resources.files("dualiht") / "configs" / (p.name if p.suffix else p.name + ".json")
    if bundled.is_file():
        return Path(str(bundled))
    raise CliError("config file %r not found (bundled configs: %s)"
                   % (name, ", ".join(bundled_configs())))


def bundled_configs():
    root = resources.files("dualiht") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(path, overrides=None):
    path = resolve_config_path(path)
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise CliError("%s: not valid JSON: %s" % (path, e)) from None
    if not isinstance(raw, dict):
        raise CliError("%s: top level must be a JSON object" % path)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig(**raw)
    except ValidationError as e:
        raise CliError(_format_validation(e)) from None


def build_dataset(cfg):
    if cfg.source == "synthetic":
        ds = generate_synthetic(cfg.synthetic_spec())
    else:
        try:
            X, y, _ = load_libsvm(cfg.libsvm_path, d=cfg.d,
                                  classification=cfg.loss != "squared")
        except (ParseError, ValueError, OSError) as e:
            raise CliError(str(e)) from None
        ds = Dataset(X, y)
    if cfg.normalize:
        ds = ds.normalized()
    if cfg.k > ds.d:
        raise CliError("k=%d exceeds d=%d of the loaded data" % (cfg.k, ds.d))
    return ds


def build_instance(cfg):
    ds = build_dataset(cfg)
    try:
        return ds.to_instance(make_loss(cfg.loss, cfg.gamma), cfg.lam, cfg.k), ds
    except ValueError as e:
        raise CliError(str(e)) from None


def out_dir(cli_value, cfg=None):
    d = cli_value or (cfg.out_dir if cfg is not None else None) \
        or os.environ.get(OUT_ENV) or "dualiht_out"
    p = Path(d)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError("cannot create output directory %s: %s" % (p, e)) from None
    return p


def _timestamps():
    return {"created": datetime.datetime.now(datetime.timezone.utc).isoformat()}


def write_model(path, w):
    with open(path, "w") as fh:
        for i in np.flatnonzero(w):
            fh.write("%d:%r\n" % (i, float(w[i])))


def read_model(path, d):
    w = np.zeros(d)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            idx, sep, val = line.partition(":")
            try:
                i, v = int(idx), float(val)
            except ValueError:
                raise CliError("%s:%d: expected index:value, got %r" % (path, lineno, line)) from None
            if not sep or not 0 <= i < d:
                raise CliError("%s:%d: index %s outside [0, %d) (dimension mismatch)"
                               % (path, lineno, idx, d))
            w[i] = v
    return w


def write_dual(path, alpha):
    with open(path, "w") as fh:
        fh.writelines("%r\n" % float(a) for a in alpha)


def read_dual(path, N):
    try:
        alpha = np.loadtxt(path, dtype=np.float64, ndmin=1)
    except ValueError as e:
        raise CliError("%s: %s" % (path, e)) from None
    if alpha.size != N:
        raise CliError("%s has %d dual values but the instance has N=%d samples "
                       "(dimension mismatch)" % (path, alpha.size, N))
    return alpha


# commands

def cmd_synth(args):
    if args.config:
        cfg = load_config(args.config, {"data_seed": args.seed})
        spec = cfg.synthetic_spec()
    else:
        missing = [n for n in ("d", "k_bar", "N") if getattr(args, n) is None]
        if missing:
            raise CliError("synth needs --%s (or --config)" % ", --".join(
                m.replace("_", "-") for m in missing))
        try:
            spec = SyntheticSpec(d=args.d, k_bar=args.k_bar, N=args.N, noise_sd=args.noise_sd,
                                 off_diag=args.off_diag, seed=args.seed or 0, task=args.task)
        except ValueError as e:
            raise CliError("invalid synthetic spec: %s" % e) from None
    ds = generate_synthetic(spec)
    out = out_dir(args.out)
    data_path, side_path = out / (args.name + ".svm"), out / (args.name + ".json")
    try:
        write_libsvm(data_path, ds.X, ds.y)
        write_sidecar(side_path, ds)
    except OSError as e:
        raise CliError("cannot write %s: %s" % (e.filename, e.strerror)) from None
    print("wrote %s and %s (N=%d, d=%d)" % (data_path, side_path, ds.N, ds.d))
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config, {"seed": args.seed})
    inst, _ = build_instance(cfg)
    try:
        rep = run_solver(cfg.solver, inst, cfg.solver_config(cfg.solver))
    except ConfigError as e:
        raise CliError(str(e)) from None
    out = out_dir(args.out, cfg)
    rep.metadata.update({"threads": args.threads, "deterministic": args.deterministic})
    doc = rep.to_dict()
    doc["experiment_config"] = cfg.model_dump()
    doc["version"] = __version__
    doc["timestamps"] = _timestamps()
    rep.to_csv(out / "trace.csv")
    write_model(out / "model.txt", rep.primal.w)
    write_dual(out / "dual.txt", rep.dual.alpha)
    (out / "report.json").write_text(json.dumps(doc, indent=2))
    f = rep.final
    print("%s: status=%s iterations=%d primal=%.10g dual=%.10g gap=%.3e nnz=%d"
          % (cfg.solver, rep.status, rep.iterations, f.primal, f.dual, f.gap, f.nnz))
    print("outputs in %s" % out)
    if rep.aborted:
        print("solver aborted: %s" % rep.message, file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_bench(args):
    cfg = load_config(args.config, {"seed": args.seed})
    if not cfg.bench:
        raise CliError("config has no 'bench' entry (pssr, time or both)")
    threads = 1 if args.deterministic else args.threads
    out = out_dir(args.out, cfg)
    loss = make_loss(cfg.loss, cfg.gamma)
    stamp = {"timestamps": _timestamps(), "experiment_config": cfg.model_dump(),
             "threads": threads, "deterministic": args.deterministic}
    try:
        if cfg.bench in ("pssr", "both"):
            solvers = {s: (s, cfg.solver_config(s)) for s in cfg.solvers}
            tab = pssr_sweep(cfg.synthetic_spec(), cfg.Ns, solvers, cfg.lam_grid,
                             cfg.n_validation, cfg.n_evaluation, loss=loss, k=cfg.k,
                             threads=threads)
            tab.metadata.update(stamp)
            tab.to_csv(out / "bench_pssr.csv")
            tab.to_json(out / "bench_pssr.json")
            print(tab.to_csv(), end="")
        if cfg.bench in ("time", "both"):
            inst, _ = build_instance(cfg)
            contenders = [(s, s, cfg.solver_config(s)) for s in cfg.solvers]
            ref_cfg = cfg.solver_config("reference")
            tab = time_to_target(inst, ref_cfg, contenders, reference_solver=cfg.reference_solver)
            tab.metadata.update(stamp)
            tab.to_csv(out / "bench_time.csv")
            tab.to_json(out / "bench_time.json")
            print(tab.to_csv(), end="")
    except ConfigError as e:
        raise CliError(str(e)) from None
    print("outputs in %s" % out)
    return EXIT_OK


def cmd_certify(args):
    cfg = load_config(args.config)
    inst, _ = build_instance(cfg)
    tol = cfg.certify_tol if args.tol is None else args.tol
    w = read_model(args.model, inst.d)
    alpha = read_dual(args.dual, inst.N)
    if np.count_nonzero(w) > inst.k:
        raise CliError("model has %d nonzeros, more than k=%d" % (np.count_nonzero(w), inst.k))
    try:
        cert = certify_saddle_point(inst, w, alpha, tol=tol)
        gap = duality_gap(inst, w, alpha)
    except ValueError as e:
        raise CliError(str(e)) from None
    doc = cert.to_dict()
    doc.update({"duality_gap": gap, "tol": tol, "model": str(args.model),
                "dual": str(args.dual), "timestamps": _timestamps()})
    out = out_dir(args.out, cfg)
    (out / "certificate.json").write_text(json.dumps(doc, indent=2))
    mark = {True: "pass", False: "FAIL"}
    print("tolerance %g" % tol)
    print("(b) dual in loss subdifferential: %s  residual %.3e (worst sample %d)"
          % (mark[cert.b_ok], cert.b_residual, cert.b_worst_index))
    print("(c) w = H_k(w~(alpha)):           %s  residual %.3e" % (mark[cert.c_ok], cert.c_residual))
    print("remark form:                      %s  residual %.3e / %.3e"
          % (mark[cert.remark_ok], cert.remark_support_residual, cert.remark_margin_residual))
    print("duality gap:                      %s  %.3e" % (mark[cert.gap_ok], gap))
    print("global optimality: %s" % cert.primal_optimal)
    print("certificate: %s" % ("PASS" if cert.passed else "FAIL"))
    return EXIT_OK if cert.passed else EXIT_CERT


def build_parser():
    p = argparse.ArgumentParser(prog="dualiht",
                                description="Dual iterative hard thresholding toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="JSON config file or bundled config name")
        sp.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        sp.add_argument("--out", default=None,
                        help="output directory (default: $%s or ./dualiht_out)" % OUT_ENV)
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads for replicate-level parallelism")
        sp.add_argument("--deterministic", action="store_true",
                        help="force single-threaded, fixed-order execution")

    s = sub.add_parser("synth", help="write a synthetic dataset and its JSON sidecar")
    common(s, config_required=False)
    s.add_argument("--d", type=int)
    s.add_argument("--k-bar", dest="k_bar", type=int)
    s.add_argument("--N", type=int)
    s.add_argument("--noise-sd", dest="noise_sd", type=float, default=1.0)
    s.add_argument("--off-diag", dest="off_diag", type=float, default=0.25)
    s.add_argument("--task", choices=["regression", "classification"], default="regression")
    s.add_argument("--name", default="synth", help="file stem for the outputs")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="run one solver and write trace, model and report")
    common(t)
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="support-recovery sweep and/or time-to-target table")
    common(b)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("certify", help="check a (model, dual) pair for a sparse saddle point")
    common(c)
    c.add_argument("--model", required=True, help="model file, one index:value per line")
    c.add_argument("--dual", required=True, help="dual file, one value per line")
    c.add_argument("--tol", type=float, default=None, help="override certify_tol")
    c.set_defaults(func=cmd_certify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print("error: %s" % e, file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
