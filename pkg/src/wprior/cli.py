"""Command-line experiment runner.

Exit codes: 0 every row passed, 2 configuration error, 3 some row failed its
tolerance, 4 runtime or Monte Carlo quality failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import estimators as est
from .config import ExperimentConfig, from_mapping, load_config
from .errors import ConfigError, WPriorError
from .evidence import EvidenceMethod
from .families import Dataset
from .mc import Budgets, StreamSpec
from .priors import default_domain, normalize, parse_prior
from .selection import density_of_models, kl_ball_volume, total_partition

log = logging.getLogger("wprior")

COLUMNS = ("experiment", "family", "prior", "theta0", "N", "estimate", "std_error", "tolerance", "pass")
EXIT_OK, EXIT_CONFIG, EXIT_FAILED, EXIT_RUNTIME = 0, 2, 3, 4


def _fmt_theta(theta) -> str:
    return " ".join(f"{v:g}" for v in theta)


def _row(experiment, cfg, prior, theta, N, estimate, se, tol, ok, **extra):
    row = {"experiment": experiment, "family": cfg.family, "prior": prior, "theta0": theta,
           "N": int(N), "estimate": float(estimate), "std_error": float(se),
           "tolerance": float(tol), "pass": bool(ok)}
    row.update(extra)
    return row


def _series(name, x, y, se):
    return {"series": name, "x": x, "y": float(y), "std_error": float(se)}


class Runner:
    def __init__(self, cfg: ExperimentConfig, jobs: int = 1):
        self.cfg = cfg
        self.jobs = jobs
        self.family = cfg.make_family()
        self.budgets = Budgets(cfg.n_outer, cfg.n_inner)
        self.method = EvidenceMethod(cfg.evidence)
        self.rows, self.series, self.tables = [], [], {}

    def stream(self, *path):
        return StreamSpec(self.cfg.master_seed, (self.cfg.kind,) + path)

    def K(self):
        return len(self.cfg.theta0[0]) if self.cfg.theta0 else self.family.k_min

    def run(self):
        getattr(self, f"_run_{self.cfg.kind}")()
        return self.rows

    # -- kinds ---------------------------------------------------------------
    def _run_multiplicity(self):
        cfg, fam = self.cfg, self.family
        for i, theta in enumerate(cfg.theta0):
            for N in cfg.N:
                prior = parse_prior(cfg.prior, fam, len(theta), N)
                s = self.stream(i, N)
                label = _fmt_theta(theta)
                direct = None
                if cfg.method in ("direct", "both"):
                    direct = est.multiplicity_direct(fam, theta, prior, N, self.budgets, s, self.method, self.jobs).log_m
                    tol = 3 * direct.std_error + 2.0 / N
                    self.rows.append(_row("multiplicity_direct", cfg, cfg.prior, label, N, direct.mean,
                                          direct.std_error, tol, abs(direct.mean) <= tol, target=0.0))
                    self.series.append(_series(f"direct theta0={label}", N, direct.mean, direct.std_error))
                if cfg.method in ("cv", "both"):
                    cv = est.multiplicity_cv(fam, theta, prior, N, self.budgets, s.child("cv"), self.method,
                                             self.jobs).log_m
                    if direct is None:
                        tol = 3 * cv.std_error + 5.0 / N
                        ok, target = abs(cv.mean) <= tol, 0.0
                    else:
                        tol = 3 * math.hypot(cv.std_error, direct.std_error) + 5.0 / N
                        ok, target = abs(cv.mean - direct.mean) <= tol, direct.mean
                    self.rows.append(_row("multiplicity_cv", cfg, cfg.prior, label, N, cv.mean, cv.std_error,
                                          tol, ok, target=target))
                    self.series.append(_series(f"cv theta0={label}", N, cv.mean, cv.std_error))

    def _run_entropy(self):
        cfg, fam = self.cfg, self.family
        sched = est.TemperSchedule(tuple(cfg.taus), cfg.realization)
        for i, theta in enumerate(cfg.theta0):
            for N in cfg.N:
                prior = parse_prior(cfg.prior, fam, len(theta), N)
                S = est.gibbs_entropy(fam, theta, prior, N, sched, self.budgets, self.stream(i, N),
                                      self.method, self.jobs)
                tol = 3 * S.std_error + 5.0 / N
                label = _fmt_theta(theta)
                self.rows.append(_row("gibbs_entropy", cfg, cfg.prior, label, N, S.mean, S.std_error, tol,
                                      abs(S.mean) <= tol, target=0.0, flags=list(S.flags)))
                self.series.append(_series(f"entropy theta0={label}", N, S.mean, S.std_error))

    def _run_coding_info(self):
        cfg, fam = self.cfg, self.family
        K = self.K()
        domain = default_domain(fam, K).scaled(cfg.domain_scale)
        for N in cfg.N:
            prior, log_n = normalize(parse_prior(cfg.prior, fam, K, N), domain)
            for i, theta in enumerate(cfg.theta0):
                H = est.coding_information(fam, theta, prior, N, self.budgets, self.stream(i, N), self.method,
                                           self.jobs)
                tol = 3 * H.std_error + 5.0 / N
                label = _fmt_theta(theta)
                self.rows.append(_row("coding_information", cfg, cfg.prior, label, N, H.mean, H.std_error, tol,
                                      abs(H.mean - log_n) <= tol, target=log_n))
                self.series.append(_series(f"coding N={N}", label, H.mean, H.std_error))

    def _run_optimality(self):
        cfg, fam = self.cfg, self.family
        K = self.K()
        for N in cfg.N:
            true = parse_prior(cfg.true_prior, fam, K, N)
            cands = {c: parse_prior(c, fam, K, N) for c in cfg.candidates}
            table = est.true_prior_optimality(fam, true, cands, N, self.budgets, self.stream(N), self.method,
                                              self.jobs)
            truth = f"~{cfg.true_prior}"
            for r in table:
                name = cfg.true_prior if r.name == "true" else r.name
                for col, val, gap in (("post", r.post, r.post_gap), ("pre", r.pre, r.pre_gap)):
                    tol = 3 * gap.std_error
                    self.rows.append(_row(f"optimality_{col}", cfg, name, truth, N, val.mean, val.std_error, tol,
                                          gap.mean <= tol, gap_to_true=gap.mean))
                self.series.append(_series(f"post_minus_pre N={N}", name, r.post_minus_pre.mean,
                                           r.post_minus_pre.std_error))

    def _run_density(self):
        cfg, fam = self.cfg, self.family
        for N in cfg.N:
            group = []
            for theta in cfg.theta0:
                for D in cfg.D:
                    vol = kl_ball_volume(fam, theta, N, D)
                    rho = density_of_models(fam, theta, N, D)
                    group.append((theta, D, rho * vol.volume, vol.partial))
            centre = float(np.mean([g[2] for g in group]))
            for theta, D, prod, partial in group:
                tol = 0.05 * centre
                self.rows.append(_row("density_times_volume", cfg, f"D={D:g}", _fmt_theta(theta), N, prod, 0.0,
                                      tol, abs(prod - centre) <= tol and not partial, partial=partial))
                self.series.append(_series(f"rho_V N={N} D={D:g}", _fmt_theta(theta), prod, 0.0))

    def _run_select(self):
        cfg, fam = self.cfg, self.family
        k_max = cfg.k_max
        if cfg.data is not None:
            data = Dataset.from_csv(cfg.data)
            rep = total_partition(fam, data, k_max, cfg.include_null, self.jobs)
            self.tables["select_table"] = _report_table(rep)
            self.rows.append(_row("select_argmax", cfg, "aic", "", data.n, rep.argmax_k, 0.0, 0.0, True,
                                  log_z=rep.log_z, tail_share=rep.tail_share))
            self.report = rep.to_dict()
            return
        for i, theta in enumerate(cfg.theta0):
            K_true = len(theta)
            for N in cfg.N:
                picks, mean_w = [], 0.0
                for r in range(cfg.replicates):
                    data = fam.sample(theta, N, self.stream(i, N, r))
                    rep = total_partition(fam, data, k_max)
                    picks.append(rep.argmax_k)
                    mean_w = mean_w + rep.weights / cfg.replicates
                p = float(np.mean(np.array(picks) == K_true))
                se = math.sqrt(p * (1 - p) / cfg.replicates)
                self.rows.append(_row("select_hit_rate", cfg, "aic", _fmt_theta(theta), N, p, se, 0.9, p >= 0.9))
                for K, w in zip(range(fam.k_min, fam.k_min + len(mean_w)), mean_w):
                    self.series.append(_series(f"mean_weight theta0={_fmt_theta(theta)} N={N}", K, w, 0.0))


def _report_table(rep):
    rows = [[r.K, r.log_z, r.g, r.aic, r.weight] for r in rep.rows]
    if rep.null_row is not None:
        r = rep.null_row
        rows.insert(0, [0, r.log_z, r.g, r.aic, ""])
    return (["K", "log_z", "G", "AIC", "weight"], rows)


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def write_outputs(runner: Runner, out_dir: str, status: int) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "results.csv"), COLUMNS, [[r[c] for c in COLUMNS] for r in runner.rows])
    _write_csv(os.path.join(out_dir, "series.csv"), ("series", "x", "y", "std_error"),
               [[s["series"], s["x"], s["y"], s["std_error"]] for s in runner.series])
    for name, (header, rows) in runner.tables.items():
        _write_csv(os.path.join(out_dir, f"{name}.csv"), header, rows)
    summary = {"config": runner.cfg.resolved(), "rows": runner.rows, "exit_code": status,
               "n_failed": sum(not r["pass"] for r in runner.rows)}
    if hasattr(runner, "report"):
        summary["report"] = runner.report
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, out_dir=None) -> int:
    runner = Runner(cfg, jobs)
    runner.run()
    status = EXIT_OK if all(r["pass"] for r in runner.rows) else EXIT_FAILED
    write_outputs(runner, out_dir or cfg.output, status)
    for r in runner.rows:
        mark = "PASS" if r["pass"] else "FAIL"
        print(f"{mark}  {r['experiment']:<22} {r['prior']:<16} theta0={r['theta0']:<8} N={r['N']:<6} "
              f"{r['estimate']: .5g} ± {r['std_error']:.3g}  (tol {r['tolerance']:.3g})")
    return status


# ---------------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="wprior", description="w-prior Bayesian experiments")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    v.add_argument("--seed", type=int)
    for name in ("run", "multiplicity", "entropy", "coding-info", "select", "optimality", "density"):
        sp = sub.add_parser(name, help="run the experiment in the config" if name == "run"
                            else f"run a {name} experiment")
        sp.add_argument("--config", required=name != "select")
        sp.add_argument("--seed", type=int, help="override master_seed")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--jobs", type=int, default=1)
        if name == "select":
            sp.add_argument("--data", help="dataset CSV (x or x,y columns)")
            sp.add_argument("--family", default="poly")
            sp.add_argument("--k-max", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        if not getattr(args, "data", None):
            raise ConfigError("select needs --config or --data", "data")
        cfg = from_mapping({"kind": "select", "family": args.family, "master_seed": 0, "data": args.data})
    kind = {"coding-info": "coding_info"}.get(args.command, args.command)
    if kind not in ("run", "validate") and cfg.kind != kind:
        raise ConfigError(f"config describes a {cfg.kind!r} experiment, not {kind!r}", "experiment.kind")
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "data", None) and args.config:
        overrides["data"] = args.data
    if getattr(args, "k_max", None) is not None:
        overrides["k_max"] = args.k_max
    if overrides:
        flat = cfg.resolved()
        flat.update(overrides)
        cfg = from_mapping(flat)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print("ok")
        for k, v in cfg.resolved().items():
            print(f"  {k} = {json.dumps(v)}")
        return EXIT_OK
    try:
        return run_experiment(cfg, args.jobs, args.out)
    except (WPriorError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
