"""Command-line entry point: ``orthoboot {run,sweep,diagnose,export-dgp}``.

Reports go to ``--out`` if given, else into ``$ORTHOBOOT_OUT_DIR`` if that is
set, else to standard output. Exit status is 0 on success, 2 for invalid
arguments, 3 for numerical failures and 4 for file errors.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dgp, diagnostics, report
from . import rng as rngmod
from .errors import OrthobootError
from .harness import (
    FULL_BOOTSTRAP,
    FULL_REPLICATES,
    ExperimentConfig,
    load_config,
    run_dimension_sweep,
    run_experiment,
)

OUT_DIR_ENV = "ORTHOBOOT_OUT_DIR"
_EXT = {"table": "txt", "csv": "csv", "json": "json"}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _experiment_flags(p: argparse.ArgumentParser, with_n_q: bool = True):
    p.add_argument("--config", help="INI file with [experiment] and optional [forest] sections")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--replicates", type=int)
    p.add_argument("--bootstrap", type=int, help="posterior draws per replicate")
    if with_n_q:
        p.add_argument("--n", type=int)
        p.add_argument("--q", type=int)
    p.add_argument("--dgp", choices=("plm", "kernel_model"))
    p.add_argument("--score", choices=("partialled_out", "aipw", "naive"))
    p.add_argument("--learner", choices=("forest", "kernel", "truth"))
    p.add_argument("--full", action="store_true",
                   help=f"full scale: {FULL_REPLICATES} replicates, {FULL_BOOTSTRAP} draws")
    p.add_argument("--workers", type=int, default=1, help="worker processes over replicates")
    p.add_argument("--out", help="output file")
    p.add_argument("--format", choices=report.FORMATS, default="table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orthoboot",
                                     description="Bayesian bootstrap under orthogonal scores")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one replication experiment")
    _experiment_flags(p)

    p = sub.add_parser("sweep", help="covariate-dimension sweep on the plm design")
    _experiment_flags(p, with_n_q=False)
    p.add_argument("--q", dest="q_grid", type=_int_list, default=[5, 20], help="e.g. 5,6,8,10,20")
    p.add_argument("--n", dest="n_grid", type=_int_list, default=[250, 500], help="e.g. 250,500,1000")

    p = sub.add_parser("diagnose", help="orthogonality check along a Gateaux path")
    p.add_argument("--score", required=True, choices=sorted(diagnostics.ANALYTIC))
    p.add_argument("--evaluator", choices=("analytic", "monte_carlo"), default="analytic")
    p.add_argument("--mc", type=int, default=200_000, help="Monte Carlo observations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rate-grid", type=_int_list, default=None,
                   help="also print sqrt(n) * int |f''| for these n")
    p.add_argument("--probe", action="store_true",
                   help="also run the coverage probe against the naive score")
    p.add_argument("--n", type=int, default=1000, help="sample size for --probe")
    p.add_argument("--replicates", type=int, default=100, help="replicates for --probe")
    p.add_argument("--bootstrap", type=int, default=200, help="draws for --probe")
    p.add_argument("--out", help="write the curve (t, f, stderr) here")

    p = sub.add_parser("export-dgp", help="write one simulated dataset as CSV")
    p.add_argument("--dgp", choices=("plm", "kernel_model"), default="plm")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--q", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output file")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    for flag, key in (("seed", "master_seed"), ("replicates", "replicates"),
                      ("bootstrap", "bootstrap"), ("n", "n"), ("q", "q"),
                      ("dgp", "dgp"), ("score", "score"), ("learner", "learner")):
        v = getattr(args, flag, None)
        if v is not None:
            changes[key] = v
    if args.full:
        changes.setdefault("replicates", FULL_REPLICATES)
        changes.setdefault("bootstrap", FULL_BOOTSTRAP)
    if changes.get("dgp") == "kernel_model" and "learner" not in changes:
        changes["learner"] = "kernel"
    return cfg.replace(**changes) if changes else cfg


def _destination(args, cfg_out: str | None, stem: str, ext: str) -> Path | None:
    if args.out:
        return Path(args.out)
    if cfg_out:
        return Path(cfg_out)
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env) / f"{stem}.{ext}"
    return None


def _deliver(text: str, dest: Path | None, writer):
    if dest is None:
        sys.stdout.write(text)
    else:
        writer(dest)
        print(f"wrote {dest}", file=sys.stderr)


def cmd_run(args) -> int:
    cfg = _config(args)
    rep = run_experiment(cfg, workers=args.workers)
    dest = _destination(args, cfg.output_path, f"{cfg.dgp}_{cfg.score}_n{cfg.n}_seed{cfg.master_seed}",
                        _EXT[args.format])
    text = report.render(rep, args.format)
    _deliver(text, dest, lambda p: report.emit_report(rep, args.format, p))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    cells = run_dimension_sweep(cfg, args.q_grid, args.n_grid, workers=args.workers)
    dest = _destination(args, cfg.output_path, f"sweep_seed{cfg.master_seed}", _EXT[args.format])
    text = report.render_sweep(cells, args.format)
    _deliver(text, dest, lambda p: report.emit_sweep(cells, args.format, p))
    return 0


def _default_perturbation(score: str, h0):
    if score == "aipw":
        return diagnostics.shifted(h0, mu1=lambda X: 0.3 * np.sin(X[:, 0]), mu0=0.2,
                                   e=lambda X: 0.05 * np.cos(X[:, 1]))
    return diagnostics.shifted(h0, k_y=1.0, e=0.1)


def cmd_diagnose(args) -> int:
    h0 = diagnostics.truth_nuisance("plm")
    path = diagnostics.GateauxPath(args.score, _default_perturbation(args.score, h0), h0=h0,
                                   evaluator=args.evaluator, mc=args.mc, seed=args.seed)
    r = diagnostics.orthogonality_check(path)
    print(f"score           {r.score} ({r.evaluator})")
    print(f"f(0)            {r.f0:.6g} (se {r.f0_se:.3g})")
    print(f"f'(0)           {r.fprime0:.6g} (se {r.fprime0_se:.3g})")
    print(f"c in f ~ c t^2  {r.quadratic_coef:.6g} (max residual {r.quadratic_fit_residual:.3g})")
    print(f"orthogonal      {'yes' if r.orthogonal else 'no'}")
    if args.rate_grid:
        if args.evaluator != "analytic":
            path = diagnostics.GateauxPath(args.score, path.h, h0=h0, seed=args.seed)
        for n, v in diagnostics.rate_functional(path, args.rate_grid):
            print(f"n={n:<10d} sqrt(n) int|f''| = {v:.6g}")
    if args.probe:
        print("score           nuisance  coverage    bias   n*post_var")
        for row in diagnostics.nonortho_probe(n=args.n, replicates=args.replicates,
                                              bootstrap=args.bootstrap, master_seed=args.seed):
            print(f"{row.score:<15} {row.nuisance:<8} {row.coverage_pct:9.2f} "
                  f"{row.bias:7.3f} {row.post_var_times_n:12.3f}")
    dest = _destination(args, None, f"curve_{args.score}", "csv") if args.out else None
    if dest is not None:
        diagnostics.write_curve(r, dest)
        print(f"wrote {dest}", file=sys.stderr)
    return 0


def cmd_export_dgp(args) -> int:
    # the same dataset replicate 0 of an experiment with this master seed sees
    g = rngmod.stream(rngmod.derive_key(args.seed, 0), rngmod.LANE_DATA)
    if args.dgp == "plm":
        data = dgp.simulate_plm(dgp.PlmConfig(args.n, args.q), g)
    else:
        data = dgp.simulate_kernel_model(args.n, g)
    dest = _destination(args, None, f"{args.dgp}_n{args.n}_seed{args.seed}", "csv")
    _deliver(dgp.dataset_to_csv(data), dest, lambda p: dgp.write_dataset(data, p))
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "diagnose": cmd_diagnose, "export-dgp": cmd_export_dgp}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except OrthobootError as exc:
        print(f"orthoboot: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
