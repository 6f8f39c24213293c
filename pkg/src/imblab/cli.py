"""Command-line front end for the simulation pipeline.

Exit codes: 0 success, 1 usage error, 2 I/O or data error.  Every
subcommand prints its resolved configuration (and seed, where one is
used) before doing any work; there is no wall-clock seeding anywhere.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .datagen import get_scenario, load_scenarios, solve_delta_mu
from .harness import (DEFAULT_ITERATIONS, IngestError, RunPlan, aggregate_run,
                      default_corrections, ingest_external, iteration_datasets,
                      plan_from_dict, read_dataset_csv, run_plan,
                      write_dataset_csv)
from .learners import (LEARNER_KINDS, LearnerSpec, default_learner_specs,
                       predict, train)
from .metrics import (cap_slope_for_report, compute_metric_set, flexible_curve,
                      recalibrate)
from .resample import CORRECTION_KINDS, CorrectionSpec, apply_correction
from .rng import STAGE_CORRECTION, STAGE_LEARNER, derive_rng


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _echo_config(args: argparse.Namespace, skip: tuple[str, ...] = ("func",)) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    print(f"config: {json.dumps(resolved, default=str)}")


def _cmd_solve_delta(args) -> int:
    _echo_config(args)
    value = solve_delta_mu(args.p, args.n_cov, args.rho, args.delta_sigma, args.c)
    print(f"{value:.6f}")
    return 0


def _cmd_generate(args) -> int:
    _echo_config(args)
    scenario = get_scenario(args.scenario)
    train_ds, val_ds = iteration_datasets(scenario, args.iteration, args.seed)
    write_dataset_csv(f"{args.out_prefix}_train.csv", train_ds)
    write_dataset_csv(f"{args.out_prefix}_validation.csv", val_ds)
    print(f"wrote {args.out_prefix}_train.csv ({train_ds.n} rows, "
          f"{train_ds.n_events} events)")
    print(f"wrote {args.out_prefix}_validation.csv ({val_ds.n} rows, "
          f"{val_ds.n_events} events)")
    return 0


def _correction_spec(args) -> CorrectionSpec:
    return CorrectionSpec(kind=args.correction, k=args.k, k1=args.k1, k2=args.k2,
                          target_event_fraction=args.target)


def _cmd_correct(args) -> int:
    _echo_config(args)
    ds, _ = read_dataset_csv(args.input, args.outcome_col)
    rng = derive_rng((args.seed,), STAGE_CORRECTION,
                     CORRECTION_KINDS.index(args.correction))
    outcome = apply_correction(_correction_spec(args), ds, rng)
    write_dataset_csv(args.out, outcome.dataset, outcome_column=args.outcome_col)
    status = "applied" if outcome.applied else f"passthrough ({outcome.note})"
    print(f"{args.correction} {status}: {ds.n} -> {outcome.dataset.n} rows, "
          f"{outcome.dataset.n_events} events; wrote {args.out}")
    return 0


def _cmd_train_eval(args) -> int:
    _echo_config(args)
    train_ds, _ = read_dataset_csv(args.train, args.outcome_col)
    val_ds, _ = read_dataset_csv(args.validation, args.outcome_col)
    corr_rng = derive_rng((args.seed,), STAGE_CORRECTION,
                          CORRECTION_KINDS.index(args.correction))
    outcome = apply_correction(_correction_spec(args), train_ds, corr_rng)
    learner_rng = derive_rng((args.seed,), STAGE_LEARNER)
    model = train(LearnerSpec(kind=args.learner), outcome.dataset, learner_rng)
    risks = predict(model, val_ds.features)
    raw = compute_metric_set(risks, val_ds.outcome)
    recal = recalibrate(risks, val_ds.outcome)
    recal_metrics = compute_metric_set(recal.risks, val_ds.outcome)
    report = {
        "correction_applied": outcome.applied,
        "learner_diagnostics": {k: v for k, v in model.diagnostics.items()
                                if k != "loss_trace"},
        "raw": raw.as_dict(),
        "recalibrated": recal_metrics.as_dict(),
        "recalibration_beta0": recal.beta0,
    }
    print(json.dumps(report, indent=2))
    return 0


def _build_plan(args) -> RunPlan:
    if args.plan:
        data = json.loads(Path(args.plan).read_text())
        if args.iterations is not None:
            data["iterations"] = args.iterations
        if args.seed is not None:
            data["base_seed"] = args.seed
        data["out_dir"] = args.out
        return plan_from_dict(data)
    if args.seed is None:
        raise UsageError("--seed is required when no plan file is given")
    scenario_ids = ([int(s) for s in args.scenario] if args.scenario
                    else [s.id for s in load_scenarios()])
    corrections = ([CorrectionSpec(kind=k) for k in args.corrections]
                   if args.corrections else default_corrections())
    learners = ([LearnerSpec(kind=k) for k in args.learners]
                if args.learners else default_learner_specs())
    return RunPlan(scenarios=[get_scenario(sid) for sid in scenario_ids],
                   corrections=corrections, learners=learners,
                   iterations=args.iterations or DEFAULT_ITERATIONS,
                   base_seed=args.seed, out_dir=args.out)


def _cmd_simulate(args) -> int:
    plan = _build_plan(args)
    _echo_config(args)
    print(f"plan: {len(plan.scenarios)} scenario(s) x {plan.iterations} iteration(s) "
          f"x {len(plan.corrections)} correction(s) x {len(plan.learners)} learner(s), "
          f"seed {plan.base_seed}, output {plan.out_dir}")
    manifest = run_plan(plan, jobs=args.jobs, resume=args.resume,
                        stop_after=args.stop_after, progress=True)
    state = "complete" if manifest["complete"] else "checkpointed"
    print(f"run {state}; manifest at {Path(plan.out_dir) / 'manifest.json'}")
    return 0


def _cmd_aggregate(args) -> int:
    _echo_config(args)
    rows = aggregate_run(args.run, n_bootstrap=args.bootstrap)
    print(f"wrote {Path(args.run) / 'aggregate.csv'} ({len(rows)} rows)")
    if args.summary:
        print(f"{'cell':<42}{'metric':<15}{'median':>10}{'mc_error':>10}{'miss':>6}")
        for row in rows:
            if row.median is None:
                shown = ""
            elif row.metric == "cal_slope":
                capped = cap_slope_for_report(row.median)
                shown = f">{capped:.2f}" if capped < row.median else f"{row.median:.4f}"
            else:
                shown = f"{row.median:.4f}"
            cell = f"{row.scenario}/{row.correction}/{row.learner}/{row.phase}"
            err = "" if row.mc_error is None else f"{row.mc_error:.4f}"
            print(f"{cell:<42}{row.metric:<15}{shown:>10}{err:>10}{row.n_missing:>6}")
    return 0


def _cmd_curves(args) -> int:
    _echo_config(args)
    run_dir = Path(args.run)
    plan = plan_from_dict(json.loads((run_dir / "plan.json").read_text()))
    try:
        scenario_id, correction, learner = args.cell.split(",")
        scenario = next(s for s in plan.scenarios if s.id == int(scenario_id))
        corr_spec = next(c for c in plan.corrections if c.kind == correction)
        learner_spec = next(l for l in plan.learners if l.kind == learner)
    except (ValueError, StopIteration):
        raise UsageError(
            f"--cell must be scenario,correction,learner drawn from the plan; "
            f"got {args.cell!r}") from None
    train_ds, val_ds = iteration_datasets(scenario, args.iteration, plan.base_seed)
    entropy = (plan.base_seed, scenario.base_seed)
    corr_rng = derive_rng(entropy, args.iteration, STAGE_CORRECTION,
                          CORRECTION_KINDS.index(correction))
    outcome = apply_correction(corr_spec, train_ds, corr_rng)
    learner_rng = derive_rng(entropy, args.iteration, STAGE_LEARNER,
                             LEARNER_KINDS.index(learner))
    model = train(learner_spec, outcome.dataset, learner_rng)
    risks = predict(model, val_ds.features)
    if args.phase == "recalibrated":
        risks = recalibrate(risks, val_ds.outcome).risks
    curve = flexible_curve(risks, val_ds.outcome, span=args.span,
                           degree=args.degree, grid_size=args.grid_size)
    with open(args.out, "w", newline="") as fh:
        fh.write("grid,fitted\n")
        for g, f in zip(curve.grid, curve.fitted):
            fh.write(f"{float(g)!r},{float(f)!r}\n")
    print(f"wrote {args.out} ({curve.grid.size} points)")
    return 0


def _cmd_ingest(args) -> int:
    _echo_config(args)
    train_ds, val_ds = ingest_external(args.csv, args.outcome_col, args.split,
                                       args.seed, standardize=args.standardize)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(out / "train.csv", train_ds, outcome_column=args.outcome_col)
    write_dataset_csv(out / "validation.csv", val_ds, outcome_column=args.outcome_col)
    print(f"wrote {out / 'train.csv'} ({train_ds.n} rows) and "
          f"{out / 'validation.csv'} ({val_ds.n} rows)")
    return 0


def _add_correction_flags(sub, default="Control"):
    sub.add_argument("--correction", choices=CORRECTION_KINDS, default=default)
    sub.add_argument("--k", type=int, default=5)
    sub.add_argument("--k1", type=int, default=5)
    sub.add_argument("--k2", type=int, default=3)
    sub.add_argument("--target", type=float, default=0.5)


def build_parser() -> _Parser:
    parser = _Parser(prog="imblab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve-delta", help="mean shift for a target concordance")
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--n-cov", type=int, required=True, dest="n_cov")
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--delta-sigma", type=float, required=True, dest="delta_sigma")
    s.add_argument("--c", type=float, required=True)
    s.set_defaults(func=_cmd_solve_delta)

    s = sub.add_parser("generate", help="dump one iteration's datasets as CSV")
    s.add_argument("--scenario", type=int, required=True)
    s.add_argument("--iteration", type=int, default=0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-prefix", required=True, dest="out_prefix")
    s.set_defaults(func=_cmd_generate)

    s = sub.add_parser("correct", help="apply one imbalance correction to a CSV")
    s.add_argument("--input", required=True)
    s.add_argument("--outcome-col", default="y", dest="outcome_col")
    _add_correction_flags(s, default="SMOTE")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_correct)

    s = sub.add_parser("train-eval", help="single correction x learner cell on CSVs")
    s.add_argument("--train", required=True)
    s.add_argument("--validation", required=True)
    s.add_argument("--outcome-col", default="y", dest="outcome_col")
    _add_correction_flags(s)
    s.add_argument("--learner", choices=LEARNER_KINDS, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=_cmd_train_eval)

    s = sub.add_parser("simulate", help="run a full factorial plan")
    s.add_argument("--plan", help="plan.json path (overrides grid flags)")
    s.add_argument("--scenario", nargs="*", help="bundled scenario ids")
    s.add_argument("--corrections", nargs="*", choices=CORRECTION_KINDS)
    s.add_argument("--learners", nargs="*", choices=LEARNER_KINDS)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--stop-after", type=int, dest="stop_after",
                   help="checkpoint-exit after this many units")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("aggregate", help="median + Monte Carlo error per cell")
    s.add_argument("--run", required=True, help="finished run directory")
    s.add_argument("--bootstrap", type=int, default=1000)
    s.add_argument("--summary", action="store_true", help="print a readable table")
    s.set_defaults(func=_cmd_aggregate)

    s = sub.add_parser("curves", help="flexible calibration curve for one cell")
    s.add_argument("--run", required=True, help="run directory with plan.json")
    s.add_argument("--cell", required=True, help="scenario,correction,learner")
    s.add_argument("--iteration", type=int, default=0)
    s.add_argument("--phase", choices=("raw", "recalibrated"), default="raw")
    s.add_argument("--span", type=float, default=0.75)
    s.add_argument("--degree", type=int, default=2)
    s.add_argument("--grid-size", type=int, default=100, dest="grid_size")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_curves)

    s = sub.add_parser("ingest", help="split an external CSV into train/validation")
    s.add_argument("--csv", required=True)
    s.add_argument("--outcome-col", required=True, dest="outcome_col")
    s.add_argument("--split", type=float, default=0.5)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--standardize", action="store_true")
    s.add_argument("--out-dir", required=True, dest="out_dir")
    s.set_defaults(func=_cmd_ingest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
