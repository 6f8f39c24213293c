"""Experiment orchestration: scenario x iteration x correction x learner.

Every (scenario, iteration) unit derives its own random streams, so units
can run in any order on any number of workers and still produce
bit-identical sorted output.  Failures follow a strict policy: a failed
correction passes the uncorrected data through; a failed learner yields
rows with the missing flag set.  Nothing raises out of an iteration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from collections import Counter
from dataclasses import asdict, dataclass
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (Dataset, ScenarioConfig, model_from_scenario,
                      sample_dataset, sample_event_count)
from .learners import LEARNER_KINDS, LearnerError, LearnerSpec, predict, train
from .learners.base import TrainedModel
from .metrics import (METRIC_NAMES, MetricSet, MetricUndefined,
                      PredictionRecord, compute_metric_set, recalibrate)
from .resample import (CORRECTION_KINDS, CorrectionOutcome, CorrectionSpec,
                       apply_correction)
from .rng import (STAGE_BOOTSTRAP, STAGE_CORRECTION, STAGE_LEARNER, STAGE_SPLIT,
                  STAGE_TRAIN_EVENTS, STAGE_TRAIN_FEATURES, STAGE_VAL_EVENTS,
                  STAGE_VAL_FEATURES, derive_rng)

PHASES = ("raw", "recalibrated")

RESULT_FIELDS = ("scenario", "iteration", "correction", "learner", "phase",
                 "c", "brier", "cal_intercept", "cal_slope", "missing",
                 "correction_applied", "warnings", "ms_elapsed")

AGGREGATE_FIELDS = ("scenario", "correction", "learner", "phase", "metric",
                    "median", "mc_error", "n_missing")

DEFAULT_ITERATIONS = 200


class IngestError(ValueError):
    """External CSV data cannot be used as-is."""


@dataclass
class RunPlan:
    scenarios: list[ScenarioConfig]
    corrections: list[CorrectionSpec]
    learners: list[LearnerSpec]
    iterations: int
    base_seed: int
    out_dir: str

    def __post_init__(self):
        if not self.scenarios or not self.corrections or not self.learners:
            raise ValueError("plan needs at least one scenario, correction and learner")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def default_corrections() -> list[CorrectionSpec]:
    return [CorrectionSpec(kind=kind) for kind in CORRECTION_KINDS]


@dataclass
class ResultRow:
    scenario: int
    iteration: int
    correction: str
    learner: str
    phase: str
    c: float | None
    brier: float | None
    cal_intercept: float | None
    cal_slope: float | None
    missing: bool
    correction_applied: bool
    warnings: str
    ms_elapsed: float

    def sort_key(self) -> tuple:
        return (self.scenario, self.iteration,
                CORRECTION_KINDS.index(self.correction),
                LEARNER_KINDS.index(self.learner), PHASES.index(self.phase))

    def to_csv(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "true" if v else "false"
            return repr(v) if isinstance(v, float) else str(v)
        return [fmt(getattr(self, name)) for name in RESULT_FIELDS]

    @classmethod
    def from_csv(cls, values: list[str]) -> "ResultRow":
        raw = dict(zip(RESULT_FIELDS, values))
        return cls(
            scenario=int(raw["scenario"]), iteration=int(raw["iteration"]),
            correction=raw["correction"], learner=raw["learner"], phase=raw["phase"],
            c=float(raw["c"]) if raw["c"] else None,
            brier=float(raw["brier"]) if raw["brier"] else None,
            cal_intercept=float(raw["cal_intercept"]) if raw["cal_intercept"] else None,
            cal_slope=float(raw["cal_slope"]) if raw["cal_slope"] else None,
            missing=raw["missing"] == "true",
            correction_applied=raw["correction_applied"] == "true",
            warnings=raw["warnings"],
            ms_elapsed=float(raw["ms_elapsed"]) if raw["ms_elapsed"] else 0.0,
        )


@dataclass
class AggregateRow:
    scenario: int
    correction: str
    learner: str
    phase: str
    metric: str
    median: float | None
    mc_error: float | None
    n_missing: int


def scenario_entropy(plan_seed: int, scenario: ScenarioConfig) -> tuple[int, int]:
    return (plan_seed, scenario.base_seed)


def iteration_datasets(scenario: ScenarioConfig, iteration: int,
                       plan_seed: int) -> tuple[Dataset, Dataset]:
    """Training and validation draws for one iteration.

    Event counts and feature draws use four separate streams; the
    validation set is generated by the identical mechanism and never sees
    a correction.
    """
    entropy = scenario_entropy(plan_seed, scenario)
    model = model_from_scenario(scenario)
    n1 = sample_event_count(scenario.n_train, scenario.event_fraction,
                            derive_rng(entropy, iteration, STAGE_TRAIN_EVENTS))
    train_ds = sample_dataset(model, n1, scenario.n_train - n1,
                              derive_rng(entropy, iteration, STAGE_TRAIN_FEATURES))
    n1_val = sample_event_count(scenario.n_validation, scenario.event_fraction,
                                derive_rng(entropy, iteration, STAGE_VAL_EVENTS))
    val_ds = sample_dataset(model, n1_val, scenario.n_validation - n1_val,
                            derive_rng(entropy, iteration, STAGE_VAL_FEATURES))
    return train_ds, val_ds


def _metric_row(scenario_id: int, iteration: int, correction: str, learner: str,
                phase: str, metrics: MetricSet | None, missing: bool,
                applied: bool, warnings: list[str], ms: float) -> ResultRow:
    vals = metrics.as_dict() if metrics is not None else dict.fromkeys(METRIC_NAMES)
    return ResultRow(scenario=scenario_id, iteration=iteration,
                     correction=correction, learner=learner, phase=phase,
                     c=vals["c"], brier=vals["brier"],
                     cal_intercept=vals["cal_intercept"],
                     cal_slope=vals["cal_slope"], missing=missing,
                     correction_applied=applied,
                     warnings="; ".join(w for w in warnings if w),
                     ms_elapsed=ms)


def evaluate_cell(scenario_id: int, iteration: int, correction: str,
                  learner_spec: LearnerSpec, corrected: CorrectionOutcome,
                  val_ds: Dataset, rng: np.random.Generator) -> list[ResultRow]:
    """Train one learner on one corrected dataset and measure both phases."""
    t0 = time.perf_counter()
    if not corrected.applied:
        notes = [f"correction passthrough: {corrected.note}"]
    elif corrected.note:
        notes = [corrected.note]
    else:
        notes = []
    try:
        model: TrainedModel = train(learner_spec, corrected.dataset, rng)
        risks = predict(model, val_ds.features)
    except LearnerError as exc:
        ms = 1000.0 * (time.perf_counter() - t0)
        notes.append(f"learner error: {exc}")
        return [_metric_row(scenario_id, iteration, correction, learner_spec.kind,
                            phase, None, True, corrected.applied, notes, ms)
                for phase in PHASES]
    notes.extend(model.warnings)
    try:
        recalibrated = recalibrate(risks, val_ds.outcome).risks
    except MetricUndefined as exc:
        recalibrated = None
        notes.append(f"recalibration undefined: {exc}")
    record = PredictionRecord(outcomes=val_ds.outcome, risks_raw=risks,
                              risks_recalibrated=recalibrated,
                              scenario_id=scenario_id, iteration=iteration,
                              correction=correction, learner=learner_spec.kind)
    raw_metrics = compute_metric_set(record.risks_raw, record.outcomes)
    if record.risks_recalibrated is not None:
        recal_metrics = compute_metric_set(record.risks_recalibrated,
                                           record.outcomes)
        recal_missing = False
    else:
        recal_metrics = None
        recal_missing = True
    ms = 1000.0 * (time.perf_counter() - t0)
    rows = [_metric_row(scenario_id, iteration, correction, learner_spec.kind,
                        "raw", raw_metrics, False, corrected.applied, notes, ms),
            _metric_row(scenario_id, iteration, correction, learner_spec.kind,
                        "recalibrated", recal_metrics, recal_missing,
                        corrected.applied, notes, ms)]
    return rows


def run_iteration(scenario: ScenarioConfig, iteration: int,
                  plan: RunPlan) -> list[ResultRow]:
    """All grid cells of one simulation iteration; never raises.

    Learner streams are keyed by learner alone (not by correction), so a
    correction that fails and passes data through yields exactly the
    Control cell's results for every learner.
    """
    entropy = scenario_entropy(plan.base_seed, scenario)
    train_ds, val_ds = iteration_datasets(scenario, iteration, plan.base_seed)
    rows: list[ResultRow] = []
    for corr_spec in plan.corrections:
        corr_rng = derive_rng(entropy, iteration, STAGE_CORRECTION,
                              CORRECTION_KINDS.index(corr_spec.kind))
        corrected = apply_correction(corr_spec, train_ds, corr_rng)
        for learner_spec in plan.learners:
            learner_rng = derive_rng(entropy, iteration, STAGE_LEARNER,
                                     LEARNER_KINDS.index(learner_spec.kind))
            rows.extend(evaluate_cell(scenario.id, iteration, corr_spec.kind,
                                      learner_spec, corrected, val_ds, learner_rng))
    return rows


# ---------------------------------------------------------------------------
# Plan execution with checkpointing
# ---------------------------------------------------------------------------

def plan_to_dict(plan: RunPlan) -> dict:
    return {
        "scenarios": [asdict(s) for s in plan.scenarios],
        "corrections": [asdict(c) for c in plan.corrections],
        "learners": [asdict(l) for l in plan.learners],
        "iterations": plan.iterations,
        "base_seed": plan.base_seed,
        "out_dir": plan.out_dir,
    }


def plan_from_dict(data: dict) -> RunPlan:
    return RunPlan(
        scenarios=[ScenarioConfig(**s) for s in data["scenarios"]],
        corrections=[CorrectionSpec(**c) for c in data["corrections"]],
        learners=[LearnerSpec(kind=l["kind"], tuning_grid=l.get("tuning_grid"),
                              fixed_params=l.get("fixed_params") or {})
                  for l in data["learners"]],
        iterations=data["iterations"],
        base_seed=data["base_seed"],
        out_dir=data["out_dir"],
    )


def config_hash(plan: RunPlan) -> str:
    canonical = json.dumps(plan_to_dict(plan), sort_keys=True,
                           separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _run_unit(args: tuple) -> tuple[tuple[int, int], list[ResultRow]]:
    plan, scenario_index, iteration = args
    scenario = plan.scenarios[scenario_index]
    return (scenario.id, iteration), run_iteration(scenario, iteration, plan)


def content_digest(csv_path: str | Path,
                   ignore: tuple[str, ...] = ("ms_elapsed",)) -> str:
    """Digest of a results CSV with wall-clock fields blanked.

    Timing is the one permitted nondeterminism; everything else in the
    sorted output must be byte-stable across runs and worker counts.
    """
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        drop = [header.index(name) for name in ignore if name in header]
        hasher = hashlib.sha256()
        hasher.update(",".join(header).encode())
        for row in reader:
            for j in drop:
                row[j] = ""
            hasher.update(("\n" + ",".join(row)).encode())
    return hasher.hexdigest()


def run_plan(plan: RunPlan, jobs: int = 1, resume: bool = False,
             stop_after: int | None = None, progress: bool = False) -> dict:
    """Execute the plan, streaming checkpoints; returns the manifest.

    ``stop_after`` limits how many (scenario, iteration) units this call
    processes before checkpoint-exiting; a later ``resume=True`` call with
    the identical plan picks up the remaining units and produces output
    identical to a single uninterrupted run.
    """
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(plan)
    (out / "plan.json").write_text(json.dumps(plan_to_dict(plan), indent=2))

    checkpoint_path = out / "checkpoint.json"
    partial_path = out / "partial_rows.csv"
    completed: set[tuple[int, int]] = set()
    rows: list[ResultRow] = []
    if resume and checkpoint_path.exists():
        state = json.loads(checkpoint_path.read_text())
        if state.get("config_hash") != chash:
            raise ValueError("checkpoint belongs to a different plan configuration")
        completed = {tuple(u) for u in state["completed"]}
        seen: set[tuple] = set()
        with open(partial_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for values in reader:
                row = ResultRow.from_csv(values)
                key = (row.scenario, row.iteration, row.correction,
                       row.learner, row.phase)
                # A crash between row write and checkpoint update can leave
                # orphan rows; keep the first copy of each cell.
                if (row.scenario, row.iteration) in completed and key not in seen:
                    seen.add(key)
                    rows.append(row)

    units = [(si, it) for si in range(len(plan.scenarios))
             for it in range(plan.iterations)]
    pending = [(si, it) for si, it in units
               if (plan.scenarios[si].id, it) not in completed]
    if stop_after is not None:
        pending = pending[:stop_after]

    mode = "a" if resume and partial_path.exists() else "w"
    with open(partial_path, mode, newline="") as partial:
        writer = csv.writer(partial)
        if mode == "w":
            writer.writerow(RESULT_FIELDS)
        tasks = [(plan, si, it) for si, it in pending]
        if jobs > 1 and tasks:
            with Pool(processes=jobs) as pool:
                results = pool.imap(_run_unit, tasks)
                for done, (unit, unit_rows) in enumerate(results, 1):
                    rows.extend(unit_rows)
                    for row in unit_rows:
                        writer.writerow(row.to_csv())
                    partial.flush()
                    completed.add(unit)
                    checkpoint_path.write_text(json.dumps(
                        {"config_hash": chash, "completed": sorted(completed)}))
                    if progress:
                        print(f"  unit {done}/{len(tasks)} done", flush=True)
        else:
            for done, task in enumerate(tasks, 1):
                unit, unit_rows = _run_unit(task)
                rows.extend(unit_rows)
                for row in unit_rows:
                    writer.writerow(row.to_csv())
                partial.flush()
                completed.add(unit)
                checkpoint_path.write_text(json.dumps(
                    {"config_hash": chash, "completed": sorted(completed)}))
                if progress:
                    print(f"  unit {done}/{len(tasks)} done", flush=True)

    all_done = len(completed) == len(units)
    manifest = {
        "version": __version__,
        "base_seed": plan.base_seed,
        "config_hash": chash,
        "iterations": plan.iterations,
        "complete": all_done,
        "warning_log": {},
        "results": {},
    }
    if all_done:
        rows.sort(key=ResultRow.sort_key)
        warning_counts: Counter[str] = Counter()
        for scenario in plan.scenarios:
            path = out / f"results_{scenario.id}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(RESULT_FIELDS)
                n_rows = 0
                for row in rows:
                    if row.scenario == scenario.id:
                        writer.writerow(row.to_csv())
                        n_rows += 1
                        if row.warnings:
                            warning_counts[row.warnings] += 1
            manifest["results"][str(scenario.id)] = {
                "path": path.name,
                "rows": n_rows,
                "content_digest": content_digest(path),
            }
        manifest["warning_log"] = dict(sorted(warning_counts.items()))
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate(rows: list[ResultRow], iterations: int, base_seed: int,
              n_bootstrap: int = 1000) -> list[AggregateRow]:
    """Across-iteration medians with bootstrap Monte Carlo errors.

    The Monte Carlo error of each median is the standard deviation of the
    median over ``n_bootstrap`` nonparametric resamples of the iteration
    values, on a stream derived from the run seed and the cell coordinates.
    """
    groups: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        key = (row.scenario, row.correction, row.learner, row.phase)
        cell = groups.setdefault(key, {name: [] for name in METRIC_NAMES})
        for name in METRIC_NAMES:
            value = getattr(row, name)
            if not row.missing and value is not None:
                cell[name].append(value)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], CORRECTION_KINDS.index(k[1]),
                                             LEARNER_KINDS.index(k[2]),
                                             PHASES.index(k[3]))):
        scenario, correction, learner, phase = key
        for mi, name in enumerate(METRIC_NAMES):
            values = np.asarray(groups[key][name])
            n_missing = iterations - values.size
            if values.size == 0:
                out.append(AggregateRow(scenario, correction, learner, phase,
                                        name, None, None, n_missing))
                continue
            rng = derive_rng((base_seed,), STAGE_BOOTSTRAP, scenario,
                             CORRECTION_KINDS.index(correction),
                             LEARNER_KINDS.index(learner), PHASES.index(phase), mi)
            idx = rng.integers(0, values.size, size=(n_bootstrap, values.size))
            medians = np.median(values[idx], axis=1)
            out.append(AggregateRow(scenario, correction, learner, phase, name,
                                    float(np.median(values)),
                                    float(medians.std()), n_missing))
    return out


def load_results(run_dir: str | Path) -> tuple[dict, list[ResultRow]]:
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    rows: list[ResultRow] = []
    for entry in manifest["results"].values():
        with open(run_dir / entry["path"], newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows.extend(ResultRow.from_csv(values) for values in reader)
    return manifest, rows


def aggregate_run(run_dir: str | Path, n_bootstrap: int = 1000) -> list[AggregateRow]:
    """Aggregate a finished run directory and write ``aggregate.csv``."""
    run_dir = Path(run_dir)
    manifest, rows = load_results(run_dir)
    agg = aggregate(rows, manifest["iterations"], manifest["base_seed"],
                    n_bootstrap=n_bootstrap)
    with open(run_dir / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_FIELDS)
        for row in agg:
            writer.writerow([row.scenario, row.correction, row.learner, row.phase,
                             row.metric,
                             "" if row.median is None else repr(row.median),
                             "" if row.mc_error is None else repr(row.mc_error),
                             row.n_missing])
    return agg


# ---------------------------------------------------------------------------
# External data ingestion
# ---------------------------------------------------------------------------

def read_dataset_csv(csv_path: str | Path, outcome_column: str) -> tuple[Dataset, list[str]]:
    """Parse a complete-case numeric CSV into a dataset.

    The outcome column must be binary 0/1; every feature cell must parse
    as a number.  Problems are reported with row/column coordinates.
    Returns the dataset and the feature column names.
    """
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if outcome_column not in header:
            raise IngestError(f"outcome column {outcome_column!r} not in header")
        oi = header.index(outcome_column)
        feature_names = [h for j, h in enumerate(header) if j != oi]
        features, outcome = [], []
        for i, cells in enumerate(reader):
            if len(cells) != len(header):
                raise IngestError(f"row {i + 2}: expected {len(header)} cells, "
                                  f"got {len(cells)}")
            row = []
            for j, cell in enumerate(cells):
                if cell.strip() == "":
                    raise IngestError(f"row {i + 2}, column {header[j]!r}: missing value")
                try:
                    value = float(cell)
                except ValueError:
                    raise IngestError(f"row {i + 2}, column {header[j]!r}: "
                                      f"non-numeric value {cell!r}") from None
                if j == oi:
                    if value not in (0.0, 1.0):
                        raise IngestError(f"row {i + 2}: outcome must be 0 or 1, "
                                          f"got {cell!r}")
                    outcome.append(int(value))
                else:
                    row.append(value)
            features.append(row)
    if not features:
        raise IngestError("no data rows")
    ds = Dataset(np.asarray(features, dtype=np.float64),
                 np.asarray(outcome, dtype=np.int64), provenance="external")
    return ds, feature_names


def write_dataset_csv(csv_path: str | Path, ds: Dataset,
                      outcome_column: str = "y") -> None:
    """Dump a dataset as CSV with columns x1..xp then the outcome."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        p = ds.features.shape[1]
        writer.writerow([f"x{j + 1}" for j in range(p)] + [outcome_column])
        for i in range(ds.n):
            writer.writerow([repr(float(v)) for v in ds.features[i]]
                            + [int(ds.outcome[i])])


def ingest_external(csv_path: str | Path, outcome_column: str,
                    split_fraction: float, seed: int,
                    standardize: bool = False) -> tuple[Dataset, Dataset]:
    """Split a complete-case numeric CSV into train/validation datasets.

    The outcome column must be binary 0/1; every feature cell must parse
    as a number (no missing values).  With ``standardize`` the features
    are z-scaled using training-split statistics applied to both splits.
    """
    if not 0.0 < split_fraction < 1.0:
        raise IngestError("split fraction must lie in (0, 1)")
    ds, feature_names = read_dataset_csv(csv_path, outcome_column)
    X, y = ds.features, ds.outcome
    rng = derive_rng((seed,), STAGE_SPLIT)
    perm = rng.permutation(y.shape[0])
    n_train = int(y.shape[0] * split_fraction + 0.5)
    train_idx, val_idx = perm[:n_train], perm[n_train:]
    X_train, X_val = X[train_idx], X[val_idx]
    if standardize:
        mean = X_train.mean(axis=0)
        sd = X_train.std(axis=0, ddof=1)
        flat = np.flatnonzero(sd == 0)
        if flat.size:
            raise IngestError(f"constant feature column {feature_names[flat[0]]!r} "
                              f"cannot be standardized")
        X_train = (X_train - mean) / sd
        X_val = (X_val - mean) / sd
    return (Dataset(X_train, y[train_idx], provenance="external"),
            Dataset(X_val, y[val_idx], provenance="external"))
