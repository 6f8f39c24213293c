"""Acceptance suite.

Runs every gate criterion at its stated tolerance and prints one PASS/FAIL
line per criterion.  The two simulation replications are expensive
(about half an hour together on two cores); set IMBLAB_ACCEPTANCE_DIR to
a persistent directory to reuse their checkpoints across sessions.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import expit, logit

from imblab.datagen import (get_scenario, model_from_scenario, sample_dataset,
                            solve_delta_mu)
from imblab.harness import (RunPlan, aggregate, content_digest,
                            default_corrections, load_results, run_plan)
from imblab.learners import (LearnerSpec, default_learner_specs, predict,
                             train_lr, train_rf)
from imblab.metrics import (brier, calibration_intercept, calibration_slope,
                            concordance, flexible_curve, recalibrate)
from imblab.resample import enn, ros, rus, smote
from imblab.rng import derive_rng

SEED = 20260810
JOBS = min(2, os.cpu_count() or 1)


def _report(num: int, text: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    print(f"criterion {num}: {status} - {text}" + (f" [{detail}]" if detail else ""))
    assert passed, f"criterion {num} failed: {text} {detail}"


@pytest.fixture(scope="session")
def accept_dir(tmp_path_factory):
    env = os.environ.get("IMBLAB_ACCEPTANCE_DIR")
    if env:
        path = Path(env)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return tmp_path_factory.mktemp("acceptance")


def _cell_medians(agg_rows):
    table = {}
    for row in agg_rows:
        table[(row.correction, row.learner, row.phase, row.metric)] = \
            (row.median, row.mc_error)
    return table


@pytest.fixture(scope="session")
def scenario5_replication(accept_dir):
    """Scenario 5, full 5x5 grid, 200 iterations."""
    plan = RunPlan(scenarios=[get_scenario(5)],
                   corrections=default_corrections(),
                   learners=default_learner_specs(),
                   iterations=200, base_seed=SEED,
                   out_dir=str(accept_dir / "scenario5"))
    t0 = time.time()
    run_plan(plan, jobs=JOBS, resume=True)
    elapsed = time.time() - t0
    _, rows = load_results(plan.out_dir)
    agg = aggregate(rows, plan.iterations, plan.base_seed)
    return _cell_medians(agg), elapsed


@pytest.fixture(scope="session")
def scenario6_lr_replication(accept_dir):
    """Scenario 6, LR cells only, 100 iterations."""
    plan = RunPlan(scenarios=[get_scenario(6)],
                   corrections=default_corrections(),
                   learners=[LearnerSpec(kind="LR")],
                   iterations=100, base_seed=SEED,
                   out_dir=str(accept_dir / "scenario6_lr"))
    run_plan(plan, jobs=JOBS, resume=True)
    _, rows = load_results(plan.out_dir)
    return _cell_medians(aggregate(rows, plan.iterations, plan.base_seed))


# ---------------------------------------------------------------------------
# 1. Mean-shift solver
# ---------------------------------------------------------------------------

def test_criterion_1_delta_mu_solver():
    t0 = time.time()
    d8 = solve_delta_mu(8, 6, 0.2, 0.3, 0.85)
    d16 = solve_delta_mu(16, 12, 0.2, 0.3, 0.85)
    elapsed = time.time() - t0
    ok = abs(d8 - 0.6043) <= 5e-4 and abs(d16 - 0.4854) <= 5e-4 and elapsed < 1.0
    _report(1, "mean-shift solver reproduces reference values within 5e-4",
            ok, f"d8={d8:.6f} d16={d16:.6f} {elapsed * 1000:.0f}ms")


# ---------------------------------------------------------------------------
# 2. Generator fidelity
# ---------------------------------------------------------------------------

def test_criterion_2_generator_fidelity():
    t0 = time.time()
    model = model_from_scenario(get_scenario(1))
    ds = sample_dataset(model, 100_000, 100_000, derive_rng((SEED,), 2))
    w = np.linalg.solve(model.sigma0 + model.sigma1, model.mu1 - model.mu0)
    auc = concordance(ds.features @ w, ds.outcome)
    elapsed = time.time() - t0
    ok = abs(auc - 0.85) <= 0.005 and elapsed < 10.0
    _report(2, "oracle linear score on 200k generated points hits the target AUC",
            ok, f"auc={auc:.4f} {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. Scenario 5 mini-replication, LR cells
# ---------------------------------------------------------------------------

def test_criterion_3_scenario5_lr_cells(scenario5_replication):
    table, elapsed = scenario5_replication
    slope_ctrl = table[("Control", "LR", "raw", "cal_slope")][0]
    slope_rus = table[("RUS", "LR", "raw", "cal_slope")][0]
    brier_ctrl = table[("Control", "LR", "raw", "brier")][0]
    brier_rus = table[("RUS", "LR", "raw", "brier")][0]
    ok = (abs(slope_ctrl - 0.85) <= 0.15 and abs(slope_rus - 0.67) <= 0.15
          and abs(brier_ctrl - 0.12) <= 0.01 and 0.17 <= brier_rus <= 0.21)
    _report(3, "scenario 5 medians: LR calibration slopes and Brier scores",
            ok, f"slopes {slope_ctrl:.3f}/{slope_rus:.3f}, "
                f"briers {brier_ctrl:.3f}/{brier_rus:.3f}, run {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 4. Scenario 6 LR Brier ladder
# ---------------------------------------------------------------------------

def test_criterion_4_scenario6_brier_ladder(scenario6_lr_replication):
    table = scenario6_lr_replication
    targets = {"Control": (0.02, 0.005), "RUS": (0.19, 0.03), "ROS": (0.16, 0.03),
               "SMOTE": (0.15, 0.03), "SENN": (0.16, 0.03)}
    observed = {kind: table[(kind, "LR", "raw", "brier")][0] for kind in targets}
    ok = all(abs(observed[kind] - centre) <= tol
             for kind, (centre, tol) in targets.items())
    detail = " ".join(f"{k}={v:.3f}" for k, v in observed.items())
    _report(4, "scenario 6 LR Brier ladder within tolerance", ok, detail)


# ---------------------------------------------------------------------------
# 5. Over-estimation direction across all learners
# ---------------------------------------------------------------------------

def test_criterion_5_overestimation_direction(scenario5_replication):
    table, _ = scenario5_replication
    learners = [spec.kind for spec in default_learner_specs()]
    failures = []
    for corr in ("RUS", "ROS", "SMOTE", "SENN"):
        for learner in learners:
            median = table[(corr, learner, "raw", "cal_intercept")][0]
            if not median < 0:
                failures.append(f"{corr}-{learner}={median:.3f}")
    for learner in ("RUSBoost", "EasyEnsemble"):
        median = table[("Control", learner, "raw", "cal_intercept")][0]
        if not median < 0:
            failures.append(f"Control-{learner}={median:.3f}")
    ctrl_lr = table[("Control", "LR", "raw", "cal_intercept")][0]
    ctrl_rf = table[("Control", "RF", "raw", "cal_intercept")][0]
    if abs(ctrl_lr) > 0.15:
        failures.append(f"Control-LR={ctrl_lr:.3f}")
    if abs(ctrl_rf) > 0.15:
        failures.append(f"Control-RF={ctrl_rf:.3f}")
    _report(5, "corrected cells over-estimate risk; plain controls stay centred",
            not failures,
            f"violations: {failures}" if failures else
            f"Control-LR={ctrl_lr:+.3f} Control-RF={ctrl_rf:+.3f} "
            f"RB={table[('Control', 'RUSBoost', 'raw', 'cal_intercept')][0]:+.2f} "
            f"EE={table[('Control', 'EasyEnsemble', 'raw', 'cal_intercept')][0]:+.2f}")


# ---------------------------------------------------------------------------
# 6. Recalibration algebra
# ---------------------------------------------------------------------------

def _recalibration_fixtures():
    fixtures = []
    rng = np.random.default_rng(SEED)
    for spread, shift, scale in ((1.5, 0.0, 1.0), (1.0, 1.2, 1.0),
                                 (2.0, -0.9, 0.6), (0.8, 0.4, 2.5)):
        eta = -1.0 + spread * rng.standard_normal(4000)
        truth = expit(eta)
        outcomes = (rng.uniform(size=4000) < truth).astype(np.int64)
        risks = expit(scale * (eta + shift))
        fixtures.append((np.clip(risks, 1e-8, 1 - 1e-8), outcomes))
    # LR predictions on generated data
    scenario = get_scenario(2)
    model = model_from_scenario(scenario)
    train_ds = sample_dataset(model, 40, 160, derive_rng((SEED,), 6, 0))
    val_ds = sample_dataset(model, 400, 1600, derive_rng((SEED,), 6, 1))
    lr = train_lr(train_ds)
    fixtures.append((np.clip(predict(lr, val_ds.features), 1e-8, 1 - 1e-8),
                     val_ds.outcome))
    return fixtures


def test_criterion_6_recalibration_algebra():
    worst_intercept = 0.0
    worst_slope = 0.0
    for risks, outcomes in _recalibration_fixtures():
        slope_before = calibration_slope(risks, outcomes)
        result = recalibrate(risks, outcomes)
        worst_intercept = max(worst_intercept,
                              abs(calibration_intercept(result.risks, outcomes)))
        worst_slope = max(worst_slope,
                          abs(calibration_slope(result.risks, outcomes) - slope_before))
    # hard 0/1 predictions: the mandated clamping still zeroes the intercept
    rng = np.random.default_rng(1)
    outcomes = (rng.uniform(size=2000) < 0.3).astype(np.int64)
    hard = np.where(rng.uniform(size=2000) < 0.55, outcomes.astype(float),
                    rng.uniform(size=2000))
    hard_beta = recalibrate(hard, outcomes)
    worst_intercept = max(worst_intercept,
                          abs(calibration_intercept(hard_beta.risks, outcomes)))
    ok = worst_intercept < 1e-6 and worst_slope < 1e-9
    _report(6, "recalibrated intercept is 0 (1e-6) and slope unchanged (1e-9)",
            ok, f"max|intercept|={worst_intercept:.2e} max|dslope|={worst_slope:.2e}")


# ---------------------------------------------------------------------------
# 7. Oracle-equivalence suite
# ---------------------------------------------------------------------------

def _pairwise_auc(risks, outcomes):
    events = risks[outcomes == 1]
    nonevents = risks[outcomes == 0]
    wins = (events[:, None] > nonevents[None, :]).sum()
    ties = (events[:, None] == nonevents[None, :]).sum()
    return (wins + 0.5 * ties) / (events.size * nonevents.size)


def _enn_keep_oracle(ds, k2):
    n = ds.n
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        d = np.sqrt(((ds.features - ds.features[i]) ** 2).sum(axis=1))
        d[i] = np.inf
        order = np.lexsort((np.arange(n), d))[:k2]
        votes = ds.outcome[order].sum()
        keep[i] = (1 if 2 * votes > k2 else 0) == ds.outcome[i]
    return keep


def test_criterion_7_oracle_equivalence():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(10, 201))
        risks = np.round(rng.uniform(size=n), 2)
        outcomes = (rng.uniform(size=n) < rng.uniform(0.1, 0.9)).astype(np.int64)
        if outcomes.sum() in (0, n):
            continue
        if concordance(risks, outcomes) != _pairwise_auc(risks, outcomes):
            mismatches += 1

    enn_ok = True
    for seed in (70, 71, 72):
        g = np.random.default_rng(seed)
        from imblab.datagen import Dataset
        ds = Dataset(g.standard_normal((200, 3)),
                     (g.uniform(size=200) < 0.35).astype(np.int64))
        keep = _enn_keep_oracle(ds, 3)
        out = enn(ds, 3)
        enn_ok &= np.array_equal(out.features, ds.features[keep])

    # forest predictions against a pure-Python tree walk
    scenario = get_scenario(2)
    model = model_from_scenario(scenario)
    train_ds = sample_dataset(model, 30, 94, derive_rng((SEED,), 7, 0))
    rf = train_rf(train_ds, LearnerSpec(
        kind="RF", tuning_grid=[{"mtry": 3, "min_node_size": 3}],
        fixed_params={"n_trees": 40, "tuning_trees": 5}), derive_rng((SEED,), 7, 1))
    Xq = sample_dataset(model, 20, 60, derive_rng((SEED,), 7, 2)).features
    fast = predict(rf, Xq)
    forest = rf.model
    walked = np.zeros((forest.n_trees, Xq.shape[0]))
    for t in range(forest.n_trees):
        sl = slice(forest.offsets[t], forest.offsets[t + 1])
        feat, thr = forest.feature[sl], forest.threshold[sl]
        left, right, val = forest.left[sl], forest.right[sl], forest.value[sl]
        for i, x in enumerate(Xq):
            node = 0
            while feat[node] >= 0:
                node = left[node] if x[feat[node]] <= thr[node] else right[node]
            walked[t, i] = val[node]
    rf_ok = np.max(np.abs(fast - walked.mean(axis=0))) < 1e-12

    # loess against direct weighted least squares
    g = np.random.default_rng(73)
    risks = np.clip(g.uniform(size=400), 1e-6, 1)
    outcomes = (g.uniform(size=400) < risks).astype(np.int64)
    curve = flexible_curve(risks, outcomes)
    window = int(np.ceil(0.75 * risks.size))
    loess_ok = True
    for i in g.choice(curve.grid.size, size=5, replace=False):
        centre = curve.grid[i]
        dist = np.abs(risks - centre)
        order = np.argsort(dist, kind="stable")[:window]
        w = (1 - (dist[order] / dist[order][-1]) ** 3) ** 3
        V = np.vander(risks[order] - centre, 3, increasing=True)
        coef = np.linalg.solve(V.T @ (V * w[:, None]), V.T @ (w * outcomes[order]))
        loess_ok &= abs(min(max(coef[0], 0.0), 1.0) - curve.fitted[i]) < 1e-10

    # logistic fit against a damped-Newton reimplementation
    lr_train = sample_dataset(model, 60, 190, derive_rng((SEED,), 7, 3))
    lr = train_lr(lr_train)
    D = np.hstack([np.ones((lr_train.n, 1)), lr_train.features])
    beta = np.zeros(D.shape[1])
    for _ in range(200):
        p = expit(D @ beta)
        beta += np.linalg.pinv((D * (p * (1 - p))[:, None]).T @ D) @ (D.T @ (lr_train.outcome - p))
    lr_ok = np.max(np.abs(lr.model.coef - beta)) < 1e-6

    ok = mismatches == 0 and enn_ok and rf_ok and loess_ok and lr_ok
    _report(7, "concordance/ENN/RF/loess/LR all match independent oracles",
            ok, f"auc_mismatches={mismatches} enn={enn_ok} rf={rf_ok} "
                f"loess={loess_ok} lr={lr_ok}")


# ---------------------------------------------------------------------------
# 8. Property suite
# ---------------------------------------------------------------------------

def test_criterion_8_properties(accept_dir):
    rng = np.random.default_rng(8)

    outcomes = (rng.uniform(size=5000) < 0.17).astype(np.int64)
    brier_ok = brier(np.zeros(5000), outcomes) == outcomes.mean()

    from imblab.datagen import Dataset
    ds = Dataset(rng.standard_normal((150, 4)),
                 (rng.uniform(size=150) < 0.15).astype(np.int64))
    trace = []
    out = smote(ds, 5, 0.5, derive_rng((SEED,), 8, 0), trace=trace)
    synth = out.features[ds.n:]
    smote_ok = all(
        np.max(np.abs(ds.features[b] + u * (ds.features[nb] - ds.features[b]) - pt)) < 1e-12
        for pt, (b, nb, u) in zip(synth, trace))

    balance_ok = True
    for seed in range(3):
        sample = Dataset(rng.standard_normal((130, 3)),
                         (rng.uniform(size=130) < 0.2).astype(np.int64))
        under = rus(sample, 0.5, derive_rng((SEED,), 8, 1, seed))
        over = ros(sample, 0.5, derive_rng((SEED,), 8, 2, seed))
        balance_ok &= abs(under.n_events - under.n_nonevents) <= 1
        balance_ok &= abs(over.n_events - over.n_nonevents) <= 1

    risks = rng.uniform(size=800)
    y = (rng.uniform(size=800) < risks).astype(np.int64)
    base = concordance(risks, y)
    auc_ok = all(concordance(t(risks), y) == base
                 for t in (lambda r: logit(np.clip(r, 1e-12, 1 - 1e-12)),
                           lambda r: 0.2 + 0.5 * r,
                           lambda r: r ** 3))

    plan1 = RunPlan(scenarios=[get_scenario(2)],
                    corrections=default_corrections(),
                    learners=default_learner_specs(), iterations=2,
                    base_seed=SEED, out_dir=str(accept_dir / "det_w1"))
    plan8 = RunPlan(scenarios=plan1.scenarios, corrections=plan1.corrections,
                    learners=plan1.learners, iterations=2, base_seed=SEED,
                    out_dir=str(accept_dir / "det_w8"))
    run_plan(plan1, jobs=1, resume=True)
    run_plan(plan8, jobs=8, resume=True)
    digest1 = content_digest(Path(plan1.out_dir) / "results_2.csv")
    digest8 = content_digest(Path(plan8.out_dir) / "results_2.csv")
    determinism_ok = digest1 == digest8

    ok = brier_ok and smote_ok and balance_ok and auc_ok and determinism_ok
    _report(8, "trivial-Brier/SMOTE-reconstruction/balance/AUC-invariance/"
               "worker determinism properties",
            ok, f"brier={brier_ok} smote={smote_ok} balance={balance_ok} "
                f"auc={auc_ok} workers={determinism_ok}")
