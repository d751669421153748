"""Acceptance criteria, one test each.

Every test records a pass/fail line that is printed in the terminal summary.
Tolerances are fixed ahead of the runs and are not tuned to the outcome.
"""

import math
import os
import time

import numpy as np
from scipy.stats import norm

from runtime_oracle.baseline import fit_baseline, residual_targets_batch
from runtime_oracle.cli import main
from runtime_oracle.conformal import (
    build_calibration,
    calibrate_predictions,
    conformal_offset,
    overprovisioning_margin,
    predict_bounds_batch,
)
from runtime_oracle.dataset import (
    Dataset,
    FeatureTable,
    SyntheticConfig,
    generate_synthetic,
    identity_features,
    make_split,
    standardize_platform_features,
)
from runtime_oracle.evaluation import ExperimentSpec, run_experiment
from runtime_oracle.model import (
    NetworkConfig,
    blind_forward,
    embed_platform,
    embed_workload,
    forward,
    init_model,
    interaction_forward,
)
from runtime_oracle.training import LossConfig, OptimizerState, TrainConfig, adamax_step, train

from conftest import (
    brute_force_offset,
    finite_difference_error,
    random_batches,
    random_model,
    record,
)


def new_model(ds, net, seed, baseline=None, features=None):
    features = features or ds.features
    baseline = baseline or fit_baseline(ds, np.arange(len(ds)))
    return init_model(net, features.workload_features.shape[1],
                      features.platform_features.shape[1], ds.n_workloads,
                      ds.n_platforms, baseline, seed, features)


def test_01_gradient_correctness():
    rng = np.random.default_rng(2024)
    start = time.time()
    worst, min_checked = 0.0, math.inf
    for c in range(20):
        r = int(rng.choice([2, 4, 8]))
        hidden = (8,) if rng.random() < 0.5 else (16, 16)
        s, q, Q = int(rng.integers(0, 3)), int(rng.integers(0, 2)), int(rng.integers(1, 3))
        mean_mode = Q == 1 and c % 2 == 0
        quantiles = (0.5,) if Q == 1 else (0.3, 0.8)
        model = random_model(rng, hidden_sizes=hidden, embed_dim=r,
                             learned_features=q, interference_types=s,
                             quantiles=quantiles, mean_mode=mean_mode)
        batches = random_batches(rng, model.n_workloads, model.n_platforms, size=4)
        err, n = finite_difference_error(model, batches, LossConfig(), rng, 110)
        worst = max(worst, err)
        min_checked = min(min_checked, n)
    elapsed = time.time() - start
    ok = worst <= 1e-5 and min_checked >= 100 and elapsed <= 120
    record(1, "gradient correctness", ok,
           f"max rel err {worst:.2e}, >= {min_checked} params/config, {elapsed:.0f}s")
    assert ok


def test_02_baseline_recovery():
    rng = np.random.default_rng(7)
    a, b = rng.normal(size=20), rng.normal(size=20)
    i, j = (x.ravel() for x in np.meshgrid(np.arange(20), np.arange(20), indexing="ij"))
    feats = FeatureTable(np.zeros((20, 1)), np.zeros((20, 1)))
    ds = Dataset(i, j, [[]] * 400, np.exp(a[i] + b[j]), feats)
    m = fit_baseline(ds, np.arange(400), max_iters=50)
    resid = np.log(ds.runtime) - m.w_bar[i] - m.p_bar[j]
    h = m.loss_history
    monotone = all(h[k + 1] <= h[k] for k in range(len(h) - 1))
    worst = float(np.max(np.abs(resid)))
    ok = len(h) <= 50 and worst <= 1e-9 and monotone
    record(2, "baseline recovery", ok,
           f"{len(h)} sweeps, max |residual| {worst:.1e}, monotone={monotone}")
    assert ok


def test_03_residual_scaling_invariance():
    rng = np.random.default_rng(3)
    nw, np_ = 8, 6
    i, j = (x.ravel() for x in np.meshgrid(np.arange(nw), np.arange(np_), indexing="ij"))
    n0 = i.size
    extra = 60
    ei, ej = rng.integers(0, nw, extra), rng.integers(0, np_, extra)
    K = -np.ones((n0 + extra, 3), dtype=np.int64)
    K[n0:, 0] = rng.integers(0, nw, extra)
    W = np.concatenate([i, ei])
    P = np.concatenate([j, ej])
    t = np.exp(rng.normal(size=n0 + extra))
    feats = FeatureTable(np.zeros((nw, 1)), np.zeros((np_, 1)))
    ds = Dataset(W, P, K, t, feats)
    gamma, target = 7.3, 2
    scaled = t.copy()
    scaled[W == target] *= gamma
    ds2 = Dataset(W, P, K, scaled, feats)
    ids = np.arange(len(ds))
    m1, m2 = fit_baseline(ds, ids), fit_baseline(ds2, ids)
    shift_err = abs((m2.w_bar[target] - m1.w_bar[target]) - math.log(gamma))
    rows = np.flatnonzero(W == target)
    res_err = float(np.max(np.abs(residual_targets_batch(m1, ds, rows)
                                  - residual_targets_batch(m2, ds2, rows))))
    ok = shift_err <= 1e-10 and res_err <= 1e-12
    record(3, "residual scaling invariance", ok,
           f"shift err {shift_err:.1e}, residual change {res_err:.1e}")
    assert ok


def test_04_interference_identity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        r, s, n_w = int(rng.integers(1, 9)), int(rng.integers(1, 4)), 6
        cfg = NetworkConfig(embed_dim=r, interference_types=s, activation="identity",
                            quantiles=(0.5,))
        W = rng.normal(size=(n_w, 1, r))
        p = rng.normal(size=(1, r))
        v_s, v_g = rng.normal(size=(1, s, r)), rng.normal(size=(1, s, r))
        deg = int(rng.integers(0, 4))
        K = -np.ones((1, 3), dtype=np.int64)
        K[0, :deg] = rng.integers(0, n_w, deg)
        i = int(rng.integers(0, n_w))
        # Form A: library forward (susceptibility times summed magnitude).
        a = interaction_forward(W, p, v_s, v_g, np.array([i]), np.array([0]), K, cfg)[0][0, 0]
        w = W[i, 0]
        wk = sum((W[k, 0] for k in K[0, :deg]), np.zeros(r))
        # Form B: bilinear form with an explicitly assembled F_j.
        F = sum(np.outer(v_s[0, t], v_g[0, t]) for t in range(s))
        b = w @ p[0] + w @ F @ wk
        # Form C: shifted platform embedding.
        shifted = p[0] + sum(v_s[0, t] * (wk @ v_g[0, t]) for t in range(s))
        c = w @ shifted
        worst = max(worst, abs(a - b), abs(a - c), abs(b - c))
    ok = worst <= 1e-12
    record(4, "interference identity", ok, f"max pairwise diff {worst:.1e}")
    assert ok


def test_05_empty_interference_reduction():
    rng = np.random.default_rng(5)
    identical, worst = 0, 0.0
    for n in range(1000):
        model = random_model(rng, interference_types=int(rng.integers(0, 3)),
                             quantiles=(0.3, 0.8))
        i, j, h = int(rng.integers(0, 6)), int(rng.integers(0, 5)), int(rng.integers(0, 2))
        f = forward(model, i, j, (), h)
        identical += f == blind_forward(model, i, j, h)
        direct = (model.baseline.w_bar[i] + model.baseline.p_bar[j]
                  + float(embed_workload(model, i)[h] @ embed_platform(model, j)[0]))
        worst = max(worst, abs(f - direct))
    ok = identical == 1000 and worst <= 1e-12
    record(5, "empty-interference reduction", ok,
           f"{identical}/1000 bit-identical, max diff to direct sum {worst:.1e}")
    assert ok


def test_06_planted_model_recovery():
    cfg = SyntheticConfig(n_workloads=30, n_platforms=15, rank=4, interference_types=1,
                          noise_sigma=0.02, obs_per_mode=400)
    ds, _ = generate_synthetic(cfg, seed=0)
    spec = ExperimentSpec(train_fractions=(0.8,), replicates=1, quantile=False,
                          network=NetworkConfig(embed_dim=8),
                          train_config=TrainConfig(steps=5000, eval_every=100), seed=0)
    start = time.time()
    report = run_experiment(ds, spec)[0].report
    elapsed = time.time() - start
    m0, mk = report.mape_no_interference, report.mape_interference
    ok = report.status == "ok" and m0 <= 0.05 and mk <= 0.10 and elapsed <= 300
    record(6, "planted-model recovery", ok,
           f"MAPE |K|=0 {m0:.2%}, |K|>0 {mk:.2%}, {elapsed:.0f}s")
    assert ok


def test_07_conformal_offset_oracle():
    rng = np.random.default_rng(8)
    mismatches = 0
    for n in range(1, 51):
        # Integer residuals force ties; the brute force scans them exactly.
        residuals = [int(x) for x in rng.integers(-10, 10, n)]
        for eps in (0.01, 0.05, 0.1, 0.2, 0.5):
            if conformal_offset(residuals, eps) != brute_force_offset(residuals, eps):
                mismatches += 1
    ok = mismatches == 0
    record(7, "conformal offset oracle", ok, f"{mismatches} mismatches over 250 cases")
    assert ok


def test_08_coverage_guarantee():
    epsilons = (0.1, 0.05)
    cfg = SyntheticConfig(n_workloads=20, n_platforms=10, noise_sigma=0.05,
                          obs_per_mode=1000)
    net = NetworkConfig(embed_dim=8, hidden_sizes=(32, 32))
    passes = {(e, p): 0 for e in epsilons for p in range(4)}
    overall = {e: [] for e in epsilons}
    for rep in range(20):
        ds, _ = generate_synthetic(cfg, seed=100 + rep)
        split = make_split(ds, 0.9, rep)
        ds = ds.with_features(standardize_platform_features(
            ds.features, np.unique(ds.platform[split.train_ids])))
        model = new_model(ds, net, rep, fit_baseline(ds, split.train_ids))
        best, _ = train(ds, split, model,
                        TrainConfig(steps=500, eval_every=100, seed=rep), LossConfig())
        table = build_calibration(best, ds, split.calval_ids, epsilons)
        t = split.test_ids
        deg = ds.degree[t]
        for eps in epsilons:
            bounds = predict_bounds_batch(best, table, ds.workload[t], ds.platform[t],
                                          ds.interference[t], eps)
            covered = ds.runtime[t] <= bounds
            overall[eps].append(float(np.mean(covered)))
            for p in range(4):
                rows = deg == p
                n_test = int(np.sum(rows))
                miss = 1 - float(np.mean(covered[rows]))
                if miss <= eps + 2 * math.sqrt(eps * (1 - eps) / n_test):
                    passes[(eps, p)] += 1
    per_pool_ok = all(v >= 19 for v in passes.values())
    means = {e: float(np.mean(v)) for e, v in overall.items()}
    mean_ok = all(1 - e <= means[e] <= 1 - e + 0.03 for e in epsilons)
    ok = per_pool_ok and mean_ok
    detail = ", ".join(f"eps={e}: pools pass "
                       + "/".join(str(passes[(e, p)]) for p in range(4))
                       + f" of 20, mean cov {means[e]:.4f}" for e in epsilons)
    record(8, "coverage guarantee", ok, detail)
    assert ok


def test_09_pinball_quantile_property():
    rng = np.random.default_rng(9)
    y = rng.normal(size=200)
    xi = 0.9
    params = {"c": np.zeros(1)}
    state = OptimizerState.zeros_like(params)
    cfg = TrainConfig()
    for _ in range(5000):
        c = params["c"][0]
        # Subgradient of the mean pinball loss in c.
        g = np.mean(np.where(y > c, -xi, np.where(y < c, 1 - xi, 0.0)))
        params, state = adamax_step(params, {"c": np.array([g])}, state, cfg)
    c = params["c"][0]
    rank = int(np.sum(y <= c))
    target = math.ceil(xi * len(y))
    ok = abs(rank - target) <= 1
    record(9, "pinball quantile property", ok, f"rank {rank} vs target {target}")
    assert ok


def test_10_quantile_head_selection():
    # Part one: a dominant head is always selected, as the exact argmin.
    rng = np.random.default_rng(10)
    n = 500
    actual = rng.normal(size=n)
    pred = np.column_stack([actual + 0.02 * rng.normal(size=n),
                            actual + 0.4 * rng.normal(size=n)])
    table = calibrate_predictions(pred, actual, np.zeros(n, int),
                                  head_quantiles=[0.5, 0.9])
    argmin_ok = True
    for eps in table.epsilons:
        margins = [table.margins[(0, h, eps)] for h in range(2)]
        argmin_ok &= margins[0] < margins[1]
        argmin_ok &= table.selected_head[(0, eps)] == int(np.argmin(margins)) == 0

    # Part two: selected calibrated margin against the Gaussian optimum.
    sigma = 0.05
    optimum = math.expm1(sigma * norm.ppf(0.9))
    cfg = SyntheticConfig(n_workloads=10, n_platforms=5, rank=2, noise_sigma=sigma,
                          obs_per_mode=4000, modes=(0,))
    net = NetworkConfig(embed_dim=8, hidden_sizes=(32, 32))
    ratios = []
    for seed in range(20):
        ds, _ = generate_synthetic(cfg, seed)
        ds = ds.with_features(FeatureTable(identity_features(10), identity_features(5),
                                           [], []))
        split = make_split(ds, 0.5, seed)
        model = new_model(ds, net, seed, fit_baseline(ds, split.train_ids))
        best, _ = train(ds, split, model,
                        TrainConfig(steps=3000, eval_every=100, seed=seed), LossConfig())
        tab = build_calibration(best, ds, split.calval_ids, (0.1,))
        t = split.test_ids
        bounds = predict_bounds_batch(best, tab, ds.workload[t], ds.platform[t],
                                      ds.interference[t], 0.1)
        ratios.append(overprovisioning_margin(bounds, ds.runtime[t]) / optimum)
    ratio = float(np.mean(ratios))
    ok = argmin_ok and abs(ratio - 1) <= 0.10
    record(10, "quantile-head selection", ok,
           f"dominant head argmin={bool(argmin_ok)}, margin/optimum {ratio:.3f}")
    assert ok


def test_11_ablations():
    cfg = SyntheticConfig(n_workloads=30, n_platforms=15, rank=4, interference_types=1,
                          noise_sigma=0.02, obs_per_mode=400, interference_scale=1.0)
    net = NetworkConfig(embed_dim=8)
    errors = []
    short = TrainConfig(steps=200, eval_every=100, batch_per_mode=128)
    ds0, _ = generate_synthetic(cfg, seed=0)
    for kw in ({"objective": "log"}, {"objective": "proportional"},
               {"use_workload_features": False, "use_platform_features": False},
               {"interference": "discard"}, {"interference": "ignore"},
               {"activation": "identity"}, {"activation": "leaky_relu"}):
        spec = ExperimentSpec(train_fractions=(0.8,), replicates=1, quantile=False,
                              network=net, train_config=short, seed=0, **kw)
        r = run_experiment(ds0, spec)[0].report
        if r.status != "ok":
            errors.append(f"{kw}: {r.error}")

    wins, pairs = 0, []
    for seed in range(5):
        ds, _ = generate_synthetic(cfg, seed=seed)
        res = {}
        for mode in ("model", "ignore"):
            spec = ExperimentSpec(train_fractions=(0.8,), replicates=1, quantile=False,
                                  interference=mode, network=net,
                                  train_config=TrainConfig(steps=5000, eval_every=100),
                                  seed=seed)
            r = run_experiment(ds, spec)[0].report
            if r.status != "ok":
                errors.append(f"{mode}/{seed}: {r.error}")
            res[mode] = r.mape_interference
        wins += res["model"] <= res["ignore"]
        pairs.append(f"{res['model']:.1%}<={res['ignore']:.1%}")
    ok = not errors and wins >= 4
    record(11, "ablation reductions", ok,
           f"model<=ignore on {wins}/5 seeds ({', '.join(pairs)}); "
           f"{len(errors)} errors")
    assert ok, errors


def test_12_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--seed", "3"]) == 0
    argv = ["train", "--data", str(data), "--fraction", "0.5", "--seed", "11",
            "--steps", "400", "--eval-every", "100", "--hidden-sizes", "16,16",
            "--embed-dim", "8"]
    outputs = []
    for name in ("a", "b"):
        assert main(argv + ["--out", str(tmp_path / name)]) == 0
        outputs.append(tmp_path / name)
    names = ["model_best.json", "model_final.json", "train_log.csv", "baseline.json"]
    same = all((outputs[0] / f).read_bytes() == (outputs[1] / f).read_bytes()
               for f in names)
    # Rerunning into the same directory rewrites every file identically.
    before = {f: (outputs[0] / f).read_bytes() for f in os.listdir(outputs[0])}
    assert main(argv + ["--out", str(outputs[0])]) == 0
    rerun = all((outputs[0] / f).read_bytes() == b for f, b in before.items())
    ok = same and rerun
    record(12, "determinism", ok, f"checkpoints and log identical={same}, rerun={rerun}")
    assert ok
