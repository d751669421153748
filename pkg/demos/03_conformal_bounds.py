"""Turn quantile heads into runtime bounds with a coverage guarantee.

Run with ``python3 demos/03_conformal_bounds.py``. Takes about a minute.
"""
import numpy as np

from runtime_oracle import (
    LossConfig,
    NetworkConfig,
    SyntheticConfig,
    TrainConfig,
    build_calibration,
    fit_baseline,
    generate_synthetic,
    init_model,
    make_split,
    overprovisioning_margin,
    predict_bound,
    train,
)
from runtime_oracle.conformal import predict_bounds_batch
from runtime_oracle.dataset import standardize_platform_features

dataset, _ = generate_synthetic(SyntheticConfig(n_workloads=20, n_platforms=10,
                                                noise_sigma=0.05,
                                                obs_per_mode=600), seed=3)
split = make_split(dataset, 0.8, seed=3)
dataset = dataset.with_features(standardize_platform_features(
    dataset.features, np.unique(dataset.platform[split.train_ids])))
f = dataset.features

# Eight pinball heads, from the median up to the 0.99 quantile.
network = NetworkConfig(hidden_sizes=(32, 32), embed_dim=8)
model = init_model(network, f.workload_features.shape[1], f.platform_features.shape[1],
                   dataset.n_workloads, dataset.n_platforms,
                   fit_baseline(dataset, split.train_ids), seed=0, features=f)
model, _ = train(dataset, split, model, TrainConfig(steps=1000, eval_every=100),
                 LossConfig())

# Offsets are computed separately for each number of co-located workloads.
table = build_calibration(model, dataset, split.calval_ids)
print("calibration pool sizes:", table.pool_sizes)

test = split.test_ids
actual = dataset.runtime[test]
print(" eps  coverage  margin  heads (by pool)")
for eps in (0.1, 0.05, 0.02):
    bounds = predict_bounds_batch(model, table, dataset.workload[test],
                                  dataset.platform[test], dataset.interference[test], eps)
    ok = np.isfinite(bounds)
    heads = [table.head_quantiles[table.selected_head[(p, eps)]] for p in table.pools]
    print(f"{eps:4.2f}  {np.mean(actual[ok] <= bounds[ok]):8.3f}  "
          f"{overprovisioning_margin(bounds[ok], actual[ok]):6.3f}  {heads}")

# A single query: workload 4 on platform 2, sharing it with workloads 1 and 7.
print(f"bound at eps=0.05: {predict_bound(model, table, 4, 2, (1, 7), 0.05):.3f} s")
