"""Train the two-tower model in mean mode and inspect its embeddings.

Run with ``python3 demos/02_training_and_embeddings.py``. Takes under a
minute on one core.
"""
import tempfile

import numpy as np

from runtime_oracle import (
    NetworkConfig,
    SyntheticConfig,
    TrainConfig,
    LossConfig,
    export_embeddings,
    fit_baseline,
    generate_synthetic,
    init_model,
    make_split,
    mape,
    train,
)
from runtime_oracle.dataset import standardize_platform_features
from runtime_oracle.model import forward_batch

dataset, _ = generate_synthetic(SyntheticConfig(n_workloads=20, n_platforms=10,
                                                obs_per_mode=300), seed=2)
split = make_split(dataset, 0.7, seed=2)

# Platform features are standardized on the platforms seen in training.
dataset = dataset.with_features(standardize_platform_features(
    dataset.features, np.unique(dataset.platform[split.train_ids])))
features = dataset.features
baseline = fit_baseline(dataset, split.train_ids)

network = NetworkConfig(hidden_sizes=(64, 64), embed_dim=8, mean_mode=True)
model = init_model(network, features.workload_features.shape[1],
                   features.platform_features.shape[1], dataset.n_workloads,
                   dataset.n_platforms, baseline, seed=0, features=features)
print(f"{model.n_parameters()} trainable parameters")

best, log = train(dataset, split, model,
                  TrainConfig(steps=2000, eval_every=200, seed=0), LossConfig())
for step, train_loss, calval_loss, is_best in log.rows:
    print(f"step {step:5d}  train {train_loss:.5f}  calval {calval_loss:.5f}"
          + ("  *" if is_best else ""))

test = split.test_ids
pred = np.exp(forward_batch(best, dataset.workload[test], dataset.platform[test],
                            dataset.interference[test])[:, 0])
deg = dataset.degree[test]
for d in range(4):
    rows = deg == d
    print(f"|K|={d}: MAPE {mape(pred[rows], dataset.runtime[test][rows]):.2%}")

# Embeddings and per-platform interference strength, for projection elsewhere.
out = tempfile.mkdtemp(prefix="embeddings_")
for path in export_embeddings(best, out):
    print("wrote", path)
