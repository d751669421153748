"""Generate a planted dataset and fit the linear scaling baseline.

Run with ``python3 demos/01_synthetic_data_and_baseline.py``.
"""
import numpy as np

from runtime_oracle import SyntheticConfig, fit_baseline, generate_synthetic, make_split
from runtime_oracle.baseline import residual_targets_batch

# A small cluster: 12 workloads on 6 platforms, observed alone and with up to
# three co-located workloads.
config = SyntheticConfig(n_workloads=12, n_platforms=6, rank=3, obs_per_mode=200)
dataset, oracle = generate_synthetic(config, seed=1)
print(f"{len(dataset)} observations, interference degrees {np.bincount(dataset.degree)}")

split = make_split(dataset, 0.5, seed=1)
print(f"train {len(split.train_ids)}, calval {len(split.calval_ids)}, "
      f"test {len(split.test_ids)}")

# The baseline only sees interference-free training rows.
baseline = fit_baseline(dataset, split.train_ids)
print(f"baseline converged after {len(baseline.loss_history)} sweeps, "
      f"final loss {baseline.loss_history[-1]:.4f}")

# The fitted difficulties track the planted ones. They are not exact because
# the baseline also soaks up the average of the low-rank term.
print("corr(planted w_bar, fitted w_bar):",
      np.corrcoef(oracle.w_bar, baseline.w_bar)[0, 1].round(3))

# What is left for the network to learn: the log-residuals.
res = residual_targets_batch(baseline, dataset, split.train_ids)
print(f"residual std {res.std():.3f} vs log-runtime std "
      f"{np.log(dataset.runtime[split.train_ids]).std():.3f}")
