"""Compare interference handling strategies over a small experiment grid.

Run with ``python3 demos/04_ablation_experiment.py``. Uses two processes and
takes about two minutes on one core.
"""
import tempfile

from runtime_oracle import (
    ExperimentSpec,
    NetworkConfig,
    SyntheticConfig,
    TrainConfig,
    generate_synthetic,
    run_experiment,
    summarize,
)

# Strong interference makes the difference between the strategies visible.
dataset, _ = generate_synthetic(SyntheticConfig(n_workloads=30, n_platforms=15,
                                                interference_types=1, noise_sigma=0.02,
                                                interference_scale=1.0,
                                                obs_per_mode=400), seed=0)

results = {}
for mode in ("model", "ignore", "discard"):
    spec = ExperimentSpec(train_fractions=(0.8,), replicates=2, interference=mode,
                          quantile=False, network=NetworkConfig(embed_dim=8),
                          train_config=TrainConfig(steps=5000, eval_every=100), seed=0)
    outputs = run_experiment(dataset, spec, jobs=2)
    results[mode] = outputs
    out = tempfile.mkdtemp(prefix=f"ablation_{mode}_")
    summarize(outputs, out)
    print(f"{mode}: summary tables in {out}")

print("mode      fraction  MAPE |K|=0  MAPE |K|>0")
for mode, outputs in results.items():
    for o in outputs:
        r = o.report
        print(f"{mode:8s}  {r.fraction:8.1f}  {r.mape_no_interference:10.2%}  "
              f"{r.mape_interference:10.2%}")
