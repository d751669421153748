import numpy as np
import pytest

from runtime_oracle.baseline import BaselineModel
from runtime_oracle.dataset import FeatureTable, SyntheticConfig, generate_synthetic
from runtime_oracle.model import NetworkConfig, init_model

# Filled by tests/test_acceptance.py, printed once at the end of the session.
CRITERIA = {}


def record(number, title, passed, detail=""):
    CRITERIA[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, passed, detail = CRITERIA[number]
        status = "PASS" if passed else "FAIL"
        line = f"[{status}] {number:>2}. {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def small_synthetic():
    cfg = SyntheticConfig(n_workloads=8, n_platforms=5, d_w=6, d_p=6, rank=2,
                          obs_per_mode=40)
    return generate_synthetic(cfg, seed=3)


def random_model(rng, nw=6, np_=5, dw=3, dp=2, **cfg_kwargs):
    """A small randomly initialized model with random baseline and features."""
    cfg = NetworkConfig(**{"hidden_sizes": (8,), "embed_dim": 4,
                           "quantiles": (0.3, 0.8), **cfg_kwargs})
    baseline = BaselineModel(rng.normal(size=nw), rng.normal(size=np_))
    features = FeatureTable(rng.uniform(0, 2, (nw, dw)), rng.normal(size=(np_, dp)))
    return init_model(cfg, dw, dp, nw, np_, baseline, int(rng.integers(1 << 30)),
                      features)


def random_batches(rng, nw, np_, size=5, degrees=(0, 1, 2, 3)):
    from runtime_oracle.training import Batch
    batches = {}
    for d in degrees:
        K = -np.ones((size, 3), dtype=np.int64)
        K[:, :d] = rng.integers(0, nw, (size, d))
        batches[d] = Batch(rng.integers(0, nw, size), rng.integers(0, np_, size),
                           K, rng.normal(size=size))
    return batches


def finite_difference_error(model, batches, loss_config, rng, n_samples=100,
                            h=1e-5, floor=1e-5):
    """Worst relative error between backward and central differences.

    ``n_samples`` parameter entries are drawn uniformly over all tensors.
    """
    from runtime_oracle.training import loss_and_grad, total_loss
    _, grads = loss_and_grad(model, batches, loss_config)
    entries = [(k, idx) for k, v in model.params.items() for idx in np.ndindex(v.shape)]
    pick = rng.choice(len(entries), size=min(n_samples, len(entries)), replace=False)
    worst = 0.0
    for e in pick:
        key, idx = entries[e]
        params = dict(model.params)
        plus, minus = params[key].copy(), params[key].copy()
        plus[idx] += h
        minus[idx] -= h
        params[key] = plus
        lp = total_loss(model.with_params(params), batches, loss_config)
        params[key] = minus
        lm = total_loss(model.with_params(params), batches, loss_config)
        fd = (lp - lm) / (2 * h)
        an = grads[key][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst, len(pick)


def brute_force_offset(residuals, epsilon):
    """Smallest residual value ``g`` whose count of residuals ``<= g`` reaches
    ``(n + 1)(1 - epsilon)``, found by scanning in exact rational arithmetic.
    ``None`` if no candidate qualifies."""
    from fractions import Fraction
    need = (len(residuals) + 1) * (1 - Fraction(str(epsilon)))
    for g in sorted(set(residuals)):
        if sum(1 for r in residuals if r <= g) >= need:
            return g
    return None
