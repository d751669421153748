"""Interference-blind linear scaling baseline.

The baseline models ``log C = w_bar[i] + p_bar[j]`` (workload log difficulty
plus platform log speed) and is fit by alternating closed-form averages on
observations without interference.
"""

from dataclasses import dataclass, field

import numpy as np

from . import serialization
from .errors import ValidationError

DEFAULT_MAX_ITERS = 1000
DEFAULT_TOL = 1e-10


@dataclass
class BaselineModel:
    """Fitted baseline parameters.

    The gauge is fixed so that ``mean(p_bar) == 0``. Indices that never
    appeared interference-free receive the mean of the observed values and
    are listed in ``fallback_workloads`` / ``fallback_platforms``.
    """

    w_bar: np.ndarray
    p_bar: np.ndarray
    fallback_workloads: list = field(default_factory=list)
    fallback_platforms: list = field(default_factory=list)
    loss_history: list = field(default_factory=list, compare=False)

    def to_json(self):
        return {"w_bar": [float(x) for x in self.w_bar],
                "p_bar": [float(x) for x in self.p_bar],
                "fallback_workloads": [int(x) for x in self.fallback_workloads],
                "fallback_platforms": [int(x) for x in self.fallback_platforms]}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["w_bar"], dtype=np.float64),
                   np.asarray(d["p_bar"], dtype=np.float64),
                   list(d.get("fallback_workloads", [])),
                   list(d.get("fallback_platforms", [])))

    def save(self, path):
        serialization.dump(self.to_json(), path)

    @classmethod
    def load(cls, path):
        return cls.from_json(serialization.load(path))


def zero_baseline(n_workloads, n_platforms):
    """Baseline predicting log runtime 0; used by the non-residual objectives."""
    return BaselineModel(np.zeros(n_workloads), np.zeros(n_platforms))


def normalize_gauge(model):
    """Shift ``(w_bar, p_bar)`` by a constant so that ``mean(p_bar) = 0``."""
    c = np.mean(model.p_bar)
    return BaselineModel(model.w_bar + c, model.p_bar - c,
                         list(model.fallback_workloads),
                         list(model.fallback_platforms),
                         list(model.loss_history))


def _group_mean(values, groups, n):
    total = np.bincount(groups, weights=values, minlength=n)
    count = np.bincount(groups, minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        return total / count, count


def _loss(log_c, wi, pj, w_bar, p_bar):
    return float(np.mean(np.square(log_c - w_bar[wi] - p_bar[pj])))


def fit_baseline(dataset, ids, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL):
    """Fit the baseline by alternating minimization.

    Only observations in ``ids`` without interfering workloads are used.
    Each sweep sets ``w_bar[i]`` to the mean of ``log C - p_bar[j]`` over the
    observations of workload ``i``, then updates ``p_bar`` symmetrically.
    Iteration stops when the mean squared log error decreases by less than
    ``tol`` or after ``max_iters`` sweeps.

    Parameters
    ----------
    dataset : Dataset
    ids : array_like of int
        Observation indices to fit on (normally the training split).
    max_iters : int
    tol : float

    Returns
    -------
    BaselineModel
        ``loss_history`` holds the loss after every sweep.
    """
    if max_iters < 1 or tol <= 0:
        raise ValidationError("max_iters must be >= 1 and tol > 0")
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[dataset.degree[ids] == 0]
    if ids.size == 0:
        raise ValidationError(
            "baseline needs at least one observation without interference")
    wi = dataset.workload[ids]
    pj = dataset.platform[ids]
    log_c = np.log(dataset.runtime[ids])
    nw, np_ = dataset.n_workloads, dataset.n_platforms

    w_bar = np.zeros(nw)
    p_bar = np.zeros(np_)
    history = []
    prev = _loss(log_c, wi, pj, w_bar, p_bar)
    for _ in range(max_iters):
        w_new, w_count = _group_mean(log_c - p_bar[pj], wi, nw)
        w_next = np.where(w_count > 0, w_new, 0.0)
        p_new, p_count = _group_mean(log_c - w_next[wi], pj, np_)
        p_next = np.where(p_count > 0, p_new, 0.0)
        loss = _loss(log_c, wi, pj, w_next, p_next)
        if history and loss > prev:
            # At the fixed point rounding can add an ulp; keep the last sweep.
            break
        w_bar, p_bar = w_next, p_next
        history.append(loss)
        if prev - loss < tol:
            break
        prev = loss

    w_missing = np.flatnonzero(w_count == 0)
    p_missing = np.flatnonzero(p_count == 0)
    if w_missing.size:
        w_bar[w_missing] = np.mean(w_bar[w_count > 0])
    if p_missing.size:
        p_bar[p_missing] = np.mean(p_bar[p_count > 0])
    model = BaselineModel(w_bar, p_bar, [int(x) for x in w_missing],
                          [int(x) for x in p_missing], history)
    return normalize_gauge(model)


def baseline_log(model, i, j):
    """Baseline log runtime ``w_bar[i] + p_bar[j]``."""
    if not 0 <= i < len(model.w_bar):
        raise IndexError(f"workload index {i} out of range")
    if not 0 <= j < len(model.p_bar):
        raise IndexError(f"platform index {j} out of range")
    return float(model.w_bar[i] + model.p_bar[j])


def baseline_log_batch(model, i, j):
    return model.w_bar[np.asarray(i)] + model.p_bar[np.asarray(j)]


def residual_targets(model, observations):
    """Log residuals ``log(runtime) - baseline`` for a list of observations.

    The interference set of each observation is ignored.
    """
    return [float(np.log(o.runtime)) - baseline_log(model, o.workload, o.platform)
            for o in observations]


def residual_targets_batch(model, dataset, ids):
    ids = np.asarray(ids, dtype=np.int64)
    return (np.log(dataset.runtime[ids])
            - baseline_log_batch(model, dataset.workload[ids], dataset.platform[ids]))
