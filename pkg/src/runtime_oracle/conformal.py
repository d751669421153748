"""Split conformal calibration of quantile heads.

Calibration data is partitioned into pools by the number of interfering
workloads. For each pool, head and miscoverage rate ``eps`` an additive
log-space offset is computed from the calibration residuals; the head whose
calibrated bound is tightest on the calibration pool is then selected.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import serialization
from .errors import InfeasibleError, UnknownPoolError, ValidationError
from .model import forward, forward_batch

DEFAULT_EPSILONS = tuple(round(0.01 * k, 2) for k in range(10, 0, -1))


def _exact(x):
    # Decimal reading of the float, so that (n + 1) * (1 - 0.05) is exactly 19
    # for n = 19 rather than one ulp above it.
    return Fraction(repr(float(x)))


def conformal_rank(n, epsilon):
    """Order-statistic rank ``ceil((n + 1) * (1 - epsilon))``."""
    return math.ceil((n + 1) * (1 - _exact(epsilon)))


def conformal_offset(residuals, epsilon):
    """Finite-sample conformal offset.

    Parameters
    ----------
    residuals : array_like
        ``true_log - predicted_log`` on the calibration pool.
    epsilon : float
        Target miscoverage rate in (0, 1).

    Returns
    -------
    float or None
        The ``k``-th smallest residual with ``k = ceil((n+1)(1-eps))``, or
        ``None`` if ``k > n`` (the guarantee is unattainable with ``n``
        calibration points).
    """
    r = np.sort(np.asarray(residuals, dtype=np.float64).reshape(-1))
    if r.size == 0:
        raise ValidationError("calibration residuals are empty")
    if not 0 < epsilon < 1:
        raise ValidationError("epsilon must lie in (0, 1)")
    k = conformal_rank(r.size, epsilon)
    if k > r.size:
        return None
    return float(r[k - 1])


def overprovisioning_margin(bounds, actuals):
    """Mean of ``max(bound - actual, 0) / actual``."""
    b = np.asarray(bounds, dtype=np.float64)
    a = np.asarray(actuals, dtype=np.float64)
    if b.shape != a.shape:
        raise ValidationError("bounds and actuals must have equal length")
    if a.size == 0:
        raise ValidationError("no observations")
    if np.any(a <= 0):
        raise ValidationError("actual runtimes must be positive")
    return float(np.mean(np.maximum(b - a, 0.0) / a))


def _eps_key(eps):
    return format(float(eps), "g")


@dataclass
class CalibrationTable:
    """Conformal offsets and selected heads.

    Attributes
    ----------
    pools : list of int
        Interference degrees with calibration data.
    epsilons : list of float
    offsets : dict
        ``(pool, head, eps) -> gamma`` (``None`` when infeasible).
    margins : dict
        ``(pool, head, eps) -> calval margin`` of the calibrated head.
    selected_head : dict
        ``(pool, eps) -> head`` (``None`` when every head is infeasible).
    pool_sizes : dict
        ``pool -> number of calibration points``.
    fallback : bool
        Map unseen degrees to the largest calibrated pool instead of raising.
    """

    pools: list
    epsilons: list
    offsets: dict
    margins: dict
    selected_head: dict
    pool_sizes: dict
    head_quantiles: list = field(default_factory=list)
    fallback: bool = False

    def resolve_pool(self, degree):
        if degree in self.pool_sizes:
            return degree
        if self.fallback and self.pools:
            return max(self.pools)
        raise UnknownPoolError(f"no calibration pool for {degree} interfering workloads")

    def lookup(self, degree, epsilon):
        """Return ``(head, gamma)`` for a degree and miscoverage rate."""
        pool = self.resolve_pool(degree)
        eps = _match_eps(self.epsilons, epsilon)
        head = self.selected_head[(pool, eps)]
        if head is None:
            raise InfeasibleError(
                f"pool {pool} has {self.pool_sizes[pool]} points, too few for "
                f"epsilon={eps}")
        return head, self.offsets[(pool, head, eps)]

    def to_json(self):
        offsets = {f"{p}/{h}/{_eps_key(e)}": v
                   for (p, h, e), v in self.offsets.items()}
        margins = {f"{p}/{h}/{_eps_key(e)}": v
                   for (p, h, e), v in self.margins.items()}
        selected = {f"{p}/{_eps_key(e)}": v
                    for (p, e), v in self.selected_head.items()}
        return {"pools": list(self.pools),
                "epsilons": [float(e) for e in self.epsilons],
                "pool_sizes": {str(p): n for p, n in self.pool_sizes.items()},
                "head_quantiles": list(self.head_quantiles),
                "fallback": self.fallback,
                "offsets": offsets, "margins": margins,
                "selected_head": selected}

    @classmethod
    def from_json(cls, d):
        eps_by_key = {_eps_key(e): float(e) for e in d["epsilons"]}

        def triple(k):
            p, h, e = k.split("/")
            return int(p), int(h), eps_by_key[e]

        def pair(k):
            p, e = k.split("/")
            return int(p), eps_by_key[e]

        return cls(
            [int(p) for p in d["pools"]], [float(e) for e in d["epsilons"]],
            {triple(k): v for k, v in d["offsets"].items()},
            {triple(k): v for k, v in d["margins"].items()},
            {pair(k): v for k, v in d["selected_head"].items()},
            {int(p): int(n) for p, n in d["pool_sizes"].items()},
            list(d.get("head_quantiles", [])), bool(d.get("fallback", False)))

    def save(self, path):
        serialization.dump(self.to_json(), path)

    @classmethod
    def load(cls, path):
        return cls.from_json(serialization.load(path))


def _match_eps(epsilons, epsilon):
    for e in epsilons:
        if abs(e - epsilon) < 1e-12:
            return e
    raise ValidationError(f"epsilon {epsilon} was not calibrated")


def select_head(margins, quantiles):
    """Index of the smallest finite margin; ties go to the larger quantile.

    ``margins`` holds ``None`` for infeasible heads. Returns ``None`` if no
    head is feasible.
    """
    best = None
    for h, m in enumerate(margins):
        if m is None:
            continue
        if best is None or m < margins[best]:
            best = h
        elif m == margins[best] and _later(quantiles, h, best):
            best = h
    return best


def _later(quantiles, a, b):
    qa, qb = quantiles[a], quantiles[b]
    if qa is None or qb is None:
        return a > b
    return qa > qb


def calibrate_predictions(pred_log, log_actual, degree, epsilons=DEFAULT_EPSILONS,
                          head_quantiles=None, fallback=False):
    """Build a :class:`CalibrationTable` from precomputed predictions.

    Parameters
    ----------
    pred_log : array, shape (n, Q)
        Log predictions of every head on the calibration set.
    log_actual : array, shape (n,)
        Observed log runtimes.
    degree : array of int, shape (n,)
        Number of interfering workloads of each calibration point.
    """
    pred_log = np.asarray(pred_log, dtype=np.float64)
    log_actual = np.asarray(log_actual, dtype=np.float64)
    degree = np.asarray(degree)
    n_heads = pred_log.shape[1]
    if head_quantiles is None:
        head_quantiles = list(range(n_heads))
    pools = sorted(int(p) for p in np.unique(degree))
    offsets, margins, selected, sizes = {}, {}, {}, {}
    for pool in pools:
        rows = degree == pool
        actual = np.exp(log_actual[rows])
        sizes[pool] = int(np.sum(rows))
        for eps in epsilons:
            head_margins = []
            for h in range(n_heads):
                res = log_actual[rows] - pred_log[rows, h]
                gamma = conformal_offset(res, eps)
                offsets[(pool, h, eps)] = gamma
                if gamma is None:
                    m = None
                else:
                    m = overprovisioning_margin(
                        np.exp(pred_log[rows, h] + gamma), actual)
                margins[(pool, h, eps)] = m
                head_margins.append(m)
            selected[(pool, eps)] = select_head(head_margins, head_quantiles)
    return CalibrationTable(pools, list(epsilons), offsets, margins, selected,
                            sizes, list(head_quantiles), fallback)


def build_calibration(model, dataset, calval_ids, epsilons=DEFAULT_EPSILONS,
                      fallback=False):
    """Calibrate every head of ``model`` on the calval observations.

    Pools are formed by interference degree; a pool never reads
    observations of another degree.
    """
    ids = np.asarray(calval_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValidationError("calibration set is empty")
    for e in epsilons:
        if not 0 < e < 1:
            raise ValidationError("epsilons must lie in (0, 1)")
    pred = forward_batch(model, dataset.workload[ids], dataset.platform[ids],
                         dataset.interference[ids])
    return calibrate_predictions(
        pred, np.log(dataset.runtime[ids]), dataset.degree[ids], epsilons,
        list(model.config.head_quantiles), fallback)


def predict_bound(model, table, i, j, K=(), epsilon=0.1):
    """Runtime bound (seconds) exceeded with probability at most ``epsilon``."""
    K = [int(k) for k in K]
    head, gamma = table.lookup(len(K), epsilon)
    return float(np.exp(forward(model, i, j, K, head) + gamma))


def predict_bounds_batch(model, table, i, j, K, epsilon):
    """Vectorized :func:`predict_bound` on padded interference rows.

    Rows whose pool is infeasible or unknown get NaN.
    """
    K = np.asarray(K, dtype=np.int64)
    pred = forward_batch(model, i, j, K)
    degree = np.sum(K >= 0, axis=1)
    out = np.full(pred.shape[0], np.nan)
    for d in np.unique(degree):
        try:
            head, gamma = table.lookup(int(d), epsilon)
        except (InfeasibleError, UnknownPoolError):
            continue
        rows = degree == d
        out[rows] = np.exp(pred[rows, head] + gamma)
    return out
