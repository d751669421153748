"""Metrics, experiment grids and plot-ready summaries."""

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import serialization
from .baseline import fit_baseline, zero_baseline
from .conformal import (
    DEFAULT_EPSILONS,
    build_calibration,
    overprovisioning_margin,
    predict_bounds_batch,
)
from .dataset import (
    MAX_INTERFERERS,
    FeatureTable,
    identity_features,
    make_split,
    standardize_platform_features,
)
from .errors import ValidationError
from .model import NetworkConfig, forward_batch, init_model, platform_embeddings, \
    workload_embeddings
from .training import LossConfig, TrainConfig, train

INTERFERENCE_MODES = ("model", "discard", "ignore")
DEFAULT_FRACTIONS = tuple(round(0.1 * k, 1) for k in range(1, 10))


def mape(predictions_s, actuals_s):
    """Mean absolute percent error, as a fraction.

    Parameters
    ----------
    predictions_s, actuals_s : array_like
        Runtimes in seconds (linear scale).
    """
    p = np.asarray(predictions_s, dtype=np.float64)
    a = np.asarray(actuals_s, dtype=np.float64)
    if p.shape != a.shape:
        raise ValidationError("predictions and actuals must have equal length")
    if a.size == 0:
        raise ValidationError("no observations")
    if np.any(a <= 0):
        raise ValidationError("actual runtimes must be positive")
    return float(np.mean(np.abs(p - a) / a))


@dataclass
class ExperimentSpec:
    """A grid of (train fraction, replicate) runs under one set of switches.

    Attributes
    ----------
    train_fractions : tuple of float
    replicates : int
    objective : {"log_residual", "log", "proportional"}
        ``log`` and ``proportional`` predict from a zero baseline.
    use_workload_features, use_platform_features : bool
        When off, the side information is replaced by one-hot identities.
    interference : {"model", "discard", "ignore"}
        ``discard`` trains on observations without interference only;
        ``ignore`` trains on every observation with its interference set
        cleared. Both disable the interference terms.
    activation : {"leaky_relu", "identity"}
    quantile : bool
        Also train a quantile-mode model and report conformal metrics.
    epsilons : tuple of float
    seed : int
        Root seed; every run derives its own seeds from it.
    """

    train_fractions: tuple = DEFAULT_FRACTIONS
    replicates: int = 5
    objective: str = "log_residual"
    use_workload_features: bool = True
    use_platform_features: bool = True
    interference: str = "model"
    activation: str = "leaky_relu"
    quantile: bool = True
    epsilons: tuple = DEFAULT_EPSILONS
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    seed: int = 0

    def __post_init__(self):
        self.train_fractions = tuple(float(f) for f in self.train_fractions)
        self.epsilons = tuple(float(e) for e in self.epsilons)

    def validate(self):
        if not self.train_fractions or any(not 0 < f < 1 for f in self.train_fractions):
            raise ValidationError("train fractions must lie in (0, 1)")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.interference not in INTERFERENCE_MODES:
            raise ValidationError(f"unknown interference mode {self.interference!r}")
        if any(not 0 < e < 1 for e in self.epsilons):
            raise ValidationError("epsilons must lie in (0, 1)")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        self.loss_config().validate()
        self.network_config(mean_mode=True).validate()
        self.train_config.validate()

    def loss_config(self):
        return replace(self.loss, objective=self.objective)

    def network_config(self, mean_mode):
        cfg = replace(self.network, mean_mode=mean_mode,
                      activation=self.activation)
        if self.interference != "model":
            cfg = replace(cfg, interference_types=0)
        return cfg

    def to_json(self):
        d = {k: v for k, v in asdict(self).items()
             if k not in ("network", "train_config", "loss")}
        d["train_fractions"] = list(self.train_fractions)
        d["epsilons"] = list(self.epsilons)
        d["network"] = self.network.to_json()
        d["train_config"] = asdict(self.train_config)
        d["loss"] = asdict(self.loss)
        return d

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["network"] = NetworkConfig.from_json(d["network"])
        d["train_config"] = TrainConfig(**d["train_config"])
        d["loss"] = LossConfig(**d["loss"])
        return cls(**d)


@dataclass
class MetricsReport:
    """Test metrics of one (fraction, replicate) run.

    ``margin`` and ``coverage`` map epsilon to the value over all test
    observations whose pool is calibrated and feasible; the ``*_by_pool``
    variants break them down by interference degree. Failed runs carry
    ``status="failed"`` and the error message.
    """

    fraction: float
    replicate: int
    seed: int
    status: str = "ok"
    error: str = ""
    mape_no_interference: float = math.nan
    mape_interference: float = math.nan
    mape_by_pool: dict = field(default_factory=dict)
    margin: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    margin_by_pool: dict = field(default_factory=dict)
    coverage_by_pool: dict = field(default_factory=dict)
    n_test_by_pool: dict = field(default_factory=dict)
    selected_head: dict = field(default_factory=dict)
    best_step: int = 0

    def to_json(self):
        def keyed(d):
            return {str(k): v for k, v in d.items()}

        out = asdict(self)
        for name in ("mape_by_pool", "margin", "coverage", "n_test_by_pool",
                     "selected_head"):
            out[name] = keyed(getattr(self, name))
        for name in ("margin_by_pool", "coverage_by_pool"):
            out[name] = {str(p): keyed(v) for p, v in getattr(self, name).items()}
        return out

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        for name in ("mape_by_pool", "n_test_by_pool"):
            d[name] = {int(k): v for k, v in d.get(name, {}).items()}
        for name in ("margin", "coverage", "selected_head"):
            d[name] = {float(k): v for k, v in d.get(name, {}).items()}
        for name in ("margin_by_pool", "coverage_by_pool"):
            d[name] = {int(p): {float(k): v for k, v in inner.items()}
                       for p, inner in d.get(name, {}).items()}
        return cls(**d)


@dataclass
class RunOutput:
    """A report plus the raw per-observation test outputs behind it."""

    report: MetricsReport
    test_ids: np.ndarray = None
    mean_prediction_s: np.ndarray = None
    bounds_s: dict = field(default_factory=dict)


# -- Pipeline ----------------------------------------------------------------

def prepare_features(dataset, spec, split):
    """Side information for one run: identities when disabled, and platform
    features standardized with training-set statistics.
    """
    f = dataset.features
    xw, w_names = f.workload_features, list(f.workload_feature_names)
    xp, p_names = f.platform_features, list(f.platform_feature_names)
    if not spec.use_workload_features:
        xw = identity_features(dataset.n_workloads)
        w_names = [f"id{i}" for i in range(dataset.n_workloads)]
    if not spec.use_platform_features:
        xp = identity_features(dataset.n_platforms)
        p_names = [f"id{j}" for j in range(dataset.n_platforms)]
    table = FeatureTable(xw, xp, w_names, p_names)
    return standardize_platform_features(table,
                                         dataset.platform[split.train_ids])


def training_view(dataset, spec, split):
    """Dataset and split actually seen by the optimizer.

    Calval ids are filtered like train ids so that checkpoint selection
    measures the same objective.
    """
    if spec.interference == "discard":
        deg = dataset.degree
        return dataset, replace(split,
                                train_ids=split.train_ids[deg[split.train_ids] == 0],
                                calval_ids=split.calval_ids[deg[split.calval_ids] == 0])
    if spec.interference == "ignore":
        cleared = -np.ones_like(dataset.interference)
        return dataset.with_interference(cleared), split
    return dataset, split


def _fit_model(dataset, spec, split, baseline, features, mean_mode, seed,
               train_seed):
    view, view_split = training_view(dataset, spec, split)
    if view_split.train_ids.size == 0:
        raise ValidationError("no training observations left after filtering")
    cfg = spec.network_config(mean_mode)
    model = init_model(cfg, features.workload_features.shape[1],
                       features.platform_features.shape[1],
                       dataset.n_workloads, dataset.n_platforms, baseline,
                       seed, features)
    tc = replace(spec.train_config, seed=train_seed)
    return train(view, view_split, model, tc, spec.loss_config())


def derive_seeds(root, index):
    """Five independent 63-bit seeds for the ``index``-th run."""
    ss = np.random.SeedSequence([int(root), int(index)])
    return [int(x) >> 1 for x in ss.generate_state(5, dtype=np.uint64)]


def run_single(dataset, spec, fraction, replicate, index):
    """One (fraction, replicate) run; exceptions propagate."""
    s_split, s_init_mean, s_train_mean, s_init_q, s_train_q = derive_seeds(
        spec.seed, index)
    report = MetricsReport(float(fraction), int(replicate), int(s_split))
    split = make_split(dataset, fraction, s_split)
    ds = dataset.with_features(prepare_features(dataset, spec, split))
    if spec.objective == "log_residual":
        baseline = fit_baseline(ds, split.train_ids)
    else:
        baseline = zero_baseline(ds.n_workloads, ds.n_platforms)

    test = split.test_ids
    mean_model, log = _fit_model(ds, spec, split, baseline, ds.features, True,
                                 s_init_mean, s_train_mean)
    report.best_step = log.best_step
    pred = np.exp(forward_batch(mean_model, ds.workload[test], ds.platform[test],
                                ds.interference[test])[:, 0])
    out = RunOutput(report, test, pred)
    if spec.quantile:
        q_model, _ = _fit_model(ds, spec, split, baseline, ds.features, False,
                                s_init_q, s_train_q)
        table = build_calibration(q_model, ds, split.calval_ids, spec.epsilons)
        for eps in spec.epsilons:
            out.bounds_s[eps] = predict_bounds_batch(
                q_model, table, ds.workload[test], ds.platform[test],
                ds.interference[test], eps)
            report.selected_head[eps] = {
                str(p): table.selected_head[(p, eps)] for p in table.pools}
    score(report, pred, out.bounds_s, ds.runtime[test], ds.degree[test])
    return out


def score(report, pred_s, bounds_s, actual_s, degree):
    """Fill the metric fields of ``report``.

    Parameters
    ----------
    report : MetricsReport
    pred_s : array
        Point predictions in seconds.
    bounds_s : dict
        Epsilon to bound array; NaN marks observations whose pool is
        unknown or infeasible. An epsilon with no usable bound is reported
        as NaN.
    actual_s, degree : array
    """
    actual = np.asarray(actual_s, dtype=np.float64)
    deg = np.asarray(degree)
    pred = np.asarray(pred_s, dtype=np.float64)
    if np.any(deg == 0):
        report.mape_no_interference = mape(pred[deg == 0], actual[deg == 0])
    if np.any(deg > 0):
        report.mape_interference = mape(pred[deg > 0], actual[deg > 0])
    for m in range(MAX_INTERFERERS + 1):
        if np.any(deg == m):
            report.mape_by_pool[m] = mape(pred[deg == m], actual[deg == m])
            report.n_test_by_pool[m] = int(np.sum(deg == m))
    for eps, bounds in bounds_s.items():
        ok = np.isfinite(bounds)
        report.margin[eps] = math.nan
        report.coverage[eps] = math.nan
        if np.any(ok):
            report.margin[eps] = overprovisioning_margin(bounds[ok], actual[ok])
            report.coverage[eps] = float(np.mean(actual[ok] <= bounds[ok]))
        for m in report.n_test_by_pool:
            rows = ok & (deg == m)
            if np.any(rows):
                report.margin_by_pool.setdefault(m, {})[eps] = \
                    overprovisioning_margin(bounds[rows], actual[rows])
                report.coverage_by_pool.setdefault(m, {})[eps] = \
                    float(np.mean(actual[rows] <= bounds[rows]))
    return report


def _run_guarded(args):
    dataset, spec, fraction, replicate, index = args
    try:
        return run_single(dataset, spec, fraction, replicate, index)
    except (ValidationError, ValueError, FloatingPointError, KeyError) as exc:
        s_split = derive_seeds(spec.seed, index)[0]
        report = MetricsReport(float(fraction), int(replicate), int(s_split),
                               status="failed", error=f"{type(exc).__name__}: {exc}")
        return RunOutput(report)


def run_experiment(dataset, spec, jobs=1):
    """Run every (fraction, replicate) combination of ``spec``.

    Runs are independent and seeded from ``spec.seed`` and their position in
    the grid, so results do not depend on ``jobs``. A run that raises is
    reported with ``status="failed"`` rather than dropped.

    Returns
    -------
    list of RunOutput
        In grid order (fraction-major).
    """
    spec.validate()
    tasks = []
    for fi, fraction in enumerate(spec.train_fractions):
        for rep in range(spec.replicates):
            tasks.append((dataset, spec, fraction, rep,
                          fi * spec.replicates + rep))
    if jobs <= 1:
        return [_run_guarded(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_guarded, tasks))


# -- Aggregation -------------------------------------------------------------

def mean_stderr(values):
    """Mean and standard error (sample std / sqrt(n)); NaNs are skipped."""
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)],
                   dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan, 0
    if v.size == 1:
        return float(v[0]), 0.0, 1
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size)), int(v.size)


def aggregate(reports):
    """Per-fraction mean, standard error and ``mean +- 2 stderr`` band.

    Only reports with ``status == "ok"`` contribute.
    """
    rows = []
    ok = [r for r in reports if r.status == "ok"]
    for fraction in sorted({r.fraction for r in ok}):
        group = [r for r in ok if r.fraction == fraction]
        for name in ("mape_no_interference", "mape_interference"):
            m, se, n = mean_stderr([getattr(r, name) for r in group])
            rows.append({"fraction": fraction, "metric": name, "mean": m,
                         "stderr": se, "lower": m - 2 * se,
                         "upper": m + 2 * se, "n": n})
    return rows


def _g(x):
    return format(float(x), "g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([serialization.format_float(x) if isinstance(x, float)
                        else x for x in row])


def summarize(reports, out_dir):
    """Write ``error_vs_fraction.csv``, ``margin_vs_epsilon.csv`` and
    ``coverage_vs_epsilon.csv``.

    Parameters
    ----------
    reports : list of MetricsReport or RunOutput
    out_dir : str

    Returns
    -------
    dict
        File name to path.
    """
    reports = [r.report if isinstance(r, RunOutput) else r for r in reports]
    if not reports:
        raise ValidationError("nothing to summarize")
    os.makedirs(out_dir, exist_ok=True)
    ok = [r for r in reports if r.status == "ok"]
    fractions = sorted({r.fraction for r in reports})

    err_rows = []
    for fraction in fractions:
        group = [r for r in ok if r.fraction == fraction]
        for mode, name in (("no_interference", "mape_no_interference"),
                           ("interference", "mape_interference")):
            m, se, n = mean_stderr([getattr(r, name) for r in group])
            failed = sum(1 for r in reports
                         if r.fraction == fraction and r.status != "ok")
            err_rows.append([_g(fraction), mode, m, se, n, failed])

    def by_eps(attr):
        rows = []
        for fraction in fractions:
            group = [r for r in ok if r.fraction == fraction]
            eps_all = sorted({e for r in group for e in getattr(r, attr)},
                             reverse=True)
            for eps in eps_all:
                m, se, n = mean_stderr([getattr(r, attr).get(eps, math.nan)
                                        for r in group])
                rows.append([_g(fraction), _g(eps), m, se, n])
        return rows

    paths = {}
    for name, header, rows in (
            ("error_vs_fraction.csv",
             ["fraction", "mode", "mean_mape", "stderr", "n", "failed"], err_rows),
            ("margin_vs_epsilon.csv",
             ["fraction", "epsilon", "mean_margin", "stderr", "n"], by_eps("margin")),
            ("coverage_vs_epsilon.csv",
             ["fraction", "epsilon", "mean_coverage", "stderr", "n"],
             by_eps("coverage"))):
        path = os.path.join(out_dir, name)
        _write_csv(path, header, rows)
        paths[name] = path
    return paths


def save_reports(outputs, path):
    reports = [o.report if isinstance(o, RunOutput) else o for o in outputs]
    serialization.dump([r.to_json() for r in reports], path)


def load_reports(path):
    return [MetricsReport.from_json(d) for d in serialization.load(path)]


def write_manifest(path, **entries):
    """JSON manifest of every resolved config and seed of an output dir."""
    from . import __version__
    serialization.dump({"tool": "runtime_oracle", "version": __version__,
                        **entries}, path)


# -- Embedding export --------------------------------------------------------

def spectral_norms(v_s, v_g):
    """Largest singular value of ``F_j = sum_t v_s[j,t] v_g[j,t]^T``."""
    n = v_s.shape[0]
    r = v_s.shape[-1]
    if v_s.shape[1] == 0:
        return np.zeros(n)
    F = np.einsum("jtr,jtc->jrc", v_s, v_g).reshape(n, r, r)
    return np.linalg.norm(F, ord=2, axis=(1, 2))


def export_embeddings(model, path):
    """Write ``workload_embeddings.csv`` and ``platform_embeddings.csv``.

    The workload file has one row per workload and ``r * Q`` columns
    (head-major). The platform file holds ``p_j`` and the spectral norm of
    the platform's interference matrix.

    Returns
    -------
    tuple of str
        Paths of the two files.
    """
    os.makedirs(path, exist_ok=True)
    W = workload_embeddings(model)
    p, v_s, v_g = platform_embeddings(model)
    n_w, Q, r = W.shape
    wpath = os.path.join(path, "workload_embeddings.csv")
    ppath = os.path.join(path, "platform_embeddings.csv")
    names_w = getattr(model, "workload_names", None) or [f"w{i}" for i in range(n_w)]
    _write_csv(wpath, ["workload"] + [f"h{h}_e{k}" for h in range(Q) for k in range(r)],
               [[names_w[i]] + [float(x) for x in W[i].reshape(-1)]
                for i in range(n_w)])
    norms = spectral_norms(v_s, v_g)
    n_p = p.shape[0]
    names_p = getattr(model, "platform_names", None) or [f"p{j}" for j in range(n_p)]
    _write_csv(ppath, ["platform"] + [f"e{k}" for k in range(r)] + ["spectral_norm"],
               [[names_p[j]] + [float(x) for x in p[j]] + [float(norms[j])]
                for j in range(n_p)])
    return wpath, ppath
