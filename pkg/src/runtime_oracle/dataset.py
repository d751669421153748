"""Runtime observations, side information, splits, and synthetic data.

Observations are stored column-wise as numpy arrays. Interference sets are
padded to ``MAX_INTERFERERS`` columns with ``-1``.
"""

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from . import serialization
from .errors import ParseError, ValidationError

MAX_INTERFERERS = 3

OBSERVATIONS_JSONL = "observations.jsonl"
OBSERVATIONS_CSV = "observations.csv"
WORKLOAD_FEATURES = "workload_features.csv"
PLATFORM_FEATURES = "platform_features.csv"


@dataclass(frozen=True)
class Observation:
    """A single measured runtime.

    Attributes
    ----------
    workload : int
        Index of the measured workload.
    platform : int
        Index of the platform it ran on.
    interference : tuple of int
        Workloads running simultaneously (multiset, may repeat ``workload``).
    runtime : float
        Wall-clock runtime in seconds.
    """

    workload: int
    platform: int
    interference: tuple
    runtime: float


@dataclass
class FeatureTable:
    """Workload and platform side information."""

    workload_features: np.ndarray
    platform_features: np.ndarray
    workload_feature_names: list = None
    platform_feature_names: list = None

    def __post_init__(self):
        self.workload_features = np.asarray(
            self.workload_features, dtype=np.float64)
        self.platform_features = np.asarray(
            self.platform_features, dtype=np.float64)
        if self.workload_feature_names is None:
            self.workload_feature_names = [
                f"xw{k}" for k in range(self.workload_features.shape[1])]
        if self.platform_feature_names is None:
            self.platform_feature_names = [
                f"xp{k}" for k in range(self.platform_features.shape[1])]


class Dataset:
    """Observation table plus side information.

    Parameters
    ----------
    workload, platform : array_like of int, shape (N,)
        Indices of each observation.
    interference : array_like of int, shape (N, 3)
        Interfering workloads, padded with -1. Ragged lists are also
        accepted and padded automatically.
    runtime : array_like of float, shape (N,)
        Measured runtimes in seconds.
    features : FeatureTable
        Side information; its row counts define ``n_workloads`` and
        ``n_platforms``.
    workload_names, platform_names : list of str, optional
        Human-readable labels used in reports.
    """

    def __init__(self, workload, platform, interference, runtime, features,
                 workload_names=None, platform_names=None):
        self.workload = np.asarray(workload, dtype=np.int64).reshape(-1)
        self.platform = np.asarray(platform, dtype=np.int64).reshape(-1)
        self.interference = pad_interference(interference, len(self.workload))
        self.runtime = np.asarray(runtime, dtype=np.float64).reshape(-1)
        self.features = features
        self.n_workloads = features.workload_features.shape[0]
        self.n_platforms = features.platform_features.shape[0]
        self.workload_names = workload_names or [
            f"w{i}" for i in range(self.n_workloads)]
        self.platform_names = platform_names or [
            f"p{j}" for j in range(self.n_platforms)]
        self.validate()

    def __len__(self):
        return len(self.workload)

    @property
    def degree(self):
        """Number of interfering workloads for each observation."""
        return np.sum(self.interference >= 0, axis=1)

    @property
    def log_runtime(self):
        return np.log(self.runtime)

    @property
    def observations(self):
        return [
            Observation(int(i), int(j), tuple(int(k) for k in K if k >= 0),
                        float(t))
            for i, j, K, t in zip(self.workload, self.platform,
                                  self.interference, self.runtime)]

    @classmethod
    def from_observations(cls, observations, features, **kwargs):
        return cls(
            [o.workload for o in observations],
            [o.platform for o in observations],
            [list(o.interference) for o in observations],
            [o.runtime for o in observations], features, **kwargs)

    def validate(self):
        n = len(self.workload)
        if self.n_workloads < 1 or self.n_platforms < 1:
            raise ValidationError("dataset needs at least one workload and platform")
        if not (len(self.platform) == n == len(self.runtime)):
            raise ValidationError("observation columns have different lengths")
        _check_range(self.workload, self.n_workloads, "workload")
        _check_range(self.platform, self.n_platforms, "platform")
        present = self.interference[self.interference >= 0]
        _check_range(present, self.n_workloads, "interfering workload")
        bad = ~(np.isfinite(self.runtime) & (self.runtime > 0))
        if np.any(bad):
            row = int(np.argmax(bad))
            raise ValidationError(
                f"observation {row}: runtime must be positive and finite, "
                f"got {self.runtime[row]!r}")
        for name, arr in (("workload", self.features.workload_features),
                          ("platform", self.features.platform_features)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite {name} feature")
        if np.any(self.features.workload_features < 0):
            raise ValidationError("workload features must be non-negative")

    def with_interference(self, interference):
        """Copy of this dataset with the interference column replaced."""
        return Dataset(self.workload, self.platform, interference,
                       self.runtime, self.features, self.workload_names,
                       self.platform_names)

    def with_features(self, features):
        return Dataset(self.workload, self.platform, self.interference,
                       self.runtime, features, self.workload_names,
                       self.platform_names)


def _check_range(idx, n, what):
    bad = (idx < 0) | (idx >= n)
    if np.any(bad):
        raise ValidationError(
            f"{what} index {int(idx[np.argmax(bad)])} out of range [0, {n})")


def pad_interference(interference, n):
    """Convert interference sets to an ``(n, MAX_INTERFERERS)`` array."""
    if isinstance(interference, np.ndarray) and interference.ndim == 2:
        arr = interference.astype(np.int64)
        if arr.shape[1] < MAX_INTERFERERS:
            pad = -np.ones((arr.shape[0], MAX_INTERFERERS - arr.shape[1]),
                           dtype=np.int64)
            arr = np.concatenate([arr, pad], axis=1)
        if arr.shape != (n, MAX_INTERFERERS):
            raise ValidationError(
                f"interference array has shape {arr.shape}, expected "
                f"({n}, {MAX_INTERFERERS})")
        # Normalize so that present entries come first.
        order = np.argsort(arr < 0, axis=1, kind="stable")
        return np.take_along_axis(arr, order, axis=1)
    out = -np.ones((n, MAX_INTERFERERS), dtype=np.int64)
    rows = list(interference)
    if len(rows) != n:
        raise ValidationError("interference column has the wrong length")
    for r, K in enumerate(rows):
        K = [int(k) for k in K]
        if any(k < -1 for k in K):
            raise ValidationError(f"observation {r}: negative workload index")
        K = [k for k in K if k >= 0]
        if len(K) > MAX_INTERFERERS:
            raise ValidationError(
                f"observation {r}: at most {MAX_INTERFERERS} interfering "
                f"workloads are supported, got {len(K)}")
        out[r, :len(K)] = K
    return out


# -- Feature construction ----------------------------------------------------

def transform_opcode_counts(raw_counts):
    """Log-frequency transform of opcode counts.

    Each count ``n`` becomes ``log(n + 1)``; columns which are zero for every
    workload are dropped.

    Parameters
    ----------
    raw_counts : array_like, shape (n_workloads, n_opcodes)
        Non-negative execution counts.

    Returns
    -------
    features : np.ndarray
        Transformed matrix with unused columns removed.
    kept : np.ndarray of int
        Original column indices that were retained.
    """
    raw = np.asarray(raw_counts, dtype=np.float64)
    if raw.ndim != 2:
        raise ValidationError("opcode counts must be a 2-D matrix")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValidationError("opcode counts must be finite and non-negative")
    kept = np.flatnonzero(np.any(raw != 0, axis=0))
    return np.log1p(raw[:, kept]), kept


def _is_indicator(col):
    return bool(np.all((col == 0) | (col == 1)))


def standardize_platform_features(features, platform_ids):
    """Z-score numeric platform features using statistics of ``platform_ids``.

    Columns taking only the values 0 and 1 (one-hot and presence indicators)
    pass through unchanged, as do workload features. Constant columns are
    centered but not scaled.
    """
    xp = features.platform_features.copy()
    ref = np.unique(np.asarray(platform_ids, dtype=np.int64))
    if ref.size == 0:
        ref = np.arange(xp.shape[0])
    for c in range(xp.shape[1]):
        if _is_indicator(xp[:, c]):
            continue
        mu = np.mean(xp[ref, c])
        sd = np.std(xp[ref, c])
        xp[:, c] = (xp[:, c] - mu) / (sd if sd > 0 else 1.0)
    return FeatureTable(features.workload_features, xp,
                        list(features.workload_feature_names),
                        list(features.platform_feature_names))


def identity_features(n):
    """One-hot identity side information, used when features are disabled."""
    return np.eye(n)


# -- File formats ------------------------------------------------------------

def _read_feature_csv(path, nonneg):
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError:
        raise
    if not rows:
        raise ParseError("empty feature file", path=path)
    header = rows[0]
    if not header or header[0] != "name":
        raise ParseError("first header column must be 'name'", line=1, path=path)
    names, values = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} columns, got {len(row)}",
                line=ln, path=path)
        names.append(row[0])
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError as e:
            raise ParseError(str(e), line=ln, path=path) from None
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"{path}:{ln}: non-finite feature value")
        if nonneg and any(v < 0 for v in vals):
            raise ValidationError(f"{path}:{ln}: negative workload feature")
        values.append(vals)
    mat = np.asarray(values, dtype=np.float64).reshape(len(names), len(header) - 1)
    cols = list(header[1:])
    keep = np.flatnonzero(np.any(mat != 0, axis=0)) if len(names) else np.arange(len(cols))
    return names, mat[:, keep], [cols[k] for k in keep]


def _write_feature_csv(path, names, matrix, columns):
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(",".join(["name"] + list(columns)) + "\n")
        for name, row in zip(names, matrix):
            f.write(",".join([name] + [serialization.format_float(v) for v in row]))
            f.write("\n")


def _parse_index(value, what, line, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"{what} must be an integer", line=line, path=path)
    if isinstance(value, float):
        if not value.is_integer():
            raise ParseError(f"{what} must be an integer", line=line, path=path)
        value = int(value)
    return value


def _read_observations_jsonl(path):
    w, p, k, t, lines = [], [], [], [], []
    with open(path, encoding="utf-8") as f:
        for ln, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON ({e.msg})", line=ln, path=path) from None
            if not isinstance(rec, dict) or set(rec) != {"w", "p", "k", "t"}:
                raise ParseError("record must have exactly keys w, p, k, t",
                                 line=ln, path=path)
            if not isinstance(rec["k"], list):
                raise ParseError("k must be a list", line=ln, path=path)
            if not isinstance(rec["t"], (int, float)) or isinstance(rec["t"], bool):
                raise ParseError("t must be a number", line=ln, path=path)
            w.append(_parse_index(rec["w"], "w", ln, path))
            p.append(_parse_index(rec["p"], "p", ln, path))
            k.append([_parse_index(x, "k", ln, path) for x in rec["k"]])
            t.append(float(rec["t"]))
            lines.append(ln)
    return w, p, k, t, lines


def _read_observations_csv(path):
    w, p, k, t, lines = [], [], [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["w", "p", "k", "t"]:
            raise ParseError("header must be w,p,k,t", line=1, path=path)
        for ln, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError("expected 4 columns", line=ln, path=path)
            try:
                w.append(int(row[0]))
                p.append(int(row[1]))
                k.append([int(x) for x in row[2].split(";") if x != ""])
                t.append(float(row[3]))
            except ValueError as e:
                raise ParseError(str(e), line=ln, path=path) from None
            lines.append(ln)
    return w, p, k, t, lines


def _validate_rows(w, p, k, t, lines, n_w, n_p, path):
    for wi, pj, K, ti, ln in zip(w, p, k, t, lines):
        if not 0 <= wi < n_w:
            raise ValidationError(
                f"{path}:{ln}: workload index {wi} out of range [0, {n_w})")
        if not 0 <= pj < n_p:
            raise ValidationError(
                f"{path}:{ln}: platform index {pj} out of range [0, {n_p})")
        if len(K) > MAX_INTERFERERS:
            raise ValidationError(
                f"{path}:{ln}: at most {MAX_INTERFERERS} interfering workloads")
        for kk in K:
            if not 0 <= kk < n_w:
                raise ValidationError(
                    f"{path}:{ln}: interfering workload index {kk} out of "
                    f"range [0, {n_w})")
        if not (math.isfinite(ti) and ti > 0):
            raise ValidationError(
                f"{path}:{ln}: runtime must be positive and finite, got {ti!r}")


def load_dataset(path, format="canonical_jsonl"):
    """Load a dataset directory.

    The directory holds ``workload_features.csv``, ``platform_features.csv``
    and either ``observations.jsonl`` (``canonical_jsonl``) or
    ``observations.csv`` (``canonical_csv``).

    Raises
    ------
    ParseError
        Malformed row; the message carries the line number.
    ValidationError
        Index out of range, non-positive runtime, or non-finite feature.
    """
    if format not in ("canonical_jsonl", "canonical_csv"):
        raise ValidationError(f"unknown dataset format {format!r}")
    wn, xw, wcols = _read_feature_csv(os.path.join(path, WORKLOAD_FEATURES), True)
    pn, xp, pcols = _read_feature_csv(os.path.join(path, PLATFORM_FEATURES), False)
    if format == "canonical_jsonl":
        obs_path = os.path.join(path, OBSERVATIONS_JSONL)
        w, p, k, t, lines = _read_observations_jsonl(obs_path)
    else:
        obs_path = os.path.join(path, OBSERVATIONS_CSV)
        w, p, k, t, lines = _read_observations_csv(obs_path)
    _validate_rows(w, p, k, t, lines, len(wn), len(pn), obs_path)
    features = FeatureTable(xw, xp, wcols, pcols)
    return Dataset(w, p, k, t, features, workload_names=wn, platform_names=pn)


def save_dataset(dataset, path, format="canonical_jsonl"):
    """Write ``dataset`` to directory ``path`` in canonical form."""
    os.makedirs(path, exist_ok=True)
    feats = dataset.features
    _write_feature_csv(os.path.join(path, WORKLOAD_FEATURES),
                       dataset.workload_names, feats.workload_features,
                       feats.workload_feature_names)
    _write_feature_csv(os.path.join(path, PLATFORM_FEATURES),
                       dataset.platform_names, feats.platform_features,
                       feats.platform_feature_names)
    if format == "canonical_jsonl":
        with open(os.path.join(path, OBSERVATIONS_JSONL), "w",
                  encoding="utf-8", newline="\n") as f:
            for i, j, K, t in zip(dataset.workload, dataset.platform,
                                  dataset.interference, dataset.runtime):
                rec = {"w": int(i), "p": int(j),
                       "k": [int(x) for x in K if x >= 0], "t": float(t)}
                f.write(serialization.dumps(rec) + "\n")
    elif format == "canonical_csv":
        with open(os.path.join(path, OBSERVATIONS_CSV), "w",
                  encoding="utf-8", newline="\n") as f:
            f.write("w,p,k,t\n")
            for i, j, K, t in zip(dataset.workload, dataset.platform,
                                  dataset.interference, dataset.runtime):
                ks = ";".join(str(int(x)) for x in K if x >= 0)
                f.write(f"{int(i)},{int(j)},{ks},{serialization.format_float(t)}\n")
    else:
        raise ValidationError(f"unknown dataset format {format!r}")


# -- Splits ------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    """Disjoint train / calibration-validation / test index sets."""

    train_ids: np.ndarray
    calval_ids: np.ndarray
    test_ids: np.ndarray
    train_fraction: float
    seed: int

    def to_json(self):
        return {"seed": int(self.seed),
                "train_fraction": float(self.train_fraction),
                "train": [int(x) for x in self.train_ids],
                "calval": [int(x) for x in self.calval_ids],
                "test": [int(x) for x in self.test_ids]}

    @classmethod
    def from_json(cls, d):
        return cls(np.asarray(d["train"], dtype=np.int64),
                   np.asarray(d["calval"], dtype=np.int64),
                   np.asarray(d["test"], dtype=np.int64),
                   float(d["train_fraction"]), int(d["seed"]))

    def filename(self):
        return split_filename(self.seed, self.train_fraction)


def split_filename(seed, fraction):
    return f"split_{int(seed)}_{format(float(fraction), 'g')}.json"


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def make_split(dataset, train_fraction, seed):
    """Uniform random train/calval/test partition.

    ``train_fraction`` of the observations form the training portion, of
    which 80% is used for fitting and 20% for validation and calibration.
    The result depends only on (number of observations, fraction, seed).
    """
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie in (0, 1)")
    if seed < 0:
        raise ValidationError("seed must be non-negative")
    perm = np.random.default_rng(seed).permutation(n)
    n_total = _round_half_up(train_fraction * n)
    n_calval = _round_half_up(0.2 * n_total)
    n_train = n_total - n_calval
    train = np.sort(perm[:n_train])
    calval = np.sort(perm[n_train:n_total])
    test = np.sort(perm[n_total:])
    for name, ids in (("train", train), ("calval", calval), ("test", test)):
        if ids.size == 0:
            raise ValidationError(
                f"split of {n} observations at fraction {train_fraction} "
                f"leaves the {name} set empty")
    return Split(train, calval, test, float(train_fraction), int(seed))


def save_split(split, directory):
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, split.filename())
    serialization.dump(split.to_json(), path)
    return path


def load_split(path, n_obs=None):
    s = Split.from_json(serialization.load(path))
    if n_obs is not None:
        ids = np.concatenate([s.train_ids, s.calval_ids, s.test_ids])
        if ids.size and (ids.min() < 0 or ids.max() >= n_obs):
            raise ValidationError("split references observations outside the dataset")
        if np.unique(ids).size != ids.size:
            raise ValidationError("split index sets overlap")
    return s


# -- Synthetic data ----------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Size and noise settings for :func:`generate_synthetic`.

    ``interference_scale`` multiplies the standard deviation of the planted
    interference factors relative to the main factors.
    """

    n_workloads: int = 20
    n_platforms: int = 10
    d_w: int = 16
    d_p: int = 16
    rank: int = 4
    interference_types: int = 1
    noise_sigma: float = 0.02
    obs_per_mode: int = 100
    modes: tuple = (0, 1, 2, 3)
    interference_scale: float = 0.1
    leaky_slope: float = 0.1
    feature_noise: float = 0.1

    def validate(self):
        for name in ("n_workloads", "n_platforms", "d_w", "d_p", "rank",
                     "interference_types", "obs_per_mode"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        if self.interference_scale < 0:
            raise ValidationError("interference_scale must be >= 0")
        if self.feature_noise < 0:
            raise ValidationError("feature_noise must be >= 0")
        if not 0 < self.leaky_slope <= 1:
            raise ValidationError("leaky_slope must lie in (0, 1]")
        if not self.modes or any(m not in range(MAX_INTERFERERS + 1)
                                 for m in self.modes):
            raise ValidationError(
                f"modes must be a non-empty subset of 0..{MAX_INTERFERERS}")


@dataclass
class SyntheticOracle:
    """Planted parameters of a synthetic dataset.

    Evaluates the exact planted log-runtime, using the same functional form
    as the learned model: baseline, inner product, and per-type
    susceptibility times activated magnitude.
    """

    w_bar: np.ndarray
    p_bar: np.ndarray
    W: np.ndarray
    P: np.ndarray
    v_s: np.ndarray
    v_g: np.ndarray
    noise_sigma: float
    leaky_slope: float = 0.1

    def _act(self, x):
        return np.where(x >= 0, x, self.leaky_slope * x)

    def log_runtime(self, i, j, K=()):
        """Exact planted log-runtime for a single (workload, platform, set)."""
        wi = self.W[i]
        out = self.w_bar[i] + self.p_bar[j] + float(np.dot(wi, self.P[j]))
        K = [int(k) for k in K if k >= 0]
        for t in range(self.v_s.shape[1]):
            mag = sum(float(np.dot(self.W[k], self.v_g[j, t])) for k in K)
            out += float(np.dot(wi, self.v_s[j, t])) * float(self._act(mag))
        return out

    def log_runtime_batch(self, i, j, K):
        i = np.asarray(i)
        j = np.asarray(j)
        K = np.asarray(K)
        mask = (K >= 0)[..., None]
        Wk = np.where(mask, self.W[np.maximum(K, 0)], 0.0)
        wi = self.W[i]
        out = self.w_bar[i] + self.p_bar[j] + np.sum(wi * self.P[j], axis=-1)
        susc = np.einsum("br,btr->bt", wi, self.v_s[j])
        mag = np.einsum("bkr,btr->bt", Wk, self.v_g[j])
        return out + np.sum(susc * self._act(mag), axis=-1)

    def to_json(self):
        a = serialization.array_to_json
        return {"w_bar": a(self.w_bar), "p_bar": a(self.p_bar),
                "W": a(self.W), "P": a(self.P), "v_s": a(self.v_s),
                "v_g": a(self.v_g), "noise_sigma": float(self.noise_sigma),
                "leaky_slope": float(self.leaky_slope)}

    @classmethod
    def from_json(cls, d):
        a = serialization.array_from_json
        return cls(a(d["w_bar"]), a(d["p_bar"]), a(d["W"]), a(d["P"]),
                   a(d["v_s"]), a(d["v_g"]), d["noise_sigma"], d["leaky_slope"])


def generate_synthetic(config, seed):
    """Sample a planted low-rank interference dataset.

    Workload features are synthetic opcode counts whose log-frequencies are
    noisy linear probes of the planted workload factors; platform features
    are noisy linear probes of the planted platform and interference
    factors.

    Returns
    -------
    dataset : Dataset
    oracle : SyntheticOracle
    """
    config.validate()
    rng = np.random.default_rng(seed)
    nw, np_, r, s = (config.n_workloads, config.n_platforms, config.rank,
                     config.interference_types)
    sd = 1.0 / math.sqrt(r)
    w_bar = rng.uniform(-1, 1, size=nw)
    p_bar = rng.uniform(-1, 1, size=np_)
    W = rng.normal(0, sd, size=(nw, r))
    P = rng.normal(0, sd, size=(np_, r))
    v_s = rng.normal(0, config.interference_scale * sd, size=(np_, s, r))
    v_g = rng.normal(0, config.interference_scale * sd, size=(np_, s, r))
    oracle = SyntheticOracle(w_bar, p_bar, W, P, v_s, v_g,
                             float(config.noise_sigma), config.leaky_slope)

    probe_w = rng.normal(0, 1, size=(r, config.d_w))
    lin_w = W @ probe_w + config.feature_noise * rng.normal(size=(nw, config.d_w))
    counts = np.floor(np.exp(4.0 + lin_w))
    xw, kept = transform_opcode_counts(counts)

    # Interference factors are rescaled to unit size before probing so the
    # feature noise does not swamp them.
    iscale = config.interference_scale if config.interference_scale > 0 else 1.0
    latent_p = np.concatenate(
        [P, v_s.reshape(np_, -1) / iscale, v_g.reshape(np_, -1) / iscale],
        axis=1)
    probe_p = rng.normal(0, 1, size=(latent_p.shape[1], config.d_p))
    xp = latent_p @ probe_p + config.feature_noise * rng.normal(size=(np_, config.d_p))
    features = FeatureTable(xw, xp, [f"op{k}" for k in kept],
                            [f"pf{k}" for k in range(config.d_p)])

    wl, pl, kl = [], [], []
    for m in config.modes:
        n = config.obs_per_mode
        wl.append(rng.integers(0, nw, size=n))
        pl.append(rng.integers(0, np_, size=n))
        K = -np.ones((n, MAX_INTERFERERS), dtype=np.int64)
        K[:, :m] = rng.integers(0, nw, size=(n, m))
        kl.append(K)
    wa, pa, ka = np.concatenate(wl), np.concatenate(pl), np.concatenate(kl)
    log_t = oracle.log_runtime_batch(wa, pa, ka)
    if config.noise_sigma > 0:
        log_t = log_t + rng.normal(0, config.noise_sigma, size=log_t.shape)
    dataset = Dataset(wa, pa, ka, np.exp(log_t), features,
                      workload_names=[f"w{i:03d}" for i in range(nw)],
                      platform_names=[f"p{j:03d}" for j in range(np_)])
    return dataset, oracle
