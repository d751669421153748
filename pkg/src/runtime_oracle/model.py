"""Two-tower embedding model with interference and quantile heads.

Workload embeddings come from an MLP ``f_w`` over workload side information
concatenated with learned per-workload features; it emits one ``r``-vector
per quantile head. The platform MLP ``f_p`` emits the platform embedding
followed by ``s`` susceptibility vectors and ``s`` magnitude vectors. For
workload ``i`` on platform ``j`` with interfering multiset ``K`` the
predicted log runtime is::

    baseline(i, j) + w_i . p_j
        + sum_t (w_i . vs_j[t]) * act(sum_{k in K} w_k . vg_j[t])

Interfering workloads use the same quantile head as ``w_i``.
"""

import copy
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from . import serialization
from .baseline import BaselineModel, baseline_log_batch
from .dataset import MAX_INTERFERERS, pad_interference
from .errors import ValidationError

DEFAULT_QUANTILES = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99)
FORMAT_TAG = "runtime_oracle.model/1"

_INV_SQRT_2PI = 0.3989422804014327


@dataclass
class NetworkConfig:
    """Architecture hyperparameters.

    Attributes
    ----------
    hidden_sizes : tuple of int
        Hidden layer widths of both embedding networks.
    embed_dim : int
        Embedding dimension ``r``.
    learned_features : int
        Number ``q`` of free features appended to each side-information row.
    interference_types : int
        Number ``s`` of interference types.
    quantiles : tuple of float
        Target quantiles of the workload heads (quantile mode).
    mean_mode : bool
        Single head trained with a squared loss instead of pinball heads.
    leaky_slope : float
        Negative slope of the interference activation.
    activation : {"leaky_relu", "identity"}
        Activation applied to the summed interference magnitude.
    """

    hidden_sizes: tuple = (128, 128)
    embed_dim: int = 32
    learned_features: int = 1
    interference_types: int = 2
    quantiles: tuple = DEFAULT_QUANTILES
    mean_mode: bool = False
    leaky_slope: float = 0.1
    activation: str = "leaky_relu"

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.quantiles = tuple(float(x) for x in self.quantiles)

    @property
    def n_heads(self):
        return 1 if self.mean_mode else len(self.quantiles)

    @property
    def head_quantiles(self):
        """Quantile of each head; ``None`` for the single mean-mode head."""
        return (None,) if self.mean_mode else self.quantiles

    @property
    def platform_output_dim(self):
        return self.embed_dim * (1 + 2 * self.interference_types)

    @property
    def workload_output_dim(self):
        return self.embed_dim * self.n_heads

    def validate(self):
        if self.embed_dim < 1:
            raise ValidationError("embed_dim must be >= 1")
        if self.learned_features < 0 or self.interference_types < 0:
            raise ValidationError("learned_features and interference_types must be >= 0")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValidationError("hidden sizes must be >= 1")
        if not self.mean_mode:
            q = np.asarray(self.quantiles)
            if q.size == 0 or np.any((q <= 0) | (q >= 1)) or np.any(np.diff(q) <= 0):
                raise ValidationError(
                    "quantiles must be strictly increasing values in (0, 1)")
        if not 0 < self.leaky_slope < 1:
            raise ValidationError("leaky_slope must lie in (0, 1)")
        if self.activation not in ("leaky_relu", "identity"):
            raise ValidationError(f"unknown activation {self.activation!r}")

    def to_json(self):
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        d["quantiles"] = list(self.quantiles)
        return d

    @classmethod
    def from_json(cls, d):
        return cls(**d)


class RuntimeModel:
    """Parameters, side information and baseline of a trained predictor.

    ``params`` maps names to arrays: ``workload.<l>.weight`` /
    ``workload.<l>.bias`` and ``platform.<l>.weight`` / ``platform.<l>.bias``
    for each layer, plus the learned features ``phi_w`` and ``phi_p``.
    """

    def __init__(self, config, params, baseline, workload_features,
                 platform_features):
        self.config = config
        self.params = params
        self.baseline = baseline
        self.workload_features = np.asarray(workload_features, dtype=np.float64)
        self.platform_features = np.asarray(platform_features, dtype=np.float64)

    @property
    def n_workloads(self):
        return self.workload_features.shape[0]

    @property
    def n_platforms(self):
        return self.platform_features.shape[0]

    @property
    def n_layers(self):
        return len(self.config.hidden_sizes) + 1

    def copy(self):
        return RuntimeModel(self.config, copy.deepcopy(self.params),
                            self.baseline, self.workload_features,
                            self.platform_features)

    def with_params(self, params):
        return RuntimeModel(self.config, params, self.baseline,
                            self.workload_features, self.platform_features)

    def layers(self, tower):
        return [(self.params[f"{tower}.{l}.weight"], self.params[f"{tower}.{l}.bias"])
                for l in range(self.n_layers)]

    def n_parameters(self):
        return int(sum(p.size for p in self.params.values()))

    def to_json(self):
        return {
            "format": FORMAT_TAG,
            "config": self.config.to_json(),
            "baseline": self.baseline.to_json(),
            "features": {
                "workload": serialization.array_to_json(self.workload_features),
                "platform": serialization.array_to_json(self.platform_features)},
            "params": {k: serialization.array_to_json(v)
                       for k, v in self.params.items()},
        }

    @classmethod
    def from_json(cls, d):
        if d.get("format") != FORMAT_TAG:
            raise ValidationError("not a model file")
        params = OrderedDict(
            (k, serialization.array_from_json(v)) for k, v in d["params"].items())
        model = cls(NetworkConfig.from_json(d["config"]), params,
                    BaselineModel.from_json(d["baseline"]),
                    serialization.array_from_json(d["features"]["workload"]),
                    serialization.array_from_json(d["features"]["platform"]))
        _check_shapes(model)
        return model

    def save(self, path):
        serialization.dump(self.to_json(), path)

    @classmethod
    def load(cls, path):
        return cls.from_json(serialization.load(path))


def _layer_sizes(d_in, hidden, d_out):
    return list(zip([d_in] + list(hidden), list(hidden) + [d_out]))


def _expected_shapes(config, d_w, d_p, n_w, n_p):
    q = config.learned_features
    shapes = OrderedDict()
    for tower, d_in, d_out in (
            ("workload", d_w + q, config.workload_output_dim),
            ("platform", d_p + q, config.platform_output_dim)):
        for l, (a, b) in enumerate(_layer_sizes(d_in, config.hidden_sizes, d_out)):
            shapes[f"{tower}.{l}.weight"] = (a, b)
            shapes[f"{tower}.{l}.bias"] = (b,)
    shapes["phi_w"] = (n_w, q)
    shapes["phi_p"] = (n_p, q)
    return shapes


def _check_shapes(model):
    expected = _expected_shapes(
        model.config, model.workload_features.shape[1],
        model.platform_features.shape[1], model.n_workloads, model.n_platforms)
    if list(expected) != list(model.params):
        raise ValidationError("parameter names do not match the configuration")
    for k, shape in expected.items():
        if model.params[k].shape != shape:
            raise ValidationError(
                f"parameter {k} has shape {model.params[k].shape}, expected {shape}")


def init_model(config, d_w, d_p, n_workloads, n_platforms, baseline, seed,
               features=None):
    """Initialize a model deterministically from ``seed``.

    Weights are drawn from a normal distribution with variance
    ``2 / (fan_in + fan_out)``, biases are zero and the learned features have
    standard deviation 0.01.

    Parameters
    ----------
    config : NetworkConfig
    d_w, d_p : int
        Side-information widths.
    n_workloads, n_platforms : int
    baseline : BaselineModel
    seed : int
    features : FeatureTable, optional
        Side information stored with the model. Zeros are used if omitted.
    """
    config.validate()
    if d_w + config.learned_features < 1 or d_p + config.learned_features < 1:
        raise ValidationError("embedding networks need at least one input")
    if len(baseline.w_bar) != n_workloads or len(baseline.p_bar) != n_platforms:
        raise ValidationError("baseline size does not match the dataset")
    if features is None:
        xw = np.zeros((n_workloads, d_w))
        xp = np.zeros((n_platforms, d_p))
    else:
        xw, xp = features.workload_features, features.platform_features
        if xw.shape != (n_workloads, d_w) or xp.shape != (n_platforms, d_p):
            raise ValidationError("feature matrices do not match the given dimensions")
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in _expected_shapes(config, d_w, d_p, n_workloads,
                                        n_platforms).items():
        if name.endswith(".weight"):
            std = np.sqrt(2.0 / (shape[0] + shape[1]))
            params[name] = rng.normal(0.0, std, size=shape)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, 0.01, size=shape)
    return RuntimeModel(config, params, baseline, xw, xp)


# -- Activations -------------------------------------------------------------

def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def interference_activation(x, config):
    if config.activation == "identity":
        return x
    return np.where(x >= 0, x, config.leaky_slope * x)


def interference_activation_grad(x, config):
    if config.activation == "identity":
        return np.ones_like(x)
    return np.where(x >= 0, 1.0, config.leaky_slope)


# -- Embedding networks ------------------------------------------------------

def mlp_forward(layers, x):
    """Run an MLP with GELU hidden layers and a linear output.

    Returns the output and a cache of ``(layer_input, pre_activation)``
    pairs for the backward pass.
    """
    cache = []
    h = x
    for W, b in layers[:-1]:
        z = h @ W + b
        cache.append((h, z))
        h = gelu(z)
    W, b = layers[-1]
    cache.append((h, None))
    return h @ W + b, cache


def _tower_input(features, phi):
    return np.concatenate([features, phi], axis=1)


def workload_embeddings(model, return_cache=False):
    """Embeddings of every workload, shape ``(n_workloads, n_heads, r)``."""
    x = _tower_input(model.workload_features, model.params["phi_w"])
    out, cache = mlp_forward(model.layers("workload"), x)
    emb = out.reshape(model.n_workloads, model.config.n_heads, model.config.embed_dim)
    return (emb, cache) if return_cache else emb


def split_platform_output(out, config):
    r, s = config.embed_dim, config.interference_types
    n = out.shape[0]
    p = out[:, :r]
    v_s = out[:, r:r * (1 + s)].reshape(n, s, r)
    v_g = out[:, r * (1 + s):].reshape(n, s, r)
    return p, v_s, v_g


def platform_embeddings(model, return_cache=False):
    """Platform embeddings ``(p, v_s, v_g)`` with shapes
    ``(n_platforms, r)``, ``(n_platforms, s, r)`` and ``(n_platforms, s, r)``.
    """
    x = _tower_input(model.platform_features, model.params["phi_p"])
    out, cache = mlp_forward(model.layers("platform"), x)
    emb = split_platform_output(out, model.config)
    return (emb, cache) if return_cache else emb


def embed_workload(model, i):
    """The ``n_heads`` embedding vectors of workload ``i``."""
    if not 0 <= i < model.n_workloads:
        raise IndexError(f"workload index {i} out of range")
    return workload_embeddings(model)[i]


def embed_platform(model, j):
    """Platform embedding, susceptibility and magnitude vectors of ``j``."""
    if not 0 <= j < model.n_platforms:
        raise IndexError(f"platform index {j} out of range")
    p, v_s, v_g = platform_embeddings(model)
    return p[j], v_s[j], v_g[j]


# -- Prediction --------------------------------------------------------------

def inner(a, b):
    return np.sum(a * b, axis=-1)


def interaction_forward(W, p, v_s, v_g, i, j, K, config):
    """Residual prediction (everything except the baseline) for a batch.

    Parameters
    ----------
    W : array, shape (n_workloads, Q, r)
    p, v_s, v_g : platform embeddings
    i, j : int arrays, shape (B,)
    K : int array, shape (B, 3), padded with -1

    Returns
    -------
    pred : array, shape (B, Q)
    cache : dict
        Intermediate values for :func:`runtime_oracle.training`.
    """
    wi = W[i]
    pj = p[j]
    mf = inner(wi, pj[:, None, :])
    cache = {"i": i, "j": j, "wi": wi, "pj": pj}
    s = config.interference_types
    mask = K >= 0
    if s == 0 or not np.any(mask):
        cache["interference"] = False
        return mf, cache
    Kc = np.where(mask, K, 0)
    # Summing interferer embeddings first gives the same total magnitude.
    Wk_sum = np.sum(W[Kc] * mask[:, :, None, None], axis=1)
    vsj, vgj = v_s[j], v_g[j]
    susc = wi @ vsj.transpose(0, 2, 1)
    mag = Wk_sum @ vgj.transpose(0, 2, 1)
    act = interference_activation(mag, config)
    pred = mf + np.sum(susc * act, axis=-1)
    cache.update(interference=True, Kc=Kc, mask=mask, Wk_sum=Wk_sum,
                 vsj=vsj, vgj=vgj, susc=susc, mag=mag, act=act)
    return pred, cache


def _as_batch(i, j, K):
    i = np.atleast_1d(np.asarray(i, dtype=np.int64))
    j = np.atleast_1d(np.asarray(j, dtype=np.int64))
    return i, j, pad_interference(K, len(i))


def forward_batch(model, i, j, K):
    """Predicted log runtimes for a batch, shape ``(B, n_heads)``."""
    i, j, K = _as_batch(i, j, K)
    if np.any((i < 0) | (i >= model.n_workloads)) or np.any(K >= model.n_workloads):
        raise IndexError("workload index out of range")
    if np.any((j < 0) | (j >= model.n_platforms)):
        raise IndexError("platform index out of range")
    W = workload_embeddings(model)
    p, v_s, v_g = platform_embeddings(model)
    pred, _ = interaction_forward(W, p, v_s, v_g, i, j, K, model.config)
    return baseline_log_batch(model.baseline, i, j)[:, None] + pred


def _check_head(model, head):
    if not 0 <= head < model.config.n_heads:
        raise IndexError(f"head {head} out of range")


def forward(model, i, j, K=(), head=0):
    """Predicted log runtime of workload ``i`` on platform ``j`` alongside
    the interfering multiset ``K``, using quantile head ``head``.
    """
    _check_head(model, head)
    K = [int(k) for k in K]
    if len(K) > MAX_INTERFERERS:
        raise ValidationError(f"at most {MAX_INTERFERERS} interfering workloads")
    return float(forward_batch(model, [i], [j], [K])[0, head])


def blind_forward(model, i, j, head=0):
    """Interference-blind prediction: baseline plus ``w_i . p_j``."""
    _check_head(model, head)
    W = workload_embeddings(model)
    p, _, _ = platform_embeddings(model)
    i_ = np.array([i], dtype=np.int64)
    j_ = np.array([j], dtype=np.int64)
    mf = inner(W[i_], p[j_][:, None, :])
    return float((baseline_log_batch(model.baseline, i_, j_)[:, None] + mf)[0, head])


def predict_runtime(model, i, j, K=(), head=0):
    """Predicted runtime in seconds."""
    return float(np.exp(forward(model, i, j, K, head)))


def interference_matrix(v_s, v_g):
    """Materialize ``F = sum_t v_s[t] v_g[t]^T`` (only for inspection)."""
    return np.einsum("...tr,...tc->...rc", v_s, v_g)
