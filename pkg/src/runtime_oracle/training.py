"""Losses, hand-written reverse-mode gradients, AdaMax, and the training loop.

Each interference degree ``|K| in {0, 1, 2, 3}`` is a separate objective:
degree 0 has weight 1 and the remaining degrees share ``beta`` equally.
Within a degree, the loss is averaged over the batch and over heads.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .baseline import residual_targets_batch
from .dataset import MAX_INTERFERERS
from .errors import ValidationError
from .model import (
    gelu_grad,
    interaction_forward,
    interference_activation_grad,
    platform_embeddings,
    workload_embeddings,
)
from .serialization import format_float

OBJECTIVES = ("log_residual", "log", "proportional")


@dataclass
class LossConfig:
    """Objective weighting.

    Attributes
    ----------
    interference_weight : float
        Total weight ``beta`` of the interference objectives, split equally
        across 1, 2 and 3 interfering workloads. No-interference data has
        weight 1.
    objective : {"log_residual", "log", "proportional"}
        ``proportional`` replaces the mean-mode squared log error with the
        squared relative error in linear space. The choice of baseline
        (fitted or zero) is made by the caller.
    """

    interference_weight: float = 0.5
    objective: str = "log_residual"

    def validate(self):
        if self.interference_weight < 0:
            raise ValidationError("interference_weight must be >= 0")
        if self.objective not in OBJECTIVES:
            raise ValidationError(f"unknown objective {self.objective!r}")

    def mode_weight(self, degree):
        if degree == 0:
            return 1.0
        return self.interference_weight / MAX_INTERFERERS


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_per_mode: int = 512
    eval_every: int = 200
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.steps < 0 or self.eval_every < 1 or self.batch_per_mode < 1:
            raise ValidationError(
                "need steps >= 0, eval_every >= 1 and batch_per_mode >= 1")
        if self.steps and self.steps < self.eval_every:
            raise ValidationError("steps must be >= eval_every")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")


# -- Losses ------------------------------------------------------------------

def squared_log_loss(pred_log, target_log):
    """Squared error in log space."""
    return np.square(np.asarray(pred_log) - np.asarray(target_log))


def pinball_loss(pred_log, target_log, xi):
    """Quantile (pinball) loss, minimized by the ``xi``-quantile of targets.

    Under-prediction costs ``xi`` per unit and over-prediction ``1 - xi``.
    """
    if not 0 < xi < 1:
        raise ValidationError("xi must lie in (0, 1)")
    diff = np.asarray(target_log) - np.asarray(pred_log)
    return xi * np.maximum(diff, 0) + (1 - xi) * np.maximum(-diff, 0)


def proportional_loss(pred_log, target_log):
    """Squared relative error ``((C_hat - C) / C)^2`` given log inputs."""
    return np.square(np.expm1(np.asarray(pred_log) - np.asarray(target_log)))


def _head_loss_and_grad(config, loss_config, pred, y):
    """Mean loss over batch and heads and its gradient w.r.t. ``pred``.

    ``pred`` has shape ``(B, Q)``, ``y`` shape ``(B,)``.
    """
    B, Q = pred.shape
    diff = pred - y[:, None]
    scale = 1.0 / (B * Q)
    if config.mean_mode:
        if loss_config.objective == "proportional":
            e = np.expm1(diff)
            return float(np.sum(e * e)) * scale, 2.0 * e * (e + 1.0) * scale
        return float(np.sum(diff * diff)) * scale, 2.0 * diff * scale
    xi = np.asarray(config.quantiles)[None, :]
    loss = np.where(diff < 0, -xi * diff, (1 - xi) * diff)
    # Subgradient 0 exactly at the kink.
    grad = np.where(diff < 0, -xi, np.where(diff > 0, 1 - xi, 0.0))
    return float(np.sum(loss)) * scale, grad * scale


# -- Batches -----------------------------------------------------------------

@dataclass
class Batch:
    """Observations of one interference degree with residual targets."""

    i: np.ndarray
    j: np.ndarray
    K: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.i)


def make_batch(model, dataset, ids):
    ids = np.asarray(ids, dtype=np.int64)
    return Batch(dataset.workload[ids], dataset.platform[ids],
                 dataset.interference[ids],
                 residual_targets_batch(model.baseline, dataset, ids))


def batches_by_degree(model, dataset, ids):
    """Split ``ids`` into one :class:`Batch` per interference degree present."""
    ids = np.asarray(ids, dtype=np.int64)
    deg = dataset.degree[ids]
    return {int(m): make_batch(model, dataset, ids[deg == m])
            for m in range(MAX_INTERFERERS + 1) if np.any(deg == m)}


# -- Loss and reverse-mode gradient -----------------------------------------

def _mlp_backward(layers, cache, dout):
    grads = [None] * len(layers)
    dh = dout
    for l in range(len(layers) - 1, -1, -1):
        W, _ = layers[l]
        h_in, z = cache[l]
        if z is not None:
            dh = dh * gelu_grad(z)
        grads[l] = (h_in.T @ dh, np.sum(dh, axis=0))
        dh = dh @ W.T
    return grads, dh


def _scatter_add(target, idx, values):
    """``target[idx[b]] += values[b]``, accumulated sequentially."""
    idx = idx.reshape(-1)
    n = target.shape[0]
    vals = values.reshape(idx.size, -1)
    d = vals.shape[1]
    flat = (idx[:, None] * d + np.arange(d)).ravel()
    target += np.bincount(flat, weights=vals.ravel(),
                          minlength=n * d).reshape(target.shape)


def _interaction_backward(cache, g, config, dW, dp, dvs, dvg):
    """Accumulate gradients of the residual prediction into embedding grads."""
    i, j, wi, pj = cache["i"], cache["j"], cache["wi"], cache["pj"]
    dwi = g[:, :, None] * pj[:, None, :]
    dpj = np.sum(g[:, :, None] * wi, axis=1)
    if cache["interference"]:
        act, susc, mag = cache["act"], cache["susc"], cache["mag"]
        vsj, vgj, mask = cache["vsj"], cache["vgj"], cache["mask"]
        dsusc = g[:, :, None] * act
        dmag = g[:, :, None] * susc * interference_activation_grad(mag, config)
        dwi = dwi + dsusc @ vsj
        _scatter_add(dvs, j, dsusc.transpose(0, 2, 1) @ wi)
        dwk = dmag @ vgj
        dWk = dwk[:, None, :, :] * mask[:, :, None, None]
        _scatter_add(dW, cache["Kc"], dWk)
        _scatter_add(dvg, j, dmag.transpose(0, 2, 1) @ cache["Wk_sum"])
    _scatter_add(dW, i, dwi)
    _scatter_add(dp, j, dpj)


def loss_and_grad(model, batches, loss_config, need_grad=True):
    """Weighted multi-objective loss and its exact gradient.

    Parameters
    ----------
    model : RuntimeModel
    batches : dict
        Maps interference degree to :class:`Batch`. Empty batches and
        degrees with zero weight are skipped.
    loss_config : LossConfig

    Returns
    -------
    loss : float
    grads : dict or None
        Same keys and shapes as ``model.params``.
    """
    config = model.config
    W, wcache = workload_embeddings(model, return_cache=True)
    (p, v_s, v_g), pcache = platform_embeddings(model, return_cache=True)
    if need_grad:
        dW = np.zeros_like(W)
        dp = np.zeros_like(p)
        dvs = np.zeros_like(v_s)
        dvg = np.zeros_like(v_g)
    total = 0.0
    for degree in sorted(batches):
        batch = batches[degree]
        weight = loss_config.mode_weight(degree)
        if len(batch) == 0 or weight == 0:
            continue
        pred, cache = interaction_forward(W, p, v_s, v_g, batch.i, batch.j,
                                          batch.K, config)
        loss, g = _head_loss_and_grad(config, loss_config, pred, batch.y)
        total += weight * loss
        if need_grad:
            _interaction_backward(cache, weight * g, config, dW, dp, dvs, dvg)
    if not need_grad:
        return total, None

    grads = {}
    q = config.learned_features
    dout_w = dW.reshape(model.n_workloads, -1)
    lw, dxw = _mlp_backward(model.layers("workload"), wcache, dout_w)
    dout_p = np.concatenate(
        [dp, dvs.reshape(model.n_platforms, -1), dvg.reshape(model.n_platforms, -1)],
        axis=1)
    lp, dxp = _mlp_backward(model.layers("platform"), pcache, dout_p)
    for tower, lg in (("workload", lw), ("platform", lp)):
        for l, (gw, gb) in enumerate(lg):
            grads[f"{tower}.{l}.weight"] = gw
            grads[f"{tower}.{l}.bias"] = gb
    grads["phi_w"] = dxw[:, dxw.shape[1] - q:]
    grads["phi_p"] = dxp[:, dxp.shape[1] - q:]
    return total, {k: grads[k] for k in model.params}


def total_loss(model, batches, loss_config):
    return loss_and_grad(model, batches, loss_config, need_grad=False)[0]


def backward(model, batches, loss_config):
    """Gradient of :func:`total_loss` w.r.t. every trainable parameter."""
    return loss_and_grad(model, batches, loss_config)[1]


# -- AdaMax ------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict
    u: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)


def adamax_step(params, grads, state, train_config):
    """One AdaMax update (Adam with an infinity-norm second moment).

    Returns new parameter and state objects; inputs are not modified.
    """
    b1, b2 = train_config.beta1, train_config.beta2
    t = state.t + 1
    step = train_config.learning_rate / (1.0 - b1 ** t)
    new_params, m, u = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        u[k] = np.maximum(b2 * state.u[k], np.abs(g))
        new_params[k] = p - step * m[k] / (u[k] + train_config.epsilon)
    return new_params, OptimizerState(m, u, t)


# -- Training loop -----------------------------------------------------------

@dataclass
class TrainingLog:
    """Per-evaluation records ``(step, train_loss, calval_loss, is_best)``."""

    rows: list = field(default_factory=list)
    best_step: int = 0
    final_model: object = None

    def to_csv(self):
        buf = io.StringIO()
        buf.write("step,train_loss,calval_loss,is_best\n")
        for step, tr, cv, best in self.rows:
            buf.write(f"{step},{format_float(tr)},{format_float(cv)},{int(best)}\n")
        return buf.getvalue()

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_csv())

    @classmethod
    def load(cls, path):
        rows = []
        with open(path, newline="", encoding="utf-8") as f:
            for rec in csv.DictReader(f):
                rows.append((int(rec["step"]), float(rec["train_loss"]),
                             float(rec["calval_loss"]), bool(int(rec["is_best"]))))
        best = [r[0] for r in rows if r[3]]
        return cls(rows, best[-1] if best else 0)


def train(dataset, split, model, train_config, loss_config):
    """Train ``model`` with AdaMax on the training split.

    Every step draws ``batch_per_mode`` observations with replacement from
    each interference degree present in the training split. Every
    ``eval_every`` steps (and at step 0) the weighted loss over the whole
    calval split is computed and the best checkpoint is kept.

    Returns
    -------
    best_model : RuntimeModel
        Checkpoint with the lowest calval loss (earliest on ties).
    log : TrainingLog
        Evaluation records; ``log.final_model`` holds the last iterate.
    """
    train_config.validate()
    loss_config.validate()
    train_ids = np.asarray(split.train_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise ValidationError("training set is empty")
    calval_ids = np.asarray(split.calval_ids, dtype=np.int64)
    rng = np.random.default_rng(train_config.seed)

    deg = dataset.degree[train_ids]
    pools = {m: make_batch(model, dataset, train_ids[deg == m])
             for m in range(MAX_INTERFERERS + 1)
             if np.any(deg == m) and loss_config.mode_weight(m) > 0}
    if not pools:
        raise ValidationError("no training observations with nonzero weight")
    full_train = batches_by_degree(model, dataset, train_ids)
    calval = (batches_by_degree(model, dataset, calval_ids)
              if calval_ids.size else full_train)

    params = {k: v.copy() for k, v in model.params.items()}
    state = OptimizerState.zeros_like(params)
    current = model.with_params(params)

    best_loss = total_loss(current, calval, loss_config)
    best_params = params
    log = TrainingLog([(0, total_loss(current, full_train, loss_config),
                        best_loss, True)], 0)
    running = []
    for step in range(1, train_config.steps + 1):
        batches = {}
        for m, pool in pools.items():
            pick = rng.integers(0, len(pool), size=train_config.batch_per_mode)
            batches[m] = Batch(pool.i[pick], pool.j[pick], pool.K[pick], pool.y[pick])
        loss, grads = loss_and_grad(current, batches, loss_config)
        running.append(loss)
        params, state = adamax_step(params, grads, state, train_config)
        current = model.with_params(params)
        if step % train_config.eval_every == 0:
            cv = total_loss(current, calval, loss_config)
            improved = cv < best_loss
            if improved:
                best_loss, best_params = cv, params
                log.best_step = step
            log.rows.append((step, float(np.mean(running)), cv, improved))
            running = []
    log.final_model = current
    return model.with_params({k: v.copy() for k, v in best_params.items()}), log
