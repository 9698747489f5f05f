"""Reverse-mode gradients through the unfolded forward pass, Adam, progressive training.

Backward conventions (a.e. derivatives of the piecewise-linear forward):

* ``d sh_b(v)/dv = 1{|v| > b}``, ``d sh_b(v)/db = -sign(v) 1{|v| > b}``;
* the support-selection set is held fixed: selected entries above threshold
  pass gradient straight through and have no threshold derivative;
* ``d||r||_1/dr = sign(r)`` with ``sign(0) = 0``; ``d||r||_2/dr = r/||r||_2``,
  zero at ``r = 0``.
"""

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .core import as_matrix
from .trace import fmt, nmse_db_rows
from .unfolded import NONNEGATIVE, run_layers, save_checkpoint

log = logging.getLogger(__name__)

PAPER_LR_STAGES = (0.0005, 0.0001, 0.00001)
IMPROVEMENT_DB = 1e-6


class NonFiniteLossError(FloatingPointError):
    def __init__(self, layer, value):
        super().__init__(f"non-finite values first at layer {layer} (loss {value!r})")
        self.layer = layer


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr_stages: tuple = PAPER_LR_STAGES
    patience_iters: int = 400
    eval_every: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "mse_to_truth"
    max_stage_iters: int = 4000
    freeze_lower: bool = False
    log_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_stages", tuple(float(v) for v in self.lr_stages))
        if not self.lr_stages:
            raise ValueError("lr_stages must be nonempty")
        if any(v < 0 for v in self.lr_stages):
            raise ValueError("learning rates must be nonnegative")
        if any(b >= a for a, b in zip(self.lr_stages, self.lr_stages[1:])):
            if any(v > 0 for v in self.lr_stages):
                raise ValueError(f"lr_stages must be strictly decreasing, got {self.lr_stages}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("bad TrainConfig")
        if self.loss != "mse_to_truth":
            raise ValueError(f"unknown loss {self.loss!r}")


def loss_and_grad(params, variant, a, batch, depth=None, names=None):
    """Mean squared error to the true codes at ``depth`` and its gradient.

    Returns ``(loss, grads)`` where ``grads`` maps parameter names to arrays
    shaped like the parameters. ``names`` limits which gradients are returned
    (the backward pass still runs through every layer).
    """
    mat = as_matrix(a)
    xs = np.atleast_2d(batch.xs)
    caches, yb, _ = run_layers(params, variant, mat, batch.ys, depth)
    rows = yb.shape[0]
    x_out = caches[-1].out if caches else np.zeros_like(xs)
    diff = x_out - xs
    loss = float(np.sum(diff * diff) / rows)
    # shrinkage maps NaN to 0, so overflow can hide behind a finite loss
    bad = next((t + 1 for t, c in enumerate(caches) if not np.all(np.isfinite(c.z))), None)
    if bad is not None or not np.isfinite(loss):
        raise NonFiniteLossError(bad or len(caches), loss)

    wanted = set(params.trainable() if names is None else names)
    grads = {}
    g = 2.0 * diff / rows
    for t in range(len(caches) - 1, -1, -1):
        c = caches[t]
        soft = c.active & ~c.selected
        dz = np.where(c.active, g, 0.0)
        db = -np.sum(np.where(soft, g * np.sign(c.z), 0.0), axis=1)
        gv = -dz
        if variant.kind.ebt:
            rho = params.tensors[f"rho.{t}"]
            _put(grads, wanted, f"rho.{t}", np.array(np.dot(db, c.norm)))
            if variant.noise_alpha_enabled:
                _put(grads, wanted, f"alpha.{t}", np.array(db.sum()))
            g_norm = db * rho
            if variant.norm_p == 1:
                gv = gv + g_norm[:, None] * np.sign(c.v)
            else:
                safe = np.where(c.norm > 0, c.norm, 1.0)
                gv = gv + np.where(c.norm[:, None] > 0, g_norm[:, None] * c.v / safe[:, None], 0.0)
        else:
            _put(grads, wanted, f"b.{t}", np.array(db.sum()))

        if variant.kind.alista:
            w = params.tensors["w_analytic"]
            gamma = params.tensors[f"gamma.{t}"]
            _put(grads, wanted, f"gamma.{t}", np.array(np.sum(gv * (c.resid @ w.T))))
            g_resid = gamma * (gv @ w)
        else:
            u = params.tensors[f"u.{t}"]
            _put(grads, wanted, f"u.{t}", gv.T @ c.resid)
            g_resid = gv @ u
        g = dz + g_resid @ mat
    for name in wanted:
        grads.setdefault(name, np.zeros_like(params.tensors[name]))
    return loss, grads


def _put(grads, wanted, name, value):
    if name in wanted:
        grads[name] = value


@dataclass(eq=False)
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _clamp(name, value):
    if name.split(".")[0] in NONNEGATIVE:
        return np.maximum(value, 0.0)
    return value


def adam_step(params, grads, state, lr, cfg):
    """Bias-corrected Adam update on the named gradients, in place.

    Threshold parameters and ALISTA step sizes are projected onto ``>= 0``
    afterwards. Returns ``(params, state)``.
    """
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        params.tensors[name] = _clamp(name, params.tensors[name] - update)
    return params, state


def mean_nmse_db(params, variant, a, batch, depth=None):
    """Mean NMSE (dB) of the output at ``depth`` over samples with nonzero truth."""
    caches, yb, _ = run_layers(params, variant, a, batch.ys, depth)
    x = caches[-1].out if caches else np.zeros_like(batch.xs)
    vals = nmse_db_rows(x, batch.xs)
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise ValueError("validation batch has no nonzero samples")
    return float(vals.mean())


TRAINLOG_HEADER = ("depth", "stage", "iter", "lr", "train_loss", "val_nmse_db", "wall_ms")


@dataclass(eq=False)
class TrainLog:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)

    @property
    def diverged(self):
        return any(kind == "diverged" for kind, _ in self.events)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAINLOG_HEADER)
            for depth, stage, it, lr, loss, val, wall in self.rows:
                w.writerow([depth, stage, it, fmt(lr), fmt(loss), fmt(val), "" if wall is None else wall])


def train_progressive(params, variant, a, data_stream, val, cfg, checkpoint_dir=None, depth=None):
    """Layer-by-layer training with staged learning-rate decay.

    For each depth ``1..d`` the output of that layer is fitted with Adam at
    each learning rate in turn. A stage ends when validation NMSE (checked
    every ``eval_every`` iterations) has not improved by ``1e-6`` dB for
    ``patience_iters`` iterations, or at ``max_stage_iters``; the best
    validation snapshot of the stage is kept. Lower layers stay trainable
    unless ``freeze_lower`` is set.

    A non-finite training loss ends the stage early: the best snapshot is
    restored and a ``diverged`` event is logged.
    """
    params = params.copy()
    trainlog = TrainLog()
    start = time.perf_counter()
    target = params.depth if depth is None else depth
    for cur in range(1, target + 1):
        layers = {cur - 1} if cfg.freeze_lower else set(range(cur))
        names = params.trainable(layers)
        for stage, lr in enumerate(cfg.lr_stages):
            best = mean_nmse_db(params, variant, a, val, cur)
            best_params = params.copy()
            since_best = 0
            state = AdamState()
            window = []
            it = 0
            while True:
                batch = next(data_stream)
                try:
                    loss, grads = loss_and_grad(params, variant, a, batch, cur, names)
                except NonFiniteLossError as exc:
                    log.warning("depth %d stage %d: %s; restoring best snapshot", cur, stage, exc)
                    trainlog.events.append(("diverged", (cur, stage, it)))
                    break
                adam_step(params, grads, state, lr, cfg)
                window.append(loss)
                it += 1
                if it % cfg.eval_every:
                    continue
                val_db = mean_nmse_db(params, variant, a, val, cur)
                wall = int((time.perf_counter() - start) * 1000) if cfg.log_wall_time else None
                trainlog.rows.append((cur, stage, it, lr, float(np.mean(window)), val_db, wall))
                window = []
                if val_db < best - IMPROVEMENT_DB:
                    best = val_db
                    best_params = params.copy()
                    since_best = 0
                else:
                    since_best += cfg.eval_every
                if since_best >= cfg.patience_iters:
                    break
                if it >= cfg.max_stage_iters:
                    log.warning("depth %d stage %d hit max_stage_iters=%d", cur, stage, cfg.max_stage_iters)
                    trainlog.events.append(("max_stage_iters", (cur, stage, it)))
                    break
            params = best_params
        log.info("depth %d done: val %.2f dB", cur, best)
        if checkpoint_dir is not None:
            save_checkpoint(f"{checkpoint_dir}/{variant.name}_depth{cur}", params, variant)
    return params, trainlog
