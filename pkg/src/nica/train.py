"""Contrastive training of the additive regression function r(x, u).

The model is a feature network h mapping x to D components plus one scalar
head per component; r(x, u) sums the heads applied to (h_i(x), u).  Training
minimizes the mean logistic loss over labeled pairs with Adam.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .genmodel import SampleBatch
from .nn import (AdamBuffers, MlpParams, MlpSpec, TrainingDivergedError,
                 backward_from_cache, forward_batch, forward_cached, init_mlp,
                 params_from_dict, params_to_dict)

LN2 = float(np.log(2.0))


@dataclass(frozen=True)
class TrainConfig:
    width: int = 64
    epochs: int = 60
    batch_size: int = 256
    learning_rate: float = 5e-4
    seed: int = 0
    shuffle: bool = True
    early_stop: bool = True
    plateau_rel_tol: float = 1e-5
    plateau_patience: int = 5

    def __post_init__(self):
        if min(self.width, self.batch_size) < 1 or self.epochs < 0:
            raise ValueError("width and batch_size must be >= 1, epochs >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class GclModel:
    """Feature network plus one scalar head per feature component."""

    h: MlpParams
    phis: tuple[MlpParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "phis", tuple(self.phis))
        if len(self.phis) != self.feature_dim:
            raise ValueError(
                f"{len(self.phis)} heads for {self.feature_dim} features"
            )
        for p in self.phis:
            if p.spec.out_dim != 1:
                raise ValueError("heads must be scalar-valued")

    @property
    def feature_dim(self) -> int:
        return self.h.spec.out_dim

    @property
    def u_dim(self) -> int:
        return self.phis[0].spec.in_dim - 1


def init_gcl_model(d: int, u_dim: int, width: int, seed: int,
                   hidden_layers: int = 3, activation: str = "relu",
                   zero_final_head: bool = True,
                   x_dim: int | None = None) -> GclModel:
    """Build h: x -> R^d and d scalar heads, three hidden layers each.

    x_dim defaults to d (square unmixing); pass it explicitly when the
    observation has more dimensions than the latent space.  Head output
    layers start at zero by default so the initial regression function is
    identically 0 and the initial loss sits exactly at ln 2.
    """
    rng = np.random.default_rng(seed)
    h_spec = MlpSpec(layer_widths=(x_dim or d, *([width] * hidden_layers), d),
                     activation=activation)
    h = init_mlp(h_spec, rng)
    phis = []
    phi_spec = MlpSpec(layer_widths=(1 + u_dim, *([width] * hidden_layers), 1),
                       activation=activation)
    for _ in range(d):
        p = init_mlp(phi_spec, rng)
        if zero_final_head:
            weights = list(p.weights)
            weights[-1] = np.zeros_like(weights[-1])
            p = MlpParams(weights=tuple(weights), spec=phi_spec)
        phis.append(p)
    return GclModel(h=h, phis=tuple(phis))


def logistic_loss(r_value, d):
    """log(1 + exp(-d r)), elementwise and numerically stable."""
    r_value = np.asarray(r_value, dtype=float)
    d = np.asarray(d)
    if not np.all(np.isin(np.ravel(d), (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    out = np.logaddexp(0.0, -d * r_value)
    return float(out) if out.ndim == 0 else out


def _head_inputs(y_col: np.ndarray, u_rows: np.ndarray) -> np.ndarray:
    return np.concatenate([y_col[:, None], u_rows], axis=1)


def regress_batch(model: GclModel, x_rows: np.ndarray,
                  u_rows: np.ndarray) -> np.ndarray:
    """r(x, u) for every row: sum over heads of phi_i(h_i(x), u)."""
    x_rows = np.asarray(x_rows, dtype=float)
    u_rows = np.asarray(u_rows, dtype=float)
    if x_rows.shape[0] != u_rows.shape[0]:
        raise ValueError("x and u row counts differ")
    y = forward_batch(model.h, x_rows)
    r = np.zeros(x_rows.shape[0])
    for i, phi in enumerate(model.phis):
        r += forward_batch(phi, _head_inputs(y[:, i], u_rows))[:, 0]
    return r


def regress(model: GclModel, x: np.ndarray, u: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.ndim != 1 or u.ndim != 1:
        raise ValueError("regress takes single vectors; use regress_batch for rows")
    return float(regress_batch(model, x[None, :], u[None, :])[0])


def extract_features(model: GclModel, x_rows: np.ndarray) -> np.ndarray:
    """y = h(x) rowwise; the auxiliary variable plays no part."""
    return forward_batch(model.h, np.asarray(x_rows, dtype=float))


def empirical_loss(model: GclModel, batch: SampleBatch) -> float:
    r = regress_batch(model, batch.x, batch.u)
    return float(np.mean(logistic_loss(r, batch.d)))


def contrastive_accuracy(model: GclModel, batch: SampleBatch) -> float:
    """Fraction of rows whose label matches the sign of r."""
    r = regress_batch(model, batch.x, batch.u)
    pred = np.where(r >= 0.0, 1, -1)
    return float(np.mean(pred == batch.d))


def max_abs_regression(model: GclModel, batch: SampleBatch) -> float:
    r = regress_batch(model, batch.x, batch.u)
    return float(np.max(np.abs(r)))


@dataclass
class TrainResult:
    model: GclModel
    loss_trace: list[float]
    holdout_trace: list[float] | None
    alpha_hat: float
    epochs_run: int
    final_loss: float


class _LiveParams:
    """Duck-typed weight container sharing the trainer's mutable arrays."""

    __slots__ = ("weights", "spec")

    def __init__(self, weights: list, spec: MlpSpec):
        self.weights = weights
        self.spec = spec


class _LiveModel:
    """Duck-typed model view over live parameter containers."""

    __slots__ = ("h", "phis")

    def __init__(self, h: _LiveParams, phis: list):
        self.h = h
        self.phis = phis


def _snapshot(h_weights, h_spec, phi_weights, phi_spec) -> GclModel:
    h = MlpParams(weights=tuple(w.copy() for w in h_weights), spec=h_spec)
    phis = tuple(
        MlpParams(weights=tuple(w.copy() for w in ws), spec=phi_spec)
        for ws in phi_weights
    )
    return GclModel(h=h, phis=phis)


def train(model: GclModel, batch: SampleBatch, config: TrainConfig,
          holdout: SampleBatch | None = None) -> TrainResult:
    """Minimize the empirical logistic loss with minibatch Adam.

    Deterministic given config.seed.  The trace holds the initial full-batch
    loss followed by one mean-minibatch loss per epoch.  The last iterate is
    returned, except that a run whose full-batch loss ended up above the
    initial one falls back to the best recorded epoch (or the input model),
    so the returned loss never exceeds the initial loss.  Raises
    TrainingDivergedError (with the epoch index) when the loss stops being
    finite.
    """
    if not (np.any(batch.d == 1) and np.any(batch.d == -1)):
        raise ValueError("training batch must contain both labels")
    rng = np.random.default_rng(config.seed)
    n = batch.n

    h_spec = model.h.spec
    phi_spec = model.phis[0].spec
    h_w = [w.copy() for w in model.h.weights]
    phi_w = [[w.copy() for w in p.weights] for p in model.phis]
    h_adam = AdamBuffers(h_w, learning_rate=config.learning_rate)
    phi_adam = [AdamBuffers(ws, learning_rate=config.learning_rate)
                for ws in phi_w]

    loss0 = empirical_loss(model, batch)
    if not np.isfinite(loss0):
        raise TrainingDivergedError("initial loss is not finite")
    trace = [loss0]
    holdout_trace = None if holdout is None else [empirical_loss(model, holdout)]
    best_loss, best_model = loss0, model
    epochs_run = 0

    h_params = _LiveParams(h_w, h_spec)
    phi_params = [_LiveParams(ws, phi_spec) for ws in phi_w]

    for epoch in range(config.epochs):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb, ub, db = batch.x[idx], batch.u[idx], batch.d[idx]
            m = len(idx)

            # live params share the Adam working arrays, so each minibatch
            # sees the latest weights without any copying
            y, h_cache = forward_cached(h_params, xb)
            r = np.zeros(m)
            phi_caches = []
            for i, phi in enumerate(phi_params):
                out, cache = forward_cached(phi, _head_inputs(y[:, i], ub))
                phi_caches.append(cache)
                r += out[:, 0]
            if not np.all(np.isfinite(r)):
                raise TrainingDivergedError(f"non-finite outputs at epoch {epoch}")
            loss_sum += float(np.sum(np.logaddexp(0.0, -db * r)))

            # d/dr of mean log(1+exp(-d r)) is -d sigmoid(-d r) / m
            dldr = -db * expit(-db * r) / m
            dy = np.zeros_like(y)
            for i in range(len(phi_params)):
                wgrads, in_grad = backward_from_cache(
                    phi_params[i], phi_caches[i], dldr[:, None])
                dy[:, i] = in_grad[:, 0]
                phi_adam[i].step(phi_w[i], wgrads)
            h_grads, _ = backward_from_cache(h_params, h_cache, dy)
            h_adam.step(h_w, h_grads)

        epoch_loss = loss_sum / n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        trace.append(epoch_loss)
        live = _LiveModel(h_params, phi_params)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_model = _snapshot(h_w, h_spec, phi_w, phi_spec)
        epochs_run = epoch + 1
        if holdout_trace is not None:
            holdout_trace.append(empirical_loss(live, holdout))

        if config.early_stop and len(trace) > config.plateau_patience:
            prev = trace[-1 - config.plateau_patience]
            if prev - trace[-1] < config.plateau_rel_tol * max(abs(prev), 1e-12):
                break

    returned = _snapshot(h_w, h_spec, phi_w, phi_spec) if epochs_run else model
    final_loss = empirical_loss(returned, batch)
    if final_loss > loss0:  # wobbly tail: fall back to the best epoch, then input
        returned, final_loss = best_model, empirical_loss(best_model, batch)
        if final_loss > loss0:
            returned, final_loss = model, loss0
    alpha_hat = max_abs_regression(returned, batch)
    return TrainResult(model=returned, loss_trace=trace,
                       holdout_trace=holdout_trace, alpha_hat=alpha_hat,
                       epochs_run=epochs_run, final_loss=final_loss)


# --- model checkpointing --------------------------------------------------------


def model_to_dict(model: GclModel, rng_seed: int | None = None,
                  step_count: int = 0) -> dict:
    return {
        "h": params_to_dict(model.h),
        "phis": [params_to_dict(p) for p in model.phis],
        "rng_seed": rng_seed,
        "step_count": int(step_count),
    }


def model_from_dict(d: dict) -> GclModel:
    return GclModel(h=params_from_dict(d["h"]),
                    phis=tuple(params_from_dict(p) for p in d["phis"]))


def save_model(path, model: GclModel, rng_seed: int | None = None,
               step_count: int = 0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model, rng_seed, step_count), fh)


def load_model(path) -> GclModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
