"""Minimal dense-MLP engine: forward pass, exact backprop, Adam, norm accounting.

Networks are plain weight-matrix stacks (no biases) with a 1-Lipschitz
activation that fixes 0, so a layer's output norm is controlled by the
Frobenius norm of its weight matrix.  Parameter containers are immutable;
optimizer steps return fresh objects.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "leaky_relu", "identity")


class TrainingDivergedError(RuntimeError):
    """Raised when gradients or losses stop being finite."""


def _frozen_array(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a bias-free MLP.

    layer_widths runs from the input width through the output width, so a
    spec with widths (2, 64, 64, 2) has three weight matrices.
    """

    layer_widths: tuple[int, ...]
    activation: str = "leaky_relu"
    leaky_slope: float = 0.2
    final_layer_linear: bool = True

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0.0 < self.leaky_slope < 1.0:
            raise ValueError("leaky slope must lie in (0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activation": self.activation,
            "leaky_slope": self.leaky_slope,
            "final_layer_linear": self.final_layer_linear,
        }

    @staticmethod
    def from_dict(d: dict) -> "MlpSpec":
        return MlpSpec(
            layer_widths=tuple(d["layer_widths"]),
            activation=d["activation"],
            leaky_slope=float(d.get("leaky_slope", 0.2)),
            final_layer_linear=bool(d.get("final_layer_linear", True)),
        )


@dataclass(frozen=True)
class MlpParams:
    """Weights of an MLP.  Arrays are read-only; treat instances as values."""

    weights: tuple[np.ndarray, ...]
    spec: MlpSpec

    def __post_init__(self):
        ws = tuple(_frozen_array(w) for w in self.weights)
        object.__setattr__(self, "weights", ws)
        expected = [
            (self.spec.layer_widths[i + 1], self.spec.layer_widths[i])
            for i in range(self.spec.n_layers)
        ]
        got = [w.shape for w in ws]
        if got != expected:
            raise ValueError(f"weight shapes {got} do not chain with spec {expected}")


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Gaussian init scaled by 1/sqrt(fan_in), keeping early activations O(1)."""
    weights = []
    for i in range(spec.n_layers):
        fan_in = spec.layer_widths[i]
        fan_out = spec.layer_widths[i + 1]
        weights.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
    return MlpParams(weights=tuple(weights), spec=spec)


def zero_mlp(spec: MlpSpec) -> MlpParams:
    weights = tuple(
        np.zeros((spec.layer_widths[i + 1], spec.layer_widths[i]))
        for i in range(spec.n_layers)
    )
    return MlpParams(weights=weights, spec=spec)


def _activate(z: np.ndarray, spec: MlpSpec) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "leaky_relu":
        return np.where(z > 0.0, z, spec.leaky_slope * z)
    return z


def _activate_grad(z: np.ndarray, spec: MlpSpec) -> np.ndarray:
    # subgradient at 0: relu -> 0, leaky -> slope
    if spec.activation == "relu":
        return (z > 0.0).astype(float)
    if spec.activation == "leaky_relu":
        return np.where(z > 0.0, 1.0, spec.leaky_slope)
    return np.ones_like(z)


def _has_activation(spec: MlpSpec, layer_index: int) -> bool:
    last = layer_index == spec.n_layers - 1
    return not (last and spec.final_layer_linear)


def forward_batch(params: MlpParams, x_rows: np.ndarray) -> np.ndarray:
    """Row-wise forward pass: x_rows is (N, in_dim), result is (N, out_dim)."""
    a = np.asarray(x_rows, dtype=float)
    if a.ndim != 2 or a.shape[1] != params.spec.in_dim:
        raise ValueError(
            f"input has shape {a.shape}, expected (N, {params.spec.in_dim})"
        )
    for i, w in enumerate(params.weights):
        z = a @ w.T
        a = _activate(z, params.spec) if _has_activation(params.spec, i) else z
    return a


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Single-vector forward pass."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != params.spec.in_dim:
        raise ValueError(f"input has shape {x.shape}, expected ({params.spec.in_dim},)")
    return forward_batch(params, x[None, :])[0]


def forward_cached(params: MlpParams, x_rows: np.ndarray):
    """Forward pass that keeps per-layer inputs and pre-activations for backprop."""
    a = np.asarray(x_rows, dtype=float)
    if a.ndim != 2 or a.shape[1] != params.spec.in_dim:
        raise ValueError(
            f"input has shape {a.shape}, expected (N, {params.spec.in_dim})"
        )
    inputs = []
    preacts = []
    for i, w in enumerate(params.weights):
        inputs.append(a)
        z = a @ w.T
        preacts.append(z)
        a = _activate(z, params.spec) if _has_activation(params.spec, i) else z
    return a, (inputs, preacts)


def backward_from_cache(params: MlpParams, cache, output_grad: np.ndarray):
    """Reverse-mode pass from cached forward state.

    output_grad is (N, out_dim); returns per-layer weight gradients (summed
    over the batch) and the gradient w.r.t. the input rows (N, in_dim).
    """
    inputs, preacts = cache
    delta = np.asarray(output_grad, dtype=float)
    if delta.shape != preacts[-1].shape:
        raise ValueError(
            f"output_grad has shape {delta.shape}, expected {preacts[-1].shape}"
        )
    weight_grads: list[np.ndarray] = [np.empty(0)] * params.spec.n_layers
    for i in range(params.spec.n_layers - 1, -1, -1):
        if _has_activation(params.spec, i):
            delta = delta * _activate_grad(preacts[i], params.spec)
        weight_grads[i] = delta.T @ inputs[i]
        delta = delta @ params.weights[i]
    return weight_grads, delta


def backward(params: MlpParams, x: np.ndarray, output_grad: np.ndarray):
    """Gradients of <output_grad, forward(x)> w.r.t. weights and input."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(output_grad, dtype=float)
    if x.ndim != 1 or x.shape[0] != params.spec.in_dim:
        raise ValueError(f"input has shape {x.shape}, expected ({params.spec.in_dim},)")
    if g.ndim != 1 or g.shape[0] != params.spec.out_dim:
        raise ValueError(
            f"output_grad has shape {g.shape}, expected ({params.spec.out_dim},)"
        )
    _, cache = forward_cached(params, x[None, :])
    wgrads, xgrad = backward_from_cache(params, cache, g[None, :])
    return wgrads, xgrad[0]


def frobenius_norms(params: MlpParams) -> list[float]:
    """Per-layer Frobenius norms, the measured stand-ins for the layer bounds."""
    return [float(np.linalg.norm(w)) for w in params.weights]


@dataclass(frozen=True)
class AdamState:
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    step_count: int = 0
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if min(self.learning_rate, self.beta1, self.beta2, self.epsilon) <= 0:
            raise ValueError("Adam hyperparameters must be positive")
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")


def init_adam(params: MlpParams, learning_rate: float = 5e-4,
              beta1: float = 0.9, beta2: float = 0.999,
              epsilon: float = 1e-8) -> AdamState:
    zeros = tuple(np.zeros_like(w) for w in params.weights)
    return AdamState(
        first_moment=zeros,
        second_moment=tuple(np.zeros_like(w) for w in params.weights),
        step_count=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params: MlpParams, grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias correction.  Returns fresh params and state."""
    if len(grads) != len(params.weights):
        raise ValueError("gradient list length does not match weights")
    t = state.step_count + 1
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(params.weights, grads, state.first_moment,
                          state.second_moment):
        g = np.asarray(g, dtype=float)
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} != weight shape {w.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient entries")
        m2 = state.beta1 * m + (1.0 - state.beta1) * g
        v2 = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m2 / (1.0 - state.beta1 ** t)
        v_hat = v2 / (1.0 - state.beta2 ** t)
        new_w.append(w - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m2)
        new_v.append(v2)
    params2 = MlpParams(weights=tuple(new_w), spec=params.spec)
    state2 = replace(state, first_moment=tuple(new_m),
                     second_moment=tuple(new_v), step_count=t)
    return params2, state2


class AdamBuffers:
    """Mutable Adam workspace for hot training loops.

    Applies exactly the same update (same floating-point operation order) as
    adam_step, but mutates a private list of weight arrays in place instead
    of allocating fresh params each step.
    """

    def __init__(self, weights: list[np.ndarray], learning_rate: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.m = [np.zeros_like(w) for w in weights]
        self.v = [np.zeros_like(w) for w in weights]
        self.t = 0
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def step(self, weights: list[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for w, g, m, v in zip(weights, grads, self.m, self.v):
            if not np.all(np.isfinite(g)):
                raise TrainingDivergedError("non-finite gradient entries")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            np.sqrt(v_hat, out=v_hat)
            v_hat += self.epsilon
            m_hat *= self.lr
            m_hat /= v_hat
            w -= m_hat


# --- checkpoint serialization -------------------------------------------------
#
# Weights travel as row-major flat lists.  json writes shortest round-trip
# decimal floats, so load(save(p)) reproduces the arrays bit for bit.

def params_to_dict(params: MlpParams, rng_seed: int | None = None,
                   step_count: int = 0) -> dict:
    return {
        "spec": params.spec.to_dict(),
        "weights": [w.ravel(order="C").tolist() for w in params.weights],
        "rng_seed": rng_seed,
        "step_count": int(step_count),
    }


def params_from_dict(d: dict) -> MlpParams:
    spec = MlpSpec.from_dict(d["spec"])
    weights = []
    for i, flat in enumerate(d["weights"]):
        shape = (spec.layer_widths[i + 1], spec.layer_widths[i])
        weights.append(np.asarray(flat, dtype=float).reshape(shape))
    return MlpParams(weights=tuple(weights), spec=spec)


def save_checkpoint(path, params: MlpParams, rng_seed: int | None = None,
                    step_count: int = 0) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(params_to_dict(params, rng_seed, step_count), fh)


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return params_from_dict(d), {"rng_seed": d.get("rng_seed"),
                                 "step_count": d.get("step_count", 0)}
