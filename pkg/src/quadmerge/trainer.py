"""Tiny dense binary classifiers fine-tuned from a shared base.

Produces real fine-tuned checkpoints for the merger: a tanh MLP with a
logistic output, trained on a summed binary cross-entropy plus an L2 pull
toward the pretrained weights, with the AdamW update applied literally
(no bias correction unless ``bias_correction`` is set).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .checkpoint import Checkpoint

__all__ = [
    "INPUT_DIM",
    "HIDDEN_DIM",
    "TinyModel",
    "OptimState",
    "TrainConfig",
    "TrainingDivergedError",
    "init_model",
    "predict_proba",
    "accuracy",
    "sft_loss",
    "adamw_step",
    "train",
    "make_task_dataset",
]

log = logging.getLogger(__name__)

INPUT_DIM = 4
HIDDEN_DIM = 8
PROB_CLAMP = 1e-12

Params = dict[str, np.ndarray]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TinyModel:
    """Dense layers ``l{i}.w`` (out x in) and ``l{i}.b``; tanh between, logistic on top.

    The default architecture is ``input -> hidden -> 1``. A single layer gives
    plain logistic regression.
    """

    params: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        params = {k: np.array(v, dtype=np.float64) for k, v in self.params.items()}
        object.__setattr__(self, "params", params)
        n = self.n_layers
        if n == 0 or set(params) != {f"l{i}.{s}" for i in range(n) for s in "wb"}:
            raise ValueError(f"expected parameters l0.w, l0.b, ...; got {sorted(params)}")
        fan_in = params["l0.w"].shape[1]
        for i in range(n):
            w, b = params[f"l{i}.w"], params[f"l{i}.b"]
            if w.ndim != 2 or w.shape[1] != fan_in or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape}, {b.shape}")
            fan_in = w.shape[0]
        if fan_in != 1:
            raise ValueError("last layer must have a single output")

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    @property
    def input_dim(self) -> int:
        return self.params["l0.w"].shape[1]

    def to_checkpoint(self, dtype: str = "F64") -> Checkpoint:
        return Checkpoint.from_arrays(self.params, dtype=dtype)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "TinyModel":
        return cls({name: ckpt[name].array() for name in ckpt.names()})


def init_model(seed: int, input_dim: int = INPUT_DIM, hidden_dim: int = HIDDEN_DIM) -> TinyModel:
    """Random base model; ``hidden_dim=0`` drops the hidden layer."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, hidden_dim, 1] if hidden_dim else [input_dim, 1]
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"l{i}.w"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
        params[f"l{i}.b"] = np.zeros(fan_out)
    return TinyModel(params)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params: Mapping[str, np.ndarray], x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    n = len(params) // 2
    acts = [x]
    a = x
    for i in range(n):
        z = a @ params[f"l{i}.w"].T + params[f"l{i}.b"]
        if i < n - 1:
            a = np.tanh(z)
            acts.append(a)
    return acts, _sigmoid(z[:, 0])


def predict_proba(model: TinyModel, x: np.ndarray) -> np.ndarray:
    return _forward(model.params, np.atleast_2d(np.asarray(x, dtype=np.float64)))[1]


def accuracy(model: TinyModel, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((predict_proba(model, x) >= 0.5) == (np.asarray(y) == 1)))


def sft_loss(
    theta: TinyModel,
    theta_pre: TinyModel,
    x: np.ndarray,
    y: np.ndarray,
    reg_lambda: float,
) -> tuple[float, Params]:
    """Summed BCE over the batch plus ``reg_lambda * ||theta - theta_pre||^2``.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]`` before the logs;
    clamped samples contribute no gradient.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError("batch must be non-empty with one label per row")
    if np.isnan(x).any() or np.isnan(y).any():
        raise ValueError("NaN in batch")
    if any(np.isnan(v).any() for v in theta.params.values()):
        raise ValueError("NaN in parameters")

    params = theta.params
    acts, p = _forward(params, x)
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    loss = -float(np.sum(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)))

    grads: Params = {}
    live = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dz = np.where(live, p - y, 0.0)[:, None]
    for i in reversed(range(theta.n_layers)):
        a_prev = acts[i]
        grads[f"l{i}.w"] = dz.T @ a_prev
        grads[f"l{i}.b"] = dz.sum(axis=0)
        if i > 0:
            dz = (dz @ params[f"l{i}.w"]) * (1.0 - a_prev**2)

    for name, value in params.items():
        diff = value - theta_pre.params[name]
        loss += reg_lambda * float(np.sum(diff * diff))
        grads[name] = grads[name] + 2.0 * reg_lambda * diff
    return loss, {name: grads[name] for name in sorted(grads)}


@dataclass(frozen=True)
class OptimState:
    m: Mapping[str, np.ndarray]
    v: Mapping[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    eta: float = 1e-2
    weight_decay: float = 0.0
    bias_correction: bool = False

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], **hyper) -> "OptimState":
        return cls(
            {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
            {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()},
            **hyper,
        )


def adamw_step(
    theta: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimState
) -> tuple[Params, OptimState]:
    """One AdamW update; returns new parameters and state, inputs untouched.

    ``theta - eta * m / (sqrt(v) + eps) - eta * weight_decay * theta``, with
    ``m`` and ``v`` already updated from ``grads``. With ``bias_correction``
    the moments are divided by ``1 - beta**step`` first, as in the usual
    formulation.
    """
    if set(theta) != set(grads) or set(theta) != set(state.m):
        raise ValueError("parameters, gradients and optimizer state disagree on names")
    step = state.step + 1
    new_theta, new_m, new_v = {}, {}, {}
    for name in theta:
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_use, v_use = m, v
        if state.bias_correction:
            m_use = m / (1.0 - state.beta1**step)
            v_use = v / (1.0 - state.beta2**step)
        t = theta[name]
        new_theta[name] = (
            t - state.eta * m_use / (np.sqrt(v_use) + state.epsilon) - state.eta * state.weight_decay * t
        )
        new_m[name], new_v[name] = m, v
    return new_theta, replace(state, m=new_m, v=new_v, step=step)


@dataclass(frozen=True)
class TrainConfig:
    reg_lambda: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    eta: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    bias_correction: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not (self.eta > 0 and self.epsilon > 0):
            raise ValueError("learning rate and epsilon must be positive")
        if self.reg_lambda < 0 or self.weight_decay < 0:
            raise ValueError("reg_lambda and weight_decay must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


def train(
    theta_pre: TinyModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    history: list[float] | None = None,
) -> Checkpoint:
    """Fine-tune a copy of ``theta_pre`` with shuffled mini-batches.

    Deterministic in ``(theta_pre, data, cfg)``. If ``history`` is given, the
    full-dataset loss after each epoch is appended to it.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    params: Params = {k: v.copy() for k, v in theta_pre.params.items()}
    state = OptimState.zeros_like(
        params,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
        eta=cfg.eta,
        weight_decay=cfg.weight_decay,
        bias_correction=cfg.bias_correction,
    )
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = sft_loss(TinyModel(params), theta_pre, x[idx], y[idx], cfg.reg_lambda)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} in epoch {epoch}")
            params, state = adamw_step(params, grads, state)
        if history is not None:
            history.append(sft_loss(TinyModel(params), theta_pre, x, y, cfg.reg_lambda)[0])
    log.debug("trained %d epochs, %d steps", cfg.epochs, state.step)
    return TinyModel(params).to_checkpoint()


# which half of the input coordinates each task occupies
_TASK_SUPPORT = {"A": 0, "B": 1}


def make_task_dataset(
    task_id: str, n: int, seed: int, input_dim: int = INPUT_DIM
) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic binary task: features ``(n, input_dim)`` and labels in {0, 1}.

    Task A draws features on the first half of the coordinates, task B on the
    second half; the other half is zero. Labels come from a fixed hyperplane
    through the origin, so both tasks are linearly separable and a model
    tuned on one task learns nothing about the other.
    """
    if task_id not in _TASK_SUPPORT:
        raise ValueError(f"unknown task {task_id!r}; expected 'A' or 'B'")
    if n <= 0:
        raise ValueError("n must be positive")
    if input_dim < 2 or input_dim % 2:
        raise ValueError("input_dim must be an even number >= 2")
    half = input_dim // 2
    rng = np.random.default_rng([seed, _TASK_SUPPORT[task_id]])
    lo = _TASK_SUPPORT[task_id] * half
    x = np.zeros((n, input_dim))
    x[:, lo : lo + half] = rng.normal(size=(n, half))
    normal = np.zeros(input_dim)
    normal[lo : lo + half] = np.where(np.arange(half) % 2 == 0, 1.0, -1.0)
    y = (x @ normal > 0).astype(np.float64)
    return x, y
