"""Seeded teacher-student classification model used by every experiment.

The trainable model is a plain feed-forward classifier whose four weight
matrices are the compression targets.  Everything is numpy float64 and
deterministic: same seed, same config, bit-identical parameters.
Parameters are snapped to the float32 grid at init and after training so
checkpoints (which store float32) round-trip exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compression import LayerSpec
from .exceptions import NumericError, ValidationError
from .linalg import TruncatedFactors

INPUT_DIM = 32
HIDDEN_DIMS = (256, 256, 256)
NUM_CLASSES = 10
TEACHER_HIDDEN = 64
TRAIN_SIZE = 4096
TEST_SIZE = 1024

# Loss curvature along either factor of a u_k @ w_k pair scales with the
# squared leading singular value of the other factor (around 10 for the
# trained weights here), so factor updates take a reduced step to stay in
# the stable region of the learning rates that work densely.
FACTOR_LR_SCALE = 0.1

REFERENCE_DIMS = (INPUT_DIM, *HIDDEN_DIMS, NUM_CLASSES)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray   # (n, d)
    labels: np.ndarray   # (n,) int64 class indices
    split: str

    def __post_init__(self):
        n = self.inputs.shape[0]
        if n < 1 or self.labels.shape != (n,):
            raise ValidationError("inputs/labels shape mismatch")
        if self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES:
            raise ValidationError("labels outside class range")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 0.05
    lr_schedule: str = "constant"      # "constant" | "cyclic"
    reset_period: int | None = None    # cyclic only; must divide epochs
    seed: int = 0
    mode: str = "full"                 # "full" | "factorized"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValidationError("bad training config")
        if self.lr_schedule not in ("constant", "cyclic"):
            raise ValidationError(f"unknown lr schedule {self.lr_schedule!r}")
        if self.mode not in ("full", "factorized"):
            raise ValidationError(f"unknown training mode {self.mode!r}")
        if self.lr_schedule == "cyclic":
            if not self.reset_period or self.reset_period < 1:
                raise ValidationError("cyclic schedule needs a reset period")
            if self.epochs % self.reset_period != 0:
                raise ValidationError("reset period must divide epochs")


def _snap(values: np.ndarray) -> np.ndarray:
    # float32 grid, float64 arithmetic: keeps checkpoints lossless.
    return values.astype(np.float32).astype(np.float64)


def _teacher_weights(seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((INPUT_DIM, TEACHER_HIDDEN)) / math.sqrt(INPUT_DIM)
    w2 = rng.standard_normal((TEACHER_HIDDEN, NUM_CLASSES)) / math.sqrt(TEACHER_HIDDEN)
    return w1, w2


def _teacher_labels(inputs: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    return np.argmax(np.tanh(inputs @ w1) @ w2, axis=1).astype(np.int64)


def generate_dataset(seed: int) -> tuple[Dataset, Dataset]:
    """Teacher-labelled gaussian data; train and test cut from one stream."""
    w1, w2 = _teacher_weights(seed)
    rng = np.random.default_rng(seed)
    rng.standard_normal((INPUT_DIM, TEACHER_HIDDEN))  # advance past teacher draws
    rng.standard_normal((TEACHER_HIDDEN, NUM_CLASSES))
    inputs = rng.standard_normal((TRAIN_SIZE + TEST_SIZE, INPUT_DIM))
    labels = _teacher_labels(inputs, w1, w2)
    train = Dataset(inputs[:TRAIN_SIZE].copy(), labels[:TRAIN_SIZE].copy(), "train")
    test = Dataset(inputs[TRAIN_SIZE:].copy(), labels[TRAIN_SIZE:].copy(), "test")
    return train, test


def reference_layer_specs(dims: tuple[int, ...] = REFERENCE_DIMS) -> tuple[LayerSpec, ...]:
    return tuple(
        LayerSpec(name=f"w{i + 1}", rows=dims[i], cols=dims[i + 1], searchable=True)
        for i in range(len(dims) - 1)
    )


@dataclass
class CompressibleModel:
    """Feed-forward classifier whose weight matrices may be factor pairs.

    ``params`` maps w1..wL to dense matrices or TruncatedFactors and
    b1..bL to bias vectors.  The forward pass and loss are pure; training
    happens through :func:`train`, which returns a new model.
    """

    dims: tuple[int, ...]
    params: dict = field(default_factory=dict)

    @property
    def layer_specs(self) -> tuple[LayerSpec, ...]:
        return reference_layer_specs(self.dims)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    def storage(self, name: str) -> str:
        return "factorized" if isinstance(self.params[name], TruncatedFactors) else "full"

    @property
    def fully_dense(self) -> bool:
        return all(self.storage(f"w{i + 1}") == "full" for i in range(self.num_layers))

    def weight_matrices(self) -> dict[str, np.ndarray]:
        """Dense weight map; only valid while every layer is dense."""
        out = {}
        for i in range(self.num_layers):
            name = f"w{i + 1}"
            value = self.params[name]
            if isinstance(value, TruncatedFactors):
                raise ValidationError(f"layer {name} is factorized, not dense")
            out[name] = value
        return out

    def with_weights(self, weights: dict) -> "CompressibleModel":
        """New model with w1..wL replaced (dense or factorized), biases kept."""
        params = dict(self.params)
        for i in range(self.num_layers):
            name = f"w{i + 1}"
            params[name] = weights[name]
        return CompressibleModel(dims=self.dims, params=params)

    def copy(self) -> "CompressibleModel":
        params = {}
        for name, value in self.params.items():
            if isinstance(value, TruncatedFactors):
                params[name] = TruncatedFactors(value.rank, value.u_k.copy(), value.w_k.copy())
            else:
                params[name] = value.copy()
        return CompressibleModel(dims=self.dims, params=params)

    def scheme(self) -> tuple:
        """Rank choices currently embodied by the parameters."""
        out = []
        for i in range(self.num_layers):
            value = self.params[f"w{i + 1}"]
            out.append(value.rank if isinstance(value, TruncatedFactors) else None)
        return tuple(out)

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        a = inputs
        last = self.num_layers - 1
        for i in range(self.num_layers):
            z = _apply_weight(a, self.params[f"w{i + 1}"]) + self.params[f"b{i + 1}"]
            a = np.maximum(z, 0.0) if i < last else z
        return a


def _apply_weight(a: np.ndarray, weight) -> np.ndarray:
    if isinstance(weight, TruncatedFactors):
        return (a @ weight.u_k) @ weight.w_k
    return a @ weight


def init_reference_model(seed: int) -> CompressibleModel:
    """Fresh dense classifier with fan-in-scaled gaussian weights."""
    rng = np.random.default_rng(seed)
    dims = REFERENCE_DIMS
    params = {}
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        params[f"w{i + 1}"] = _snap(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
        params[f"b{i + 1}"] = np.zeros(fan_out)
    return CompressibleModel(dims=dims, params=params)


def evaluate(model: CompressibleModel, data: Dataset) -> float:
    """Misclassification rate; read-only."""
    logits = model.forward(data.inputs)
    if not np.isfinite(logits).all():
        raise NumericError("non-finite activations during evaluation")
    preds = np.argmax(logits, axis=1)
    return float(np.mean(preds != data.labels))


def _softmax_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and d(loss)/d(logits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    picked = shifted[np.arange(n), labels] - np.log(exp.sum(axis=1))
    loss = float(-picked.mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def loss_and_gradients(
    model: CompressibleModel, inputs: np.ndarray, labels: np.ndarray
) -> tuple[float, dict]:
    """Cross-entropy loss and gradients for every parameter tensor.

    Factorized layers contribute gradients for both factors, keyed
    ``w{i}.u`` and ``w{i}.w``; dense layers just ``w{i}``.
    """
    loss, grads, _ = _forward_backward(model, inputs, labels)
    return loss, grads


def _forward_backward(
    model: CompressibleModel, inputs: np.ndarray, labels: np.ndarray
) -> tuple[float, dict, np.ndarray]:
    last = model.num_layers - 1
    acts = [inputs]
    hidden_inputs = []  # per factorized layer: activations @ u_k
    pre_relu = []
    a = inputs
    for i in range(model.num_layers):
        weight = model.params[f"w{i + 1}"]
        if isinstance(weight, TruncatedFactors):
            h = a @ weight.u_k
            z = h @ weight.w_k + model.params[f"b{i + 1}"]
            hidden_inputs.append(h)
        else:
            z = a @ weight + model.params[f"b{i + 1}"]
            hidden_inputs.append(None)
        pre_relu.append(z)
        a = np.maximum(z, 0.0) if i < last else z
        acts.append(a)

    loss, delta = _softmax_loss(pre_relu[-1], labels)
    grads: dict = {}
    for i in reversed(range(model.num_layers)):
        weight = model.params[f"w{i + 1}"]
        grads[f"b{i + 1}"] = delta.sum(axis=0)
        if isinstance(weight, TruncatedFactors):
            grads[f"w{i + 1}.w"] = hidden_inputs[i].T @ delta
            grads[f"w{i + 1}.u"] = acts[i].T @ (delta @ weight.w_k.T)
            back = (delta @ weight.w_k.T) @ weight.u_k.T
        else:
            grads[f"w{i + 1}"] = acts[i].T @ delta
            back = delta @ weight.T
        if i > 0:
            back = back * (pre_relu[i - 1] > 0.0)
        delta = back
    return loss, grads, pre_relu[-1]


def loss_value(model: CompressibleModel, inputs: np.ndarray, labels: np.ndarray) -> float:
    loss, _ = _softmax_loss(model.forward(inputs), labels)
    return loss


def epoch_learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Schedule value for one epoch; cyclic = cosine decay per period."""
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    t = epoch % cfg.reset_period
    return 0.5 * cfg.learning_rate * (1.0 + math.cos(math.pi * t / cfg.reset_period))


@dataclass(frozen=True)
class TrainResult:
    model: CompressibleModel
    losses: tuple[float, ...]          # mean batch loss per epoch
    errors: tuple[float, ...]          # running train error per epoch
    learning_rates: tuple[float, ...]  # schedule value per epoch


def train(model: CompressibleModel, train_data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Mini-batch SGD; returns a new trained model plus per-epoch curves.

    Factorized layers keep their ranks: gradients update the two factors
    in place of the dense matrix, stepped at ``lr * FACTOR_LR_SCALE``.
    Batch order comes from a dedicated generator seeded by ``cfg.seed``.
    """
    if cfg.mode == "full" and not model.fully_dense:
        raise ValidationError("mode 'full' requires every layer dense")
    out = model.copy()
    if cfg.epochs == 0:
        return TrainResult(out, (), (), ())

    rng = np.random.default_rng(cfg.seed)
    n = train_data.inputs.shape[0]
    losses, errors, lrs = [], [], []
    for epoch in range(cfg.epochs):
        lr = epoch_learning_rate(cfg, epoch)
        perm = rng.permutation(n)
        epoch_loss = 0.0
        wrong = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            x = train_data.inputs[idx]
            y = train_data.labels[idx]
            loss, grads, logits = _forward_backward(out, x, y)
            if not math.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}", detail=epoch)
            epoch_loss += loss * len(idx)
            wrong += int(np.sum(np.argmax(logits, axis=1) != y))  # pre-update error
            _sgd_step(out, grads, lr)
        losses.append(epoch_loss / n)
        errors.append(wrong / n)
        lrs.append(lr)

    for name, value in out.params.items():
        if isinstance(value, TruncatedFactors):
            out.params[name] = TruncatedFactors(value.rank, _snap(value.u_k), _snap(value.w_k))
        else:
            out.params[name] = _snap(value)
    return TrainResult(out, tuple(losses), tuple(errors), tuple(lrs))


def _sgd_step(model: CompressibleModel, grads: dict, lr: float) -> None:
    for i in range(model.num_layers):
        name = f"w{i + 1}"
        weight = model.params[name]
        if isinstance(weight, TruncatedFactors):
            step = lr * FACTOR_LR_SCALE
            model.params[name] = TruncatedFactors(
                weight.rank,
                weight.u_k - step * grads[f"{name}.u"],
                weight.w_k - step * grads[f"{name}.w"],
            )
        else:
            weight -= lr * grads[name]
        model.params[f"b{i + 1}"] -= lr * grads[f"b{i + 1}"]
