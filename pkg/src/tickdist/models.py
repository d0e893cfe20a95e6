"""The three sequence classifiers: TCN, attention-pooled TCN, and LSTM.

A model maps a window of one-hot price-change classes [5, W] to a
five-class probability vector.  The TCN trunk stacks residual blocks with
doubling dilations behind a 1x1 input projection; the plain TCN classifies
from the last time step, the attention variant from a pooled context
vector, and the LSTM baseline from its final hidden state.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from tickdist import checkpoint
from tickdist.data import N_CLASSES, StockDataset, WindowSet
from tickdist.engine import (
    ParameterSet,
    Tape,
    Tensor,
    adam_step,
    attention_pool,
    causal_dilated_conv1d,
    cross_entropy,
    last_step,
    linear,
    lstm_forward,
    residual_block,
    softmax,
    sum_all,
)

EVAL_BATCH = 1024


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class ModelKind(Enum):
    TCN = "tcn"
    TCN_ATTENTION = "tcn_attention"
    LSTM = "lstm"

    @classmethod
    def parse(cls, label: str) -> "ModelKind":
        norm = label.strip().lower().replace("(", "_").replace(")", "").replace("-", "_")
        if norm in ("tcn_attention", "tcn_attn", "attention_tcn"):
            return cls.TCN_ATTENTION
        return cls(norm)

    @property
    def label(self) -> str:
        return {"tcn": "TCN", "tcn_attention": "TCN (attention)", "lstm": "LSTM"}[self.value]


@dataclass(frozen=True)
class ModelConfig:
    kind: ModelKind = ModelKind.TCN
    blocks: int = 4
    kernel_size: int = 3
    channels: int = 64
    dilations: Optional[tuple] = None  # default: 1, 2, 4, ..., 2^(blocks-1)
    dropout: float = 0.1
    window: int = 64
    classes: int = N_CLASSES
    hidden: int = 64
    layers: int = 1

    def __post_init__(self):
        if self.classes != N_CLASSES:
            raise ValueError(f"class count is fixed at {N_CLASSES}")
        for name in ("blocks", "kernel_size", "channels", "window", "hidden", "layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kind is not ModelKind.LSTM:
            if len(self.dilation_schedule()) != self.blocks:
                raise ValueError("dilation schedule length must equal the block count")
            rf = receptive_field(self)
            if rf > self.window:
                raise ValueError(f"receptive field {rf} exceeds window {self.window}")

    def dilation_schedule(self) -> tuple:
        if self.dilations is not None:
            return tuple(int(d) for d in self.dilations)
        return tuple(2**i for i in range(self.blocks))


def receptive_field(config: ModelConfig) -> int:
    """Past steps visible to the last output: 1 + sum_i 2*(k-1)*d_i."""
    if config.kind is ModelKind.LSTM:
        raise ValueError("receptive field is unbounded for the LSTM kind")
    k = config.kernel_size
    return 1 + sum(2 * (k - 1) * d for d in config.dilation_schedule())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 42
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")


@dataclass
class TrainedModel:
    config: ModelConfig
    params: ParameterSet
    loss_history: list = field(default_factory=list)


def _he_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build(config: ModelConfig, seed: int) -> TrainedModel:
    """Deterministically initialized, untrained model.

    Hidden weights use He-uniform fan-in scaling; the classifier head is
    initialized near zero so an untrained model emits a near-uniform
    distribution (first-epoch loss starts at ~ln 5).
    """
    rng = np.random.default_rng(seed)
    params = ParameterSet()
    k = config.kernel_size
    ch = config.channels
    if config.kind is ModelKind.LSTM:
        h = config.hidden
        c_in = config.classes
        for layer in range(config.layers):
            params.add(f"lstm{layer}.wx", rng.uniform(-1, 1, size=(4 * h, c_in)) / np.sqrt(h))
            params.add(f"lstm{layer}.wh", rng.uniform(-1, 1, size=(4 * h, h)) / np.sqrt(h))
            b = np.zeros(4 * h)
            b[h : 2 * h] = 1.0  # open forget gates at the start
            params.add(f"lstm{layer}.b", b)
            c_in = h
        head_in = h
    else:
        params.add("proj.w", _he_uniform(rng, (ch, config.classes, 1), config.classes))
        params.add("proj.b", np.zeros(ch))
        for i in range(config.blocks):
            params.add(f"block{i}.conv1.w", _he_uniform(rng, (ch, ch, k), ch * k))
            params.add(f"block{i}.conv1.b", np.zeros(ch))
            params.add(f"block{i}.conv2.w", _he_uniform(rng, (ch, ch, k), ch * k))
            params.add(f"block{i}.conv2.b", np.zeros(ch))
        if config.kind is ModelKind.TCN_ATTENTION:
            params.add("attn.w", _he_uniform(rng, (ch, ch), ch))
            params.add("attn.v", _he_uniform(rng, (ch,), ch))
        head_in = ch
    params.add("head.w", rng.uniform(-0.01, 0.01, size=(config.classes, head_in)))
    params.add("head.b", np.zeros(config.classes))
    return TrainedModel(config=config, params=params)


def _tcn_trunk(
    model: TrainedModel,
    x: Tensor,
    tape: Optional[Tape],
    training: bool,
    rng: Optional[np.random.Generator],
) -> Tensor:
    p = model.params
    cfg = model.config
    h = causal_dilated_conv1d(tape, x, p["proj.w"], p["proj.b"], 1)
    for i, d in enumerate(cfg.dilation_schedule()):
        h = residual_block(
            tape,
            h,
            p[f"block{i}.conv1.w"],
            p[f"block{i}.conv1.b"],
            p[f"block{i}.conv2.w"],
            p[f"block{i}.conv2.b"],
            dilation=d,
            dropout_rate=cfg.dropout,
            rng=rng,
            training=training,
        )
    return h


def _lstm_trunk(model: TrainedModel, x: Tensor, tape: Optional[Tape]) -> Tensor:
    p = model.params
    h = x
    for layer in range(model.config.layers):
        h = lstm_forward(tape, h, p[f"lstm{layer}.wx"], p[f"lstm{layer}.wh"], p[f"lstm{layer}.b"])
    return h


def sequence_outputs(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    """The model's sequence-valued stage: trunk output (TCN kinds) or hidden
    states (LSTM).  Used by causality checks; one output column per input
    column."""
    x = Tensor(features)
    if model.config.kind is ModelKind.LSTM:
        out = _lstm_trunk(model, x, None)
    else:
        out = _tcn_trunk(model, x, None, training=False, rng=None)
    return out.values


def forward(
    model: TrainedModel,
    features: np.ndarray,
    tape: Optional[Tape] = None,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Class distribution(s) for a feature window [5, W] or batch [B, 5, W]."""
    p = model.params
    x = Tensor(features)
    if model.config.kind is ModelKind.LSTM:
        feat = last_step(tape, _lstm_trunk(model, x, tape))
    else:
        h = _tcn_trunk(model, x, tape, training, rng)
        if model.config.kind is ModelKind.TCN_ATTENTION:
            feat, _ = attention_pool(tape, h, p["attn.w"], p["attn.v"])
        else:
            feat = last_step(tape, h)
    return softmax(tape, linear(tape, feat, p["head.w"], p["head.b"]))


def train(model: TrainedModel, dataset: StockDataset, train_config: TrainConfig) -> TrainedModel:
    """Mini-batch cross-entropy training over the chronological train split.

    Sample order is reshuffled each epoch with a seeded generator (or kept
    chronological when `shuffle` is off); test samples are never touched.
    Raises TrainingDivergedError with diagnostics if the loss leaves the
    finite range.
    """
    samples = dataset.train_samples
    n = len(samples)
    if n == 0:
        raise ValueError("train split is empty")
    order_rng = np.random.default_rng([train_config.seed, 0])
    dropout_rng = np.random.default_rng([train_config.seed, 1])
    for epoch in range(1, train_config.epochs + 1):
        order = order_rng.permutation(n) if train_config.shuffle else np.arange(n)
        for step, start in enumerate(range(0, n, train_config.batch_size)):
            idx = order[start : start + train_config.batch_size]
            feats, onehot = samples.feature_batch(idx)
            tape = Tape()
            try:
                probs = forward(model, feats, tape, training=True, rng=dropout_rng)
                loss = cross_entropy(tape, probs, onehot)
            except ValueError as exc:
                if "finite" not in str(exc):
                    raise
                raise TrainingDivergedError(_diverged_msg(model, epoch, step)) from None
            loss_value = float(loss.values)
            if not np.isfinite(loss_value):
                raise TrainingDivergedError(_diverged_msg(model, epoch, step))
            tape.backward(loss)
            adam_step(model.params, train_config.learning_rate)
            model.loss_history.append((epoch, step, loss_value))
    return model


def _diverged_msg(model: TrainedModel, epoch: int, step: int) -> str:
    norms = {name: float(np.linalg.norm(t.values)) for name, t in model.params.items()}
    return f"non-finite loss at epoch {epoch}, batch {step}; parameter norms: {norms}"


def predict_proba(model: TrainedModel, samples: WindowSet) -> np.ndarray:
    """Evaluation-mode class distributions, one row per sample."""
    out = np.empty((len(samples), model.config.classes))
    for start in range(0, len(samples), EVAL_BATCH):
        idx = np.arange(start, min(start + EVAL_BATCH, len(samples)))
        feats, _ = samples.feature_batch(idx)
        out[idx] = forward(model, feats).values
    return out


def predict_test(model: TrainedModel, dataset: StockDataset) -> list:
    """(distribution, true label) pairs over the test split, in order."""
    if dataset.test_samples.window_length != model.config.window:
        raise ValueError(
            f"dataset window {dataset.test_samples.window_length} != model window {model.config.window}"
        )
    probs = predict_proba(model, dataset.test_samples)
    return [(probs[i], int(dataset.test_samples.targets[i])) for i in range(len(probs))]


def measure_receptive_field(config: ModelConfig, t_len: Optional[int] = None) -> int:
    """Receptive field measured from the input-gradient mask of the trunk.

    Weights are replaced by strictly positive values and biases by a small
    positive constant so every ReLU passes gradient, making the measured
    mask the exact structural support.
    """
    model = build(dataclasses.replace(config, dropout=0.0, window=max(config.window, t_len or 0)), seed=0)
    for name, tensor in model.params.items():
        if name.endswith(".b"):
            tensor.values = np.full_like(tensor.values, 0.1)
        else:
            tensor.values = np.abs(tensor.values) + 0.01
    t_len = t_len or model.config.window
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(0.1, 1.0, size=(config.classes, t_len)), requires_grad=True)
    tape = Tape()
    h = _tcn_trunk(model, x, tape, training=False, rng=None)
    tape.backward(sum_columns_last(tape, h))
    mask = np.any(np.abs(x.grad) > 0.0, axis=0)
    return int(mask.sum())


def sum_columns_last(tape: Optional[Tape], h: Tensor) -> Tensor:
    """Scalar sum of the final time column (loss surrogate for field checks)."""
    return sum_all(tape, last_step(tape, h))


def save_model(model: TrainedModel, path: str | Path, train_config: Optional[TrainConfig] = None) -> None:
    """Checkpoint container plus a JSON sidecar with the exact configs."""
    path = Path(path)
    checkpoint.save_tensors(path, {name: t.values for name, t in model.params.items()})
    sidecar = {
        "model_config": _config_to_json(model.config),
        "train_config": dataclasses.asdict(train_config) if train_config else None,
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_model(path: str | Path) -> TrainedModel:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    config = _config_from_json(sidecar["model_config"])
    model = build(config, seed=0)
    model.params.load_value_dict(checkpoint.load_tensors(path))
    return model


def _config_to_json(config: ModelConfig) -> dict:
    d = dataclasses.asdict(config)
    d["kind"] = config.kind.value
    return d


def _config_from_json(d: dict) -> ModelConfig:
    d = dict(d)
    d["kind"] = ModelKind(d["kind"])
    if d.get("dilations") is not None:
        d["dilations"] = tuple(d["dilations"])
    return ModelConfig(**d)
