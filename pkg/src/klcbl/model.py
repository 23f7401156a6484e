"""Model assembly and training.

The classifier runs up to three channels over one embedded example: the
pooled sentence vector passed through unchanged, the convolutional channel,
and the BiLSTM channel. Their outputs are concatenated in that fixed order
(768 + 128 + 128 = 1024 with the defaults) and fed to the classification
head, either the two-layer edge-table head or the dense baseline.

Training is plain mini-batch Adam on categorical cross-entropy with a
seeded epoch shuffle; given the same datasets, config, and seed, ``fit``
reproduces bit-identical parameters and reports.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from .cnn import ConvConfig, ConvWeights, conv1d_forward, global_max_pool, init_conv_weights
from .kan import DenseHead, HeadConfig, KanHead, head_forward, init_head
from .lstm import LstmConfig, LstmWeights, bilstm_forward, init_lstm_weights
from .metrics import MetricsReport, evaluate_model, softmax_probs
from .rng import SplitMix64
from .tensor import (
    NumericError,
    ShapeError,
    Tensor,
    backward,
    concat,
    get_default_dtype,
    no_grad,
    stack,
)

FUSION_ORDER = ("lert", "cnn", "bilstm")


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**data)


@dataclass
class ModelConfig:
    embedding_dim: int = 768
    use_cnn: bool = True
    use_bilstm: bool = True
    use_lert_passthrough: bool = True
    cnn: ConvConfig = field(default_factory=ConvConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    @property
    def fusion_dim(self) -> int:
        dim = 0
        if self.use_lert_passthrough:
            dim += self.embedding_dim
        if self.use_cnn:
            dim += self.cnn.out_channels
        if self.use_bilstm:
            dim += self.lstm.output_dim
        return dim

    def fusion_layout(self) -> list:
        enabled = {
            "lert": self.use_lert_passthrough,
            "cnn": self.use_cnn,
            "bilstm": self.use_bilstm,
        }
        return [name for name in FUSION_ORDER if enabled[name]]

    def validate(self) -> None:
        if not (self.use_cnn or self.use_bilstm or self.use_lert_passthrough):
            raise ValueError("at least one channel must be enabled")
        if self.use_cnn and self.cnn.in_dim != self.embedding_dim:
            raise ValueError(
                f"cnn.in_dim {self.cnn.in_dim} must equal embedding_dim {self.embedding_dim}"
            )
        if self.use_bilstm and self.lstm.in_dim != self.embedding_dim:
            raise ValueError(
                f"lstm.in_dim {self.lstm.in_dim} must equal embedding_dim {self.embedding_dim}"
            )
        if self.head.in_dim != self.fusion_dim:
            raise ValueError(
                f"head.in_dim {self.head.in_dim} must equal fusion_dim {self.fusion_dim} "
                f"(layout {self.fusion_layout()})"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        parts = {}
        for key, sub in (("cnn", ConvConfig), ("lstm", LstmConfig), ("head", HeadConfig)):
            if key in data:
                parts[key] = _from_dict(sub, data.pop(key))
        cfg = _from_dict(cls, data)
        for key, value in parts.items():
            setattr(cfg, key, value)
        return cfg


@dataclass
class TrainConfig:
    batch_size: int = 4
    epochs: int = 3
    learning_rate: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 24

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_dict(cls, data)


@dataclass
class TrainReport:
    train_losses: list
    valid_metrics: list  # MetricsReport or None per epoch
    wall_time_s: float
    config: dict
    seed: int
    test_metrics: Optional[MetricsReport] = None


class KlcblModel:
    def __init__(self, config: ModelConfig, conv_weights: Optional[ConvWeights],
                 lstm_weights: Optional[LstmWeights], head):
        config.validate()
        self.config = config
        self.conv_weights = conv_weights
        self.lstm_weights = lstm_weights
        self.head = head

    def parameters(self) -> list:
        """Ordered (name, tensor) pairs; the order is the checkpoint layout."""
        params = []
        if self.conv_weights is not None:
            params.append(("conv.W", self.conv_weights.W))
            if self.conv_weights.b is not None:
                params.append(("conv.b", self.conv_weights.b))
        if self.lstm_weights is not None:
            for direction, w in (("fwd", self.lstm_weights.fwd), ("bwd", self.lstm_weights.bwd)):
                for name, tensor in w.tensors():
                    params.append((f"lstm.{direction}.{name}", tensor))
        for name, tensor in self.head.parameters():
            params.append((f"head.{name}", tensor))
        return params

    def logits(self, ex) -> np.ndarray:
        with no_grad():
            return klcbl_forward(ex, self).data


def init_model(config: ModelConfig, seed: int) -> KlcblModel:
    """Deterministic init; component sub-seeds are drawn in a fixed order
    regardless of which channels are enabled, so ablation variants share
    identical weights for the components they have in common."""
    config.validate()
    rng = SplitMix64(seed)
    conv_seed, lstm_seed, head_seed = rng.next_u64(), rng.next_u64(), rng.next_u64()
    conv_weights = init_conv_weights(config.cnn, conv_seed) if config.use_cnn else None
    lstm_weights = init_lstm_weights(config.lstm, lstm_seed) if config.use_bilstm else None
    head = init_head(config.head, head_seed)
    return KlcblModel(config, conv_weights, lstm_weights, head)


def fuse_channels(ex, model: KlcblModel) -> Tensor:
    """Concatenate enabled channel outputs in the fixed (lert, cnn, bilstm)
    order; this layout is recorded in checkpoints."""
    cfg = model.config
    if ex.tokens.data.ndim != 2 or ex.tokens.shape[1] != cfg.embedding_dim:
        raise ShapeError(
            f"example {getattr(ex, 'id', '?')!r} tokens are {ex.tokens.shape}, "
            f"expected (T, {cfg.embedding_dim})"
        )
    parts = []
    if cfg.use_lert_passthrough:
        if ex.pooled.shape != (cfg.embedding_dim,):
            raise ShapeError(
                f"pooled vector is {ex.pooled.shape}, expected ({cfg.embedding_dim},)"
            )
        parts.append(ex.pooled)
    if cfg.use_cnn:
        parts.append(global_max_pool(conv1d_forward(ex.tokens, cfg.cnn, model.conv_weights)))
    if cfg.use_bilstm:
        parts.append(bilstm_forward(ex.tokens, model.lstm_weights.fwd, model.lstm_weights.bwd))
    return concat(parts)


def klcbl_forward(ex, model: KlcblModel) -> Tensor:
    """Single-example logits: channels -> fusion -> head."""
    return head_forward(fuse_channels(ex, model), model.head)


def forward_batch(examples, model: KlcblModel) -> Tensor:
    """(B, out_dim) logits; rows are independent of batch composition."""
    fused = stack([fuse_channels(ex, model) for ex in examples])
    return head_forward(fused, model.head)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy with max-subtracted softmax.

    logits: (B, C) (a single (C,) row is accepted with one label). The
    two-class case reduces to the familiar binary form.
    """
    if logits.data.ndim == 1:
        z = logits.data.reshape(1, -1)
    elif logits.data.ndim == 2:
        z = logits.data
    else:
        raise ShapeError(f"cross_entropy needs (B, C) logits, got {logits.shape}")
    labels = [int(l) for l in (labels if hasattr(labels, "__len__") else [labels])]
    b, c = z.shape
    if len(labels) != b:
        raise ShapeError(f"{b} logit rows but {len(labels)} labels")
    for l in labels:
        if not 0 <= l < c:
            raise ValueError(f"label {l} outside class range 0..{c - 1}")
    idx = np.asarray(labels)

    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    sumexp = np.exp(shifted).sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sumexp)
    loss_val = np.asarray(-log_probs[np.arange(b), idx].mean(), dtype=z.dtype)
    out = Tensor._from_op(loss_val, (logits,), "cross_entropy")

    def backward_rule():
        probs = np.exp(log_probs)
        probs[np.arange(b), idx] -= 1.0
        g = (probs * (out.grad / b)).astype(z.dtype)
        logits.accumulate_grad(g.reshape(logits.shape))

    out._backward = backward_rule if out._parents else None
    return out


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params},
            v={name: np.zeros_like(p.data) for name, p in params},
        )


def adam_step(params, state: AdamState, tconf: TrainConfig) -> None:
    """One bias-corrected Adam update, in place, in parameter order.

    A parameter with no accumulated gradient is treated as zero-gradient;
    a non-finite gradient aborts with the parameter path.
    """
    state.t += 1
    b1, b2 = tconf.beta1, tconf.beta2
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**state.t)
        v_hat = v / (1.0 - b2**state.t)
        p.data -= (tconf.learning_rate * m_hat / (np.sqrt(v_hat) + tconf.eps)).astype(p.data.dtype)


def fit(train, valid, model: KlcblModel, tconf: TrainConfig) -> TrainReport:
    """Mini-batch training: seeded shuffle per epoch, batches of
    ``batch_size`` with the final partial batch kept, validation metrics
    after every epoch."""
    if not train:
        raise ValueError("fit needs a non-empty training split")
    params = model.parameters()
    state = AdamState.for_params(params)
    shuffle_rng = SplitMix64(tconf.seed)
    started = time.perf_counter()

    train_losses = []
    valid_metrics = []
    for _ in range(tconf.epochs):
        order = list(range(len(train)))
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for lo in range(0, len(order), tconf.batch_size):
            batch = [train[i] for i in order[lo : lo + tconf.batch_size]]
            logits = forward_batch(batch, model)
            loss = cross_entropy(logits, [ex.label for ex in batch])
            for _, p in params:
                p.zero_grad()
            backward(loss)
            adam_step(params, state, tconf)
            epoch_loss += loss.item() * len(batch)
        train_losses.append(epoch_loss / len(train))
        valid_metrics.append(evaluate_model(model, valid) if valid else None)

    return TrainReport(
        train_losses=train_losses,
        valid_metrics=valid_metrics,
        wall_time_s=time.perf_counter() - started,
        config={"model": model.config.to_dict(), "train": tconf.to_dict()},
        seed=tconf.seed,
    )


def predict(ex, model: KlcblModel):
    """(class id, probability vector); ties resolve to the lowest index."""
    probs = softmax_probs(model.logits(ex))
    return int(np.argmax(probs)), probs


# -- checkpoint format ------------------------------------------------------
#
# header line: JSON {format_version, config, fusion_layout, embedding}
# then per parameter (in KlcblModel.parameters() order):
#   JSON line {name, shape} followed by the raw little-endian float32 block.

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: KlcblModel, path, embedding_meta: Optional[dict] = None) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "fusion_layout": model.config.fusion_layout(),
        "embedding": embedding_meta or {},
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8"))
        for name, p in model.parameters():
            meta = {"name": name, "shape": list(p.shape)}
            fh.write((json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8"))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Returns (model, embedding_meta); parameter payloads load bit-exactly
    into the float32 profile."""
    dtype = get_default_dtype()
    with open(path, "rb") as fh:
        header_line = fh.readline()
        if not header_line:
            raise CheckpointError(f"{path}: empty checkpoint")
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unparseable header: {exc}") from exc
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unknown format version {header.get('format_version')!r}")
        if not isinstance(header.get("config"), dict):
            raise CheckpointError(f"{path}: header carries no config snapshot")
        config = ModelConfig.from_dict(header["config"])
        model = init_model(config, seed=0)
        for name, p in model.parameters():
            meta_line = fh.readline()
            if not meta_line:
                raise CheckpointError(f"{path}: missing block for parameter '{name}'")
            meta = json.loads(meta_line.decode("utf-8"))
            if meta.get("name") != name or tuple(meta.get("shape", ())) != p.shape:
                raise CheckpointError(
                    f"{path}: expected parameter '{name}' with shape {p.shape}, "
                    f"found {meta.get('name')!r} with shape {meta.get('shape')}"
                )
            nbytes = int(np.prod(p.shape)) * 4 if p.shape else 4
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise CheckpointError(
                    f"{path}: parameter '{name}': expected {nbytes} bytes, got {len(blob)}"
                )
            p.data = np.frombuffer(blob, dtype="<f4").reshape(p.shape).astype(dtype)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last parameter block")
    return model, header.get("embedding", {})
