"""Kim-style text CNN: architecture, mini-batch adadelta training with
validation checkpointing, prediction and the ``tcnn v1`` checkpoint format."""

from __future__ import annotations

import copy
import hashlib
import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import nn
from .errors import CheckpointError, EmptySplit, InvalidConfig, LabelOutOfRange, ShapeMismatch
from .evaluation import f1_from_indices
from .textprep import EncodedDocument

log = logging.getLogger(__name__)

FORMAT_TAG = "tcnn v1"


@dataclass
class TextCnnConfig:
    window_sizes: tuple[int, ...] = (3, 4, 5)
    maps_per_window: int = 100
    embedding_dim: int = 128
    dropout_rate: float = 0.5
    hidden_size: int = 100
    num_classes: int = 2
    epochs: int = 147
    batch_size: int = 75
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    seed: int = 0
    max_len: int = 5

    def __post_init__(self):
        self.window_sizes = tuple(int(h) for h in self.window_sizes)

    def validate(self) -> "TextCnnConfig":
        if not self.window_sizes or any(h < 1 for h in self.window_sizes):
            raise InvalidConfig("window sizes must be positive")
        if max(self.window_sizes) > self.max_len:
            raise InvalidConfig(f"max_len {self.max_len} shorter than window {max(self.window_sizes)}")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be at least 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfig("dropout_rate must be in [0, 1)")
        if min(self.maps_per_window, self.embedding_dim, self.hidden_size, self.batch_size) < 1:
            raise InvalidConfig("layer sizes and batch size must be positive")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be non-negative")
        if not 0.0 < self.adadelta_rho < 1.0 or self.adadelta_eps <= 0.0:
            raise InvalidConfig("adadelta needs 0 < rho < 1 and eps > 0")
        return self

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{f.name}={v!r}" if isinstance(v, float) else f"{f.name}={v}")
        return out

    @classmethod
    def from_mapping(cls, mapping) -> "TextCnnConfig":
        """Build from string values (config files, checkpoint headers)."""
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in types:
                raise InvalidConfig(f"unknown model setting {key!r}")
            raw = str(raw).strip()
            if key == "window_sizes":
                kwargs[key] = tuple(int(x) for x in raw.split(",") if x.strip())
            elif types[key] in ("float", float):
                kwargs[key] = float(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_f1_micro: list[float] = field(default_factory=list)
    val_f1_macro: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_tsv(self) -> str:
        lines = [f"# best_epoch={self.best_epoch + 1}", "epoch\ttrain_loss\tval_f1_micro\tval_f1_macro"]
        for i, (loss, mi, ma) in enumerate(zip(self.train_loss, self.val_f1_micro, self.val_f1_macro)):
            lines.append(f"{i + 1}\t{loss:.6f}\t{mi:.6f}\t{ma:.6f}")
        return "\n".join(lines) + "\n"


def _glorot(rng: nn.Rng, shape, fan_in: int, fan_out: int) -> np.ndarray:
    b = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-b, b, shape)


class TextCnnModel:
    """Embedding, parallel conv + max-pool branches, dropout, relu hidden
    layer and softmax output."""

    def __init__(self, config: TextCnnConfig, vocab_size: int, class_labels: Sequence[str],
                 params: dict[str, nn.Parameter], vocab_hash: str = ""):
        self.config = config
        self.vocab_size = vocab_size
        self.class_labels = [str(c) for c in class_labels]
        self.params = params
        self.vocab_hash = vocab_hash
        if len(self.class_labels) != config.num_classes:
            raise InvalidConfig("class_labels length must equal num_classes")

    def parameters(self) -> list[nn.Parameter]:
        return list(self.params.values())

    def copy(self) -> "TextCnnModel":
        return copy.deepcopy(self)

    # forward / backward ------------------------------------------------------

    def forward_logits(self, indices: np.ndarray, training: bool = False, rng: nn.Rng | None = None):
        """``indices`` is ``[L]`` or ``[B, L]``; returns logits and a backward cache."""
        cfg = self.config
        indices = np.asarray(indices)
        if indices.shape[-1] != cfg.max_len:
            raise ShapeMismatch(f"document length {indices.shape[-1]} != max_len {cfg.max_len}")
        p = self.params
        emb = nn.embedding_forward(indices, p["embedding"])
        pooled, branch = [], []
        for h in cfg.window_sizes:
            conv, conv_cache = nn.conv1d_forward(emb, p[f"conv{h}.filters"], p[f"conv{h}.bias"])
            values, argmax = nn.max_over_time_pool(conv)
            pooled.append(values)
            branch.append((h, conv_cache, argmax, conv.shape[-2]))
        features = np.concatenate(pooled, axis=-1)
        dropped, mask = nn.dropout(features, cfg.dropout_rate, training, rng)
        hidden, hidden_cache = nn.dense_forward(dropped, p["hidden.weights"], p["hidden.bias"], "relu")
        logits, out_cache = nn.dense_forward(hidden, p["output.weights"], p["output.bias"], "none")
        cache = (indices, branch, mask, hidden_cache, out_cache)
        return logits, cache

    def backward(self, cache, grad_logits: np.ndarray) -> None:
        indices, branch, mask, hidden_cache, out_cache = cache
        p = self.params
        g = nn.dense_backward(grad_logits, out_cache, p["output.weights"], p["output.bias"])
        g = nn.dense_backward(g, hidden_cache, p["hidden.weights"], p["hidden.bias"])
        g = nn.dropout_backward(g, mask)
        m = self.config.maps_per_window
        grad_emb = None
        for i, (h, conv_cache, argmax, steps) in enumerate(branch):
            g_pool = g[..., i * m:(i + 1) * m]
            g_conv = nn.max_pool_backward(g_pool, argmax, steps)
            g_x = nn.conv1d_backward(g_conv, conv_cache, p[f"conv{h}.filters"], p[f"conv{h}.bias"])
            grad_emb = g_x if grad_emb is None else grad_emb + g_x
        nn.embedding_backward(indices, p["embedding"], grad_emb)

    def loss(self, indices: np.ndarray, gold, training: bool = False, rng: nn.Rng | None = None,
             backward: bool = True) -> float:
        """Mean cross-entropy over the batch, optionally accumulating gradients."""
        logits, cache = self.forward_logits(indices, training, rng)
        losses, _, grad = nn.softmax_cross_entropy(logits, gold)
        n = 1 if np.ndim(losses) == 0 else len(losses)
        if backward:
            self.backward(cache, grad / n)
        return float(np.mean(losses))

    def probabilities(self, indices: np.ndarray, batch_size: int = 512) -> np.ndarray:
        indices = np.asarray(indices)
        if indices.ndim == 1:
            return nn.softmax(self.forward_logits(indices)[0])
        chunks = [nn.softmax(self.forward_logits(indices[i:i + batch_size])[0])
                  for i in range(0, len(indices), batch_size)]
        if not chunks:
            return np.zeros((0, self.config.num_classes))
        return np.concatenate(chunks)

    def predict(self, doc: EncodedDocument | np.ndarray):
        indices = doc.indices if isinstance(doc, EncodedDocument) else doc
        probs = self.probabilities(indices)
        return self.class_labels[int(np.argmax(probs))], probs


def build_model(config: TextCnnConfig, vocab_size: int, rng: nn.Rng | None = None,
                class_labels: Sequence[str] | None = None, vocab_hash: str = "") -> TextCnnModel:
    """Randomly initialise a model.

    Embeddings are uniform in [-0.25, 0.25]; conv and dense weights are
    Glorot-uniform (conv fan-in ``h * d``, fan-out ``m``); biases are zero.
    """
    config.validate()
    if vocab_size < 1:
        raise InvalidConfig("vocab_size must be at least 1")
    rng = rng or nn.Rng(config.seed)
    d, m = config.embedding_dim, config.maps_per_window
    params = {"embedding": nn.Parameter(rng.uniform(-0.25, 0.25, (vocab_size + 2, d)), "embedding")}
    for h in config.window_sizes:
        params[f"conv{h}.filters"] = nn.Parameter(_glorot(rng, (m, h, d), h * d, m), f"conv{h}.filters")
        params[f"conv{h}.bias"] = nn.Parameter(np.zeros(m), f"conv{h}.bias")
    total = m * len(config.window_sizes)
    hs, c = config.hidden_size, config.num_classes
    params["hidden.weights"] = nn.Parameter(_glorot(rng, (hs, total), total, hs), "hidden.weights")
    params["hidden.bias"] = nn.Parameter(np.zeros(hs), "hidden.bias")
    params["output.weights"] = nn.Parameter(_glorot(rng, (c, hs), hs, c), "output.weights")
    params["output.bias"] = nn.Parameter(np.zeros(c), "output.bias")
    if class_labels is None:
        class_labels = [str(i) for i in range(c)]
    return TextCnnModel(config, vocab_size, class_labels, params, vocab_hash)


def forward(model: TextCnnModel, doc: EncodedDocument | np.ndarray, training: bool = False,
            rng: nn.Rng | None = None) -> np.ndarray:
    indices = doc.indices if isinstance(doc, EncodedDocument) else doc
    logits, _ = model.forward_logits(indices, training, rng)
    return nn.softmax(logits)


def predict(model: TextCnnModel, doc):
    return model.predict(doc)


def stack(docs: Sequence[EncodedDocument]) -> tuple[np.ndarray, np.ndarray]:
    if not docs:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.stack([d.indices for d in docs]), np.array([d.label for d in docs], dtype=np.int64)


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of EncodedDocument or an ``(indices, labels)`` pair."""
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        return np.asarray(data[0]), np.asarray(data[1], dtype=np.int64)
    return stack(list(data))


def fit(config: TextCnnConfig, vocab_size: int, class_labels: Sequence[str], train_data, val_data,
        vocab_hash: str = "") -> tuple[TextCnnModel, TrainingHistory]:
    """Build a model from ``config`` and train it."""
    model = build_model(config, vocab_size, nn.Rng(config.seed), class_labels, vocab_hash)
    return train(model, train_data, val_data)


def evaluate_f1(model: TextCnnModel, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    pred = model.probabilities(x).argmax(axis=1)
    return f1_from_indices(y, pred, model.config.num_classes)


def train(model: TextCnnModel, train_set, val_set,
          config: TextCnnConfig | None = None,
          on_epoch: Callable[[int, TrainingHistory], None] | None = None):
    """Mini-batch adadelta training; returns the model restored to the epoch
    with the best validation F1-micro (earliest on ties) and the history."""
    cfg = config or model.config
    x_train, y_train = _as_arrays(train_set)
    x_val, y_val = _as_arrays(val_set)
    if not len(x_train) or not len(x_val):
        raise EmptySplit("train and validation splits must be non-empty")
    c = model.config.num_classes
    for y in (y_train, y_val):
        if y.min() < 0 or y.max() >= c:
            raise LabelOutOfRange(f"labels must lie in [0, {c})")

    rng = nn.Rng(cfg.seed).derive(1)
    history = TrainingHistory()
    params = model.parameters()
    best_values = None
    best_score = -1.0
    n = len(x_train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            total += model.loss(x_train[batch], y_train[batch], training=True, rng=rng) * len(batch)
            for p in params:
                nn.adadelta_step(p, cfg.adadelta_rho, cfg.adadelta_eps)
        micro, macro = evaluate_f1(model, x_val, y_val)
        history.train_loss.append(total / n)
        history.val_f1_micro.append(micro)
        history.val_f1_macro.append(macro)
        if micro > best_score:
            best_score = micro
            history.best_epoch = epoch
            best_values = [(p.value.copy(), p.acc_grad_sq.copy(), p.acc_delta_sq.copy()) for p in params]
        log.debug("epoch %d loss %.4f val micro %.4f macro %.4f", epoch + 1, total / n, micro, macro)
        if on_epoch is not None:
            on_epoch(epoch, history)
    if best_values is not None:
        for p, (v, ag, ad) in zip(params, best_values):
            p.value[...] = v
            p.acc_grad_sq[...] = ag
            p.acc_delta_sq[...] = ad
    return model, history


# --- checkpoints --------------------------------------------------------------

def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def dumps_checkpoint(model: TextCnnModel) -> bytes:
    header = [FORMAT_TAG]
    header += [f"config.{line}" for line in model.config.to_lines()]
    header.append(f"vocab_size={model.vocab_size}")
    header.append("class_labels=" + "\t".join(model.class_labels))
    header.append(f"vocab_hash={model.vocab_hash}")
    header.append(f"params={len(model.params)}")
    header.append("end")
    payload = bytearray()
    for name, p in model.params.items():
        payload += f"{name}\n{','.join(str(s) for s in p.shape)}\n".encode("utf-8")
        payload += p.value.astype("<f4").tobytes(order="C")
    payload = bytes(payload)
    return ("\n".join(header) + "\n").encode("utf-8") + payload + _checksum(payload)


def loads_checkpoint(data: bytes) -> TextCnnModel:
    marker = b"\nend\n"
    cut = data.find(marker)
    if not data.startswith(FORMAT_TAG.encode() + b"\n") or cut < 0:
        raise CheckpointError("not a tcnn v1 checkpoint")
    header = data[:cut].decode("utf-8").split("\n")[1:]
    payload, checksum = data[cut + len(marker):-8], data[-8:]
    if _checksum(payload) != checksum:
        raise CheckpointError("checkpoint checksum mismatch")
    cfg_items, meta = {}, {}
    for line in header:
        key, _, value = line.partition("=")
        if key.startswith("config."):
            cfg_items[key[len("config."):]] = value
        else:
            meta[key] = value
    config = TextCnnConfig.from_mapping(cfg_items)
    labels = meta["class_labels"].split("\t")
    expected = build_model(config, int(meta["vocab_size"]), nn.Rng(0), labels)
    params = {}
    pos = 0
    for _ in range(int(meta["params"])):
        nl1 = payload.index(b"\n", pos)
        nl2 = payload.index(b"\n", nl1 + 1)
        name = payload[pos:nl1].decode("utf-8")
        shape = tuple(int(s) for s in payload[nl1 + 1:nl2].decode().split(",") if s)
        count = int(np.prod(shape)) if shape else 1
        pos = nl2 + 1
        raw = payload[pos:pos + 4 * count]
        if len(raw) != 4 * count:
            raise CheckpointError(f"truncated parameter {name}")
        pos += 4 * count
        if name not in expected.params or expected.params[name].shape != shape:
            raise CheckpointError(f"parameter {name} has unexpected shape {shape}")
        params[name] = nn.Parameter(np.frombuffer(raw, dtype="<f4").reshape(shape), name)
    if pos != len(payload) or set(params) != set(expected.params):
        raise CheckpointError("checkpoint parameter set does not match its config")
    ordered = {name: params[name] for name in expected.params}
    return TextCnnModel(config, int(meta["vocab_size"]), labels, ordered, meta.get("vocab_hash", ""))


def save_checkpoint(model: TextCnnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(model))


def load_checkpoint(path) -> TextCnnModel:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())
