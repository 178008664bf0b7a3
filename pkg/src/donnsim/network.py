"""Fully-connected MNIST classifier: float training and quantized inference.

Inputs are 7x7 downsampled images flattened to 49 values in [0, 1].  Hidden
layers use ReLU and the output layer softmax.  Quantized inference runs
every layer through :func:`donnsim.dataflow.run_layer`, so in ``optical``
mode every activation and weight bit crosses the simulated channel.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ConfigError, SimulationError, UsageError
from .dataflow import BerCounter, EnergyTally, LayerConfig, run_layer

N_CLASSES = 10
ARCHITECTURES = {"3layer": (49, 100, 100, 10), "2layer": (49, 100, 10)}
MODEL_MAGIC = b"DONNMDL1"
MODEL_JSON_FORMAT = "donnsim-fcnn"
MODEL_VERSION = 1


class TrainingError(SimulationError):
    pass


@dataclass
class FcnnModel:
    weights: list
    biases: list
    arch: str = "custom"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise UsageError("a model needs one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise UsageError(f"layer {i}: weights {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise UsageError(f"layer {i}: input width {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        if self.weights[-1].shape[1] != N_CLASSES:
            raise UsageError(f"final layer must have {N_CLASSES} outputs, got {self.weights[-1].shape[1]}")

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @classmethod
    def zeros(cls, dims, arch: str = "custom") -> "FcnnModel":
        return cls([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])], [np.zeros(b) for b in dims[1:]], arch)

    def equals(self, other: "FcnnModel") -> bool:
        return self.dims == other.dims and all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases, other.weights + other.biases))


def init_model(arch: str = "3layer", seed: int = 0) -> FcnnModel:
    """Fan-in scaled uniform weights, zero biases."""
    if arch not in ARCHITECTURES:
        raise UsageError(f"architecture must be one of {sorted(ARCHITECTURES)}, got {arch!r}")
    dims = ARCHITECTURES[arch]
    rng = np.random.default_rng(seed)
    ws = [rng.uniform(-1, 1, (a, b)) * np.sqrt(6.0 / a) for a, b in zip(dims[:-1], dims[1:])]
    return FcnnModel(ws, [np.zeros(b) for b in dims[1:]], arch)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(model: FcnnModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != model.dims[0]:
        raise UsageError(f"input must have {model.dims[0]} features, got shape {x.shape}")
    return x, squeeze


def forward_float(model: FcnnModel, x) -> np.ndarray:
    """Softmax scores for one 49-vector or a batch of them."""
    a, squeeze = _check_input(model, x)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ w + b
        if i < len(model.weights) - 1:
            a = np.maximum(a, 0.0)
    p = softmax(a)
    return p[0] if squeeze else p


class QuantizedOutput:
    def __init__(self, scores, tally, ber, steps):
        self.scores = scores
        self.tally = tally
        self.ber = ber
        self.steps = steps


def forward_quantized(model: FcnnModel, x, mode: str = "ideal", cfg: LayerConfig | None = None) -> QuantizedOutput:
    """Quantized inference of a batch; each layer runs on the simulated PE grid."""
    a, squeeze = _check_input(model, x)
    tally, ber, steps = EnergyTally(), BerCounter(), 0
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        res = run_layer(a, w, b, mode, cfg, rng_key=(i,))
        tally.add(res.tally)
        ber.add(res.ber)
        steps += res.steps
        a = res.output if i == len(model.weights) - 1 else np.maximum(res.output, 0.0)
    p = softmax(a)
    return QuantizedOutput(p[0] if squeeze else p, tally, ber, steps)


# --- training -------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    arch: str = "3layer"
    lr: float = 0.01
    batch_size: int = 64
    dropout: float = 0.2
    epochs: int = 20
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"TrainConfig.arch must be one of {sorted(ARCHITECTURES)}, got {self.arch!r}")
        if not self.lr > 0:
            raise ConfigError(f"TrainConfig.lr must be > 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("TrainConfig.batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"TrainConfig.dropout must lie in [0, 1), got {self.dropout}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"TrainConfig.momentum must lie in [0, 1), got {self.momentum}")

    def to_dict(self) -> dict:
        return asdict(self)


def loss_and_grads(model: FcnnModel, x: np.ndarray, y: np.ndarray, masks=None):
    """Mean cross-entropy and its gradients; ``masks`` are per-hidden-layer dropout multipliers."""
    acts = [x]
    a = x
    n_layers = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        if i < n_layers - 1:
            a = np.maximum(z, 0.0)
            if masks is not None:
                a = a * masks[i]
        else:
            a = z
        acts.append(a)
    logits = acts[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -log_p[np.arange(n), y].mean()
    delta = np.exp(log_p)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = delta @ model.weights[i].T
            if masks is not None:
                delta = delta * masks[i - 1]
            delta = delta * (acts[i] > 0)
    return float(loss), gw, gb


@dataclass
class TrainResult:
    model: FcnnModel
    epoch_losses: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)


def train(x, labels, cfg: TrainConfig = TrainConfig(), record_batches: bool = False) -> TrainResult:
    """Mini-batch SGD with momentum and inverted dropout on hidden layers."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    dims = ARCHITECTURES[cfg.arch]
    if x.ndim != 2 or x.shape[1] != dims[0] or len(x) != len(y) or not len(y):
        raise UsageError(f"training data must be (n, {dims[0]}) with n matching labels, got {x.shape} / {y.shape}")
    model = init_model(cfg.arch, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    keep = 1.0 - cfg.dropout
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = None
            if cfg.dropout > 0:
                masks = [(rng.random((len(idx), w.shape[1])) < keep) / keep for w in model.weights[:-1]]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb = loss_and_grads(model, x[idx], y[idx], masks)
            if not np.isfinite(loss):
                raise TrainingError(f"loss became {loss} at epoch {epoch}, batch starting {start} (lr={cfg.lr}); "
                                    "try a smaller learning rate")
            for i in range(len(model.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.lr * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.lr * gb[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
            total += loss * len(idx)
            if record_batches:
                result.batch_losses.append(loss)
        result.epoch_losses.append(total / len(y))
    return result


# --- evaluation -----------------------------------------------------------

@dataclass
class OutputScores:
    """Column j is the mean score vector of images whose true label is j."""
    matrix: np.ndarray
    counts: np.ndarray

    @classmethod
    def from_scores(cls, scores: np.ndarray, labels: np.ndarray) -> "OutputScores":
        m = np.zeros((N_CLASSES, N_CLASSES))
        counts = np.bincount(labels, minlength=N_CLASSES)
        for j in range(N_CLASSES):
            if counts[j]:
                m[:, j] = scores[labels == j].mean(axis=0)
        return cls(m, counts)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.matrix).copy()


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # confusion[true, predicted]
    scores: OutputScores
    diag_differences: np.ndarray
    reference_accuracy: float
    tally: EnergyTally
    ber: BerCounter
    steps: int
    predictions: np.ndarray


def confusion_matrix(labels, predictions) -> np.ndarray:
    c = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(c, (labels, predictions), 1)
    return c


def confusion_and_scores(model: FcnnModel, x, labels, mode: str = "ideal", cfg: LayerConfig | None = None,
                         reference_mode: str = "ideal") -> Evaluation:
    """Accuracy, confusion matrix and output scores, plus diagonal score
    differences against ``reference_mode`` (``"float"`` uses float inference)."""
    labels = np.asarray(labels, dtype=np.int64)
    if not len(labels):
        raise UsageError("test set is empty")

    def run(m):
        if m == "float":
            return forward_float(model, x), None
        out = forward_quantized(model, x, m, cfg)
        return out.scores, out

    scores, out = run(mode)
    ref_scores = scores if reference_mode == mode else run(reference_mode)[0]
    pred = scores.argmax(axis=1)
    s = OutputScores.from_scores(scores, labels)
    ref = OutputScores.from_scores(ref_scores, labels)
    return Evaluation(
        accuracy=float((pred == labels).mean()),
        confusion=confusion_matrix(labels, pred),
        scores=s,
        diag_differences=s.diagonal - ref.diagonal,
        reference_accuracy=float((ref_scores.argmax(axis=1) == labels).mean()),
        tally=out.tally if out else EnergyTally(),
        ber=out.ber if out else BerCounter(),
        steps=out.steps if out else 0,
        predictions=pred,
    )


# --- persistence ----------------------------------------------------------

def save_model(model: FcnnModel, path) -> None:
    """Binary layout: magic, uint32 layer count, then per layer uint32 rows,
    cols, row-major float64 weights and float64 bias (all little-endian)."""
    parts = [MODEL_MAGIC, struct.pack("<I", len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(w.astype("<f8").tobytes())
        parts.append(b.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path, arch: str = "custom") -> FcnnModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read model file {path}: {exc.strerror}") from exc
    if raw[:8] != MODEL_MAGIC:
        raise UsageError(f"{path}: not a model file (bad magic)")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise UsageError(f"{path}: truncated at byte {pos}, need {n} more bytes")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    (n_layers,) = struct.unpack("<I", take(4))
    ws, bs = [], []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", take(8))
        ws.append(np.frombuffer(take(8 * rows * cols), "<f8").reshape(rows, cols).astype(np.float64))
        bs.append(np.frombuffer(take(8 * cols), "<f8").astype(np.float64))
    if pos != len(raw):
        raise UsageError(f"{path}: {len(raw) - pos} trailing bytes")
    model = FcnnModel(ws, bs, arch)
    if arch == "custom":
        model.arch = next((k for k, v in ARCHITECTURES.items() if v == model.dims), "custom")
    return model


def model_to_json(model: FcnnModel) -> str:
    return json.dumps({
        "format": MODEL_JSON_FORMAT,
        "version": MODEL_VERSION,
        "arch": model.arch,
        "layers": [{"weights": w.tolist(), "bias": b.tolist()} for w, b in zip(model.weights, model.biases)],
    })


def model_from_json(text: str) -> FcnnModel:
    d = json.loads(text)
    if d.get("format") != MODEL_JSON_FORMAT or d.get("version") != MODEL_VERSION:
        raise UsageError(f"unsupported model JSON (format {d.get('format')!r}, version {d.get('version')!r})")
    layers = d["layers"]
    return FcnnModel([np.array(l["weights"], dtype=np.float64).reshape(len(l["weights"]), len(l["bias"]))
                      for l in layers], [l["bias"] for l in layers], d.get("arch", "custom"))
