"""Two-layer softmax pose classifier trained from scratch.

``input -> ReLU hidden layer (inverted dropout) -> x-way softmax``, trained
by mini-batch SGD with momentum on the mean cross-entropy.  Images are
reduced to features by area-averaging down to ``input_side`` squared and
standardizing per image.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .renderer import hflip

log = logging.getLogger(__name__)

MAGIC = b"PFNET1"
_HEADER = struct.Struct("<6sIIIIdq")  # magic, input_side, n_in, hidden, classes, dropout_p, seed
CONFIDENCE_RATIO = 2.0


class ModelFormatError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_side: int = 64
    hidden_units: int = 256
    dropout_p: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.input_side < 1 or self.hidden_units < 1:
            raise ValueError("input_side and hidden_units must be positive")

    @property
    def n_inputs(self) -> int:
        return self.input_side**2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    hflip_augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class Model:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    config: ModelConfig

    @classmethod
    def init(cls, config: ModelConfig, n_inputs: int | None = None) -> "Model":
        """He-scaled Gaussian weights from ``config.seed``, zero biases."""
        n_in = config.n_inputs if n_inputs is None else n_inputs
        rng = np.random.default_rng(config.seed)
        W1 = rng.standard_normal((config.hidden_units, n_in)) * np.sqrt(2.0 / n_in)
        W2 = rng.standard_normal((config.num_classes, config.hidden_units)) * np.sqrt(2.0 / config.hidden_units)
        return cls(W1, np.zeros(config.hidden_units), W2, np.zeros(config.num_classes), config)

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "Model":
        return Model(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy(), self.config)

    @property
    def n_inputs(self) -> int:
        return self.W1.shape[1]


@dataclass(frozen=True)
class PredictionResult:
    probs: np.ndarray
    top_label: int
    confidence_ratio: float

    @property
    def high_confidence(self) -> bool:
        return self.confidence_ratio > CONFIDENCE_RATIO


@dataclass
class History:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    samples: list[int] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_accuracy"]
        for e, l, a in zip(self.epoch, self.train_loss, self.val_accuracy):
            lines.append(f"{e},{l!r},{a!r}")
        return "\n".join(lines) + "\n"


# -- features ------------------------------------------------------------------


def _area_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Row i holds the fractional overlap of each source pixel with output bin i."""
    edges = np.arange(n_dst + 1) * (n_src / n_dst)
    lo = np.arange(n_src)
    overlap = np.clip(
        np.minimum(edges[1:, None], lo[None, :] + 1) - np.maximum(edges[:-1, None], lo[None, :]),
        0.0,
        None,
    )
    return overlap / overlap.sum(axis=1, keepdims=True)


def box_downsample(pixels, side: int) -> np.ndarray:
    """Exact area-average resampling of a 2-D image to ``side`` x ``side``."""
    img = np.asarray(pixels, dtype=float)
    A = _area_matrix(img.shape[0], side)
    B = _area_matrix(img.shape[1], side)
    return A @ img @ B.T


def preprocess(pixels, input_side: int = 64) -> np.ndarray:
    """Downsample and standardize one image into a flat feature vector."""
    x = box_downsample(pixels, input_side).ravel()
    return (x - x.mean()) / (x.std() + 1e-8)


def preprocess_batch(images, input_side: int = 64, flip: bool = False) -> np.ndarray:
    out = np.empty((len(images), input_side * input_side))
    for i, img in enumerate(images):
        out[i] = preprocess(hflip(img) if flip else img, input_side)
    return out


# -- network -------------------------------------------------------------------


def _dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def _forward(model: Model, X: np.ndarray, mask: np.ndarray | None):
    pre = X @ model.W1.T + model.b1
    h = np.maximum(pre, 0.0)
    hd = h * mask if mask is not None else h
    logits = hd @ model.W2.T + model.b2
    return logits, (pre, hd)


def forward(model: Model, features, train_mode: bool = False, dropout_seed=None) -> np.ndarray:
    """Logits for one feature vector or a batch (rows).

    In train mode each hidden unit is zeroed with probability ``dropout_p``
    and survivors are scaled by ``1 / (1 - dropout_p)``.
    """
    X = np.asarray(features, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.n_inputs:
        raise ValueError(f"feature length {X.shape[1]} does not match model input {model.n_inputs}")
    mask = None
    if train_mode and model.config.dropout_p > 0:
        mask = _dropout_mask((X.shape[0], model.W1.shape[0]), model.config.dropout_p, np.random.default_rng(dropout_seed))
    logits, _ = _forward(model, X, mask)
    return logits[0] if single else logits


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_loss(logits, y):
    """Cross-entropy of softmax(logits) against class ``y`` and its logit gradient.

    Batched input returns the mean loss over rows and the gradient of that
    mean.
    """
    f = np.asarray(logits, dtype=float)
    single = f.ndim == 1
    f = np.atleast_2d(f)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if y.shape[0] != f.shape[0] or y.min() < 0 or y.max() >= f.shape[1]:
        raise ValueError("class index out of range")
    shifted = f - f.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    losses = log_norm - shifted[rows, y]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, y] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / len(y)


def loss_and_grads(model: Model, X, y, mask=None):
    """Mean loss over the batch and gradients for W1, b1, W2, b2."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    logits, (pre, hd) = _forward(model, X, mask)
    loss, dlogits = softmax_loss(logits, y)
    dW2 = dlogits.T @ hd
    db2 = dlogits.sum(axis=0)
    dh = dlogits @ model.W2
    if mask is not None:
        dh = dh * mask
    dh = dh * (pre > 0)
    dW1 = dh.T @ X
    db1 = dh.sum(axis=0)
    return loss, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def sgd_step(model: Model, grads: dict, velocity: dict, lr: float, momentum: float) -> None:
    for name, param in model.params().items():
        v = velocity.setdefault(name, np.zeros_like(param))
        v *= momentum
        v -= lr * grads[name]
        param += v


def accuracy(model: Model, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    pred = np.argmax(forward(model, X), axis=1)
    return float(np.mean(pred == np.asarray(y)))


def train(
    model: Model,
    X,
    y,
    tcfg: TrainConfig,
    X_flip=None,
    X_val=None,
    y_val=None,
) -> tuple[Model, History]:
    """Mini-batch SGD with momentum; returns a trained copy and the per-epoch history.

    With ``tcfg.hflip_augment`` every batch is doubled by the mirrored
    features ``X_flip`` (same rows as ``X``), which keep the original labels.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("training set is empty")
    if y.min() < 0 or y.max() >= model.config.num_classes:
        raise ValueError("training label outside [0, num_classes)")
    if tcfg.hflip_augment:
        if X_flip is None:
            raise ValueError("hflip augmentation requested without mirrored features")
        X_flip = np.asarray(X_flip, dtype=float)
    model = model.copy()
    history = History()
    rng = np.random.default_rng(tcfg.seed)
    velocity: dict = {}
    p = model.config.dropout_p
    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(X))
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, len(X), tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            Xb, yb = X[idx], y[idx]
            if tcfg.hflip_augment:
                Xb = np.concatenate([Xb, X_flip[idx]])
                yb = np.concatenate([yb, yb])
            mask = _dropout_mask((len(Xb), model.W1.shape[0]), p, rng) if p > 0 else None
            loss, grads = loss_and_grads(model, Xb, yb, mask)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b)
            sgd_step(model, grads, velocity, tcfg.learning_rate, tcfg.momentum)
            if not all(np.all(np.isfinite(v)) for v in model.params().values()):
                raise TrainingDivergedError(epoch, b)
            total += loss * len(yb)
            seen += len(yb)
        val_acc = accuracy(model, X_val, y_val) if X_val is not None and len(X_val) else float("nan")
        history.epoch.append(epoch)
        history.train_loss.append(total / seen)
        history.val_accuracy.append(val_acc)
        history.samples.append(seen)
        log.info("epoch %d: loss %.4f, val acc %.4f, %d samples", epoch, total / seen, val_acc, seen)
    return model, history


def _result(probs: np.ndarray) -> PredictionResult:
    top = int(np.argmax(probs))
    if len(probs) > 1:
        second = float(np.partition(probs, -2)[-2])
    else:
        second = 0.0
    ratio = float(probs[top] / second) if second > 0 else float("inf")
    return PredictionResult(probs, top, ratio)


def predict_features(model: Model, features) -> list[PredictionResult]:
    probs = softmax(forward(model, np.atleast_2d(features)))
    return [_result(p) for p in probs]


def predict(model: Model, pixels) -> PredictionResult:
    """Eval-mode class probabilities for one image plus the top-2 confidence gate."""
    return predict_features(model, preprocess(pixels, model.config.input_side))[0]


# -- persistence ---------------------------------------------------------------


def save_model(model: Model, path) -> None:
    """Little-endian container: header then W1, b1, W2, b2 as row-major float64."""
    c = model.config
    header = _HEADER.pack(MAGIC, c.input_side, model.n_inputs, c.hidden_units, c.num_classes, c.dropout_p, c.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (model.W1, model.b1, model.W2, model.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ModelFormatError(f"{path}: file too short for a model header")
    magic, side, n_in, hidden, classes, p, seed = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ModelFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    shapes = [(hidden, n_in), (hidden,), (classes, hidden), (classes,)]
    need = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(blob) != need:
        raise ModelFormatError(f"{path}: corrupt model file ({len(blob)} bytes, expected {need})")
    arrays = []
    pos = _HEADER.size
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(s).astype(float))
        pos += 8 * n
    cfg = ModelConfig(num_classes=classes, input_side=side, hidden_units=hidden, dropout_p=p, seed=seed)
    return Model(*arrays, config=cfg)


def config_dict(cfg) -> dict:
    return asdict(cfg)
