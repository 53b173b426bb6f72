"""Small classifier stack on top of the autodiff engine.

Dense and 3x3-conv architectures, soft-target cross entropy, momentum SGD
and a flat binary checkpoint format. Parameters are stored in float32 by
default; losses and probabilities reported to callers are accumulated in
float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLabelError, NonFiniteError, ShapeMismatchError
from .tensor import Tensor, soft_cross_entropy_graph

LOG_FLOOR = 1e-12

CHECKPOINT_MAGIC = b"ALNN"
CHECKPOINT_VERSION = 1


@dataclass
class Prediction:
    """Per-sample classifier output: full probability vector (float64),
    the argmax class and its probability."""

    probabilities: np.ndarray
    predicted_class: int
    confidence: float


# ---------------------------------------------------------------------------
# layers

class Dense:
    def __init__(self, n_in, n_out, rng, dtype=np.float32):
        scale = np.sqrt(2.0 / n_in)
        self.w = Tensor((rng.standard_normal((n_in, n_out)) * scale).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def apply(self, x: Tensor) -> Tensor:
        return (x @ self.w) + self.b

    def descriptor(self):
        return f"dense({self.w.shape[0]}->{self.w.shape[1]})"


class Conv:
    def __init__(self, c_in, c_out, rng, k=3, dtype=np.float32):
        scale = np.sqrt(2.0 / (c_in * k * k))
        self.w = Tensor((rng.standard_normal((c_out, c_in, k, k)) * scale).astype(dtype),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def apply(self, x: Tensor) -> Tensor:
        return x.conv2d(self.w, self.b)

    def descriptor(self):
        co, ci, k, _ = self.w.shape
        return f"conv{k}x{k}({ci}->{co})"


class ReLU:
    def params(self):
        return []

    def apply(self, x: Tensor) -> Tensor:
        return x.relu()

    def descriptor(self):
        return "relu"


class MaxPool2:
    def params(self):
        return []

    def apply(self, x: Tensor) -> Tensor:
        return x.maxpool2()

    def descriptor(self):
        return "maxpool2"


class Flatten:
    def params(self):
        return []

    def apply(self, x: Tensor) -> Tensor:
        return x.reshape(x.shape[0], -1)

    def descriptor(self):
        return "flatten"


class Model:
    """Layer list plus named parameter access. `input_shape` is the per-sample
    shape (C, H, W) the model accepts; `n_classes` the output width."""

    def __init__(self, layers, input_shape, n_classes):
        self.layers = layers
        self.input_shape = tuple(input_shape)
        self.n_classes = n_classes
        self._velocity = {}

    def parameters(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params():
                out[f"{i}.{name}"] = p
        return out

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(p.shape)) for p in self.parameters().values())

    @property
    def architecture(self):
        return [layer.descriptor() for layer in self.layers]

    def apply(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.apply(x)
        return x

    def logits(self, batch: np.ndarray) -> np.ndarray:
        self._check_batch(batch)
        return self.apply(Tensor(batch)).data

    def _check_batch(self, batch: np.ndarray):
        if batch.ndim != 1 + len(self.input_shape) or batch.shape[1:] != self.input_shape:
            raise ShapeMismatchError(
                f"batch shape {batch.shape} does not match model input {self.input_shape}")


def build_mlp(input_shape, hidden, n_classes, rng, dtype=np.float32) -> Model:
    n_in = int(np.prod(input_shape))
    layers = [Flatten()]
    for h in hidden:
        layers += [Dense(n_in, h, rng, dtype=dtype), ReLU()]
        n_in = h
    layers.append(Dense(n_in, n_classes, rng, dtype=dtype))
    return Model(layers, input_shape, n_classes)


def build_convnet(input_shape, channels, fc_width, n_classes, rng,
                  dtype=np.float32) -> Model:
    """Two (or more) 3x3 conv blocks with 2x2 pooling, then a dense head."""
    c, h, w = input_shape
    layers = []
    for c_out in channels:
        layers += [Conv(c, c_out, rng, dtype=dtype), ReLU(), MaxPool2()]
        c, h, w = c_out, h // 2, w // 2
    layers.append(Flatten())
    n_in = c * h * w
    if fc_width:
        layers += [Dense(n_in, fc_width, rng, dtype=dtype), ReLU()]
        n_in = fc_width
    layers.append(Dense(n_in, n_classes, rng, dtype=dtype))
    return Model(layers, input_shape, n_classes)


# ---------------------------------------------------------------------------
# forward / loss / gradients / sgd

def probabilities(model: Model, batch: np.ndarray) -> np.ndarray:
    """Softmax probabilities as float64, one row per sample."""
    logits = model.logits(batch).astype(np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: Model, batch: np.ndarray) -> list[Prediction]:
    probs = probabilities(model, batch)
    preds = probs.argmax(axis=1)
    return [Prediction(probabilities=probs[i],
                       predicted_class=int(preds[i]),
                       confidence=float(probs[i, preds[i]]))
            for i in range(probs.shape[0])]


def _check_simplex(target: np.ndarray, tol: float = 1e-6):
    if abs(float(target.sum()) - 1.0) > tol or float(target.min()) < -tol:
        raise InvalidLabelError(
            f"target is off the simplex: sum={target.sum():.8f}, min={target.min():.8f}")


def loss_soft_ce(prediction: Prediction, target: np.ndarray) -> float:
    """-sum_k target_k * log(p_k), probabilities floored at 1e-12."""
    target = np.asarray(target, dtype=np.float64)
    if target.shape != prediction.probabilities.shape:
        raise ShapeMismatchError(
            f"target shape {target.shape} vs probabilities {prediction.probabilities.shape}")
    _check_simplex(target)
    p = np.maximum(prediction.probabilities, LOG_FLOOR)
    return float(-(target * np.log(p)).sum())


@dataclass
class Grads:
    """Reverse-mode gradients of the mean soft-CE loss over a batch."""

    params: dict = field(default_factory=dict)
    inputs: np.ndarray | None = None
    loss: float = 0.0


def gradients(model: Model, batch: np.ndarray, targets: np.ndarray,
              wrt: str = "params") -> Grads:
    """Gradients of mean loss_soft_ce over the batch.

    wrt: "params", "input" or "both". Input gradients feed the attack code;
    parameter gradients feed sgd_step."""
    model._check_batch(batch)
    targets = np.asarray(targets)
    if targets.shape != (batch.shape[0], model.n_classes):
        raise ShapeMismatchError(
            f"targets shape {targets.shape}, expected {(batch.shape[0], model.n_classes)}")
    sums = targets.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6) or float(targets.min()) < -1e-6:
        raise InvalidLabelError("at least one target is off the simplex")

    want_params = wrt in ("params", "both")
    want_input = wrt in ("input", "both")
    params = model.parameters()
    if not want_params:
        for p in params.values():
            p.requires_grad = False
    x = Tensor(np.asarray(batch, dtype=next(iter(params.values())).data.dtype),
               requires_grad=want_input)
    try:
        for p in params.values():
            p.grad = None
        loss = soft_cross_entropy_graph(model.apply(x),
                                        Tensor(targets.astype(x.data.dtype)))
        loss.backward()
    finally:
        for p in params.values():
            p.requires_grad = True
    out = Grads(loss=float(loss.data))
    if want_params:
        out.params = {name: p.grad if p.grad is not None else np.zeros_like(p.data)
                      for name, p in params.items()}
    if want_input:
        out.inputs = x.grad if x.grad is not None else np.zeros_like(x.data)
    return out


def sgd_step(model: Model, grads: Grads, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> Model:
    """In-place momentum SGD: v <- momentum*v + (g + wd*p); p <- p - lr*v."""
    params = model.parameters()
    for name, p in params.items():
        g = grads.params[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in {name}; aborting epoch")
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} vs param {p.shape} ({name})")
        d = g + weight_decay * p.data if weight_decay else g
        if momentum:
            v = model._velocity.get(name)
            v = d.astype(p.data.dtype) if v is None else momentum * v + d
            model._velocity[name] = v
            d = v
        p.data = p.data - (lr * d).astype(p.data.dtype)
    return model


# ---------------------------------------------------------------------------
# checkpoint io

def save_checkpoint(model: Model, path) -> None:
    """Flat binary: magic, version u32, tensor count u32, then per tensor a
    u32 rank, u32 dims and the little-endian float32 payload."""
    params = model.parameters()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for _, p in params.items():
            shape = p.data.shape
            f.write(struct.pack("<I", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
            f.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(model: Model, path) -> Model:
    """Load parameters saved by save_checkpoint into a structurally identical
    model (same layer shapes in the same order)."""
    from .errors import DataFormatError

    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError("bad checkpoint magic", offset=0)
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}", offset=4)
    params = model.parameters()
    if count != len(params):
        raise DataFormatError(
            f"checkpoint has {count} tensors, model has {len(params)}", offset=8)
    off = 12
    for name, p in params.items():
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        if shape != p.data.shape:
            raise DataFormatError(
                f"shape mismatch for {name}: file {shape}, model {p.data.shape}",
                offset=off)
        n = int(np.prod(shape)) if rank else 1
        vals = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += 4 * n
        p.data = vals.reshape(shape).astype(p.data.dtype)
    if off != len(blob):
        raise DataFormatError("trailing bytes in checkpoint", offset=off)
    model._velocity = {}
    return model
