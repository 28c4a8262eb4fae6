"""A small numpy classifier used as the network under attack.

Layers operate on batches ``(N, ...)``.  Weights are kept as float64 arrays
holding float32-representable values, so the 32-bit model file round-trips
losslessly while every forward and backward pass runs in double precision.
"""
from __future__ import annotations

import json
import logging
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    CorruptModelError,
    LabelError,
    ModelVersionError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from .image import RGB, NoiseField, RgbImage

log = logging.getLogger(__name__)


def _f32(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float32).astype(np.float64)


# --- layers ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    kind = "dense"

    @property
    def params(self):
        return (self.weight, self.bias)

    def with_params(self, params):
        return Dense(*params)

    def descriptor(self):
        return {"type": "dense", "in": int(self.weight.shape[1]), "out": int(self.weight.shape[0])}

    def output_shape(self, shape):
        if shape != (self.weight.shape[1],):
            raise ShapeMismatchError(f"dense layer expects ({self.weight.shape[1]},), got {shape}")
        return (self.weight.shape[0],)

    def forward(self, x):
        return x @ self.weight.T + self.bias, x

    def backward(self, dy, cache):
        x = cache
        return dy @ self.weight, (dy.T @ x, dy.sum(axis=0))


@dataclass(frozen=True, eq=False)
class Conv2D:
    """Valid (unpadded) cross-correlation with a square kernel."""

    weight: np.ndarray  # (out, in, k, k)
    bias: np.ndarray  # (out,)
    stride: int = 1
    kind = "conv"

    @property
    def params(self):
        return (self.weight, self.bias)

    def with_params(self, params):
        return Conv2D(params[0], params[1], self.stride)

    def descriptor(self):
        out, cin, k, _ = self.weight.shape
        return {"type": "conv", "in": int(cin), "out": int(out), "kernel": int(k), "stride": int(self.stride)}

    def output_shape(self, shape):
        out, cin, k, _ = self.weight.shape
        if len(shape) != 3 or shape[0] != cin or shape[1] < k or shape[2] < k:
            raise ShapeMismatchError(f"conv layer expects ({cin}, >={k}, >={k}), got {shape}")
        return (out, (shape[1] - k) // self.stride + 1, (shape[2] - k) // self.stride + 1)

    def forward(self, x):
        out, cin, k, _ = self.weight.shape
        s = self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]  # (N, C, Ho, Wo, k, k)
        n, _, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * k * k)
        y = cols @ self.weight.reshape(out, -1).T + self.bias
        return y.reshape(n, ho, wo, out).transpose(0, 3, 1, 2), (x.shape, cols)

    def backward(self, dy, cache):
        xshape, cols = cache
        out, cin, k, _ = self.weight.shape
        s = self.stride
        n, _, ho, wo = dy.shape
        dy2 = dy.transpose(0, 2, 3, 1).reshape(n * ho * wo, out)
        dw = (dy2.T @ cols).reshape(self.weight.shape)
        db = dy2.sum(axis=0)
        dcols = (dy2 @ self.weight.reshape(out, -1)).reshape(n, ho, wo, cin, k, k)
        dx = np.zeros(xshape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx, (dw, db)


@dataclass(frozen=True, eq=False)
class ReLU:
    kind = "relu"
    params = ()

    def with_params(self, params):
        return self

    def descriptor(self):
        return {"type": "relu"}

    def output_shape(self, shape):
        return shape

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, ()


@dataclass(frozen=True, eq=False)
class Flatten:
    kind = "flatten"
    params = ()

    def with_params(self, params):
        return self

    def descriptor(self):
        return {"type": "flatten"}

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        return dy.reshape(cache), ()


# --- model -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Model:
    layers: tuple
    input_shape: tuple[int, int, int]  # (channels, height, width)
    class_names: tuple[str, ...]
    train_accuracy: float | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (self.num_classes,):
            raise ShapeMismatchError(f"layers produce {shape}, expected ({self.num_classes},) logits")
        for layer in self.layers:
            for p in layer.params:
                if not np.all(np.isfinite(p)):
                    raise ValueError("model weights must be finite")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def forward(self, x: np.ndarray):
        """Batch forward pass; returns logits ``(N, K)`` and per-layer caches."""
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, dlogits: np.ndarray, caches):
        """Returns the input gradient and per-layer parameter gradients."""
        grads = []
        d = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            d, g = layer.backward(d, cache)
            grads.append(g)
        return d, grads[::-1]

    def with_params(self, params) -> "Model":
        layers = [layer.with_params(p) for layer, p in zip(self.layers, params)]
        return replace(self, layers=tuple(layers), train_accuracy=None)

    @property
    def params(self):
        return [layer.params for layer in self.layers]


def _batch(m: Model, img: RgbImage) -> np.ndarray:
    if (3, img.height, img.width) != m.input_shape:
        raise ShapeMismatchError(f"image (3, {img.height}, {img.width}) does not match model input {m.input_shape}")
    return img.data[None]


def _check_label(m: Model, label) -> int:
    if isinstance(label, (bool, np.bool_)) or not isinstance(label, (int, np.integer)):
        raise LabelError(f"label must be an integer, got {label!r}")
    if not 0 <= label < m.num_classes:
        raise LabelError(f"label {label} outside [0, {m.num_classes})")
    return int(label)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_logits(m: Model, img: RgbImage) -> np.ndarray:
    return m.forward(_batch(m, img))[0][0]


def predict_class(m: Model, img: RgbImage) -> int:
    # np.argmax returns the first maximum, i.e. the lowest index on ties.
    return int(np.argmax(predict_logits(m, img)))


def _ce_dlogits(z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = softmax(z)
    rows = np.arange(len(labels))
    p[rows, labels] = 0.0
    # p_y - 1 underflows to 0 once p_y rounds to 1; sum the others instead.
    p[rows, labels] = -p.sum(axis=1)
    return p


def _ce_loss(z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return lse - z[np.arange(len(labels)), labels]


def cross_entropy_loss(m: Model, img: RgbImage, label) -> float:
    label = _check_label(m, label)
    z = m.forward(_batch(m, img))[0]
    return float(_ce_loss(z, np.array([label]))[0])


def logit_gradient(m: Model, img: RgbImage, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of ``dlogits . Z(img)`` with respect to the image planes."""
    z, caches = m.forward(_batch(m, img))
    dx, _ = m.backward(np.asarray(dlogits, dtype=np.float64)[None], caches)
    return dx[0]


def input_gradient(m: Model, img: RgbImage, label) -> NoiseField:
    """Exact gradient of the cross-entropy loss with respect to every input value."""
    label = _check_label(m, label)
    z, caches = m.forward(_batch(m, img))
    dx, _ = m.backward(_ce_dlogits(z, np.array([label])), caches)
    return NoiseField(dx[0], RGB)


# --- construction ----------------------------------------------------------


def init_model(architecture, input_shape, class_names, seed: int = 0) -> Model:
    """Build a model from layer descriptors with He-initialised weights.

    ``architecture`` is a list of dicts like ``{"type": "conv", "out": 8,
    "kernel": 5, "stride": 2}``; ``in`` sizes are inferred.  The final dense
    layer's ``out`` may be omitted and defaults to the class count.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(input_shape)
    layers = []
    for i, spec in enumerate(architecture):
        t = spec["type"]
        if t == "conv":
            cin, k = shape[0], int(spec["kernel"])
            out = int(spec["out"])
            w = rng.normal(0.0, np.sqrt(2.0 / (cin * k * k)), (out, cin, k, k))
            layer = Conv2D(_f32(w), np.zeros(out), int(spec.get("stride", 1)))
        elif t == "dense":
            if len(shape) != 1:
                raise ShapeMismatchError("dense layer needs flattened input")
            out = int(spec.get("out", len(class_names)))
            w = rng.normal(0.0, np.sqrt(2.0 / shape[0]), (out, shape[0]))
            layer = Dense(_f32(w), np.zeros(out))
        elif t == "relu":
            layer = ReLU()
        elif t == "flatten":
            layer = Flatten()
        else:
            raise ValueError(f"unknown layer type {t!r} at position {i}")
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Model(tuple(layers), tuple(input_shape), tuple(class_names))


REFERENCE_ARCHITECTURE = [
    {"type": "conv", "out": 8, "kernel": 5, "stride": 2},
    {"type": "relu"},
    {"type": "conv", "out": 16, "kernel": 3, "stride": 2},
    {"type": "relu"},
    {"type": "flatten"},
    {"type": "dense", "out": 32},
    {"type": "relu"},
    {"type": "dense"},
]


# --- toy dataset -----------------------------------------------------------

SHAPE_CLASSES = ("disk", "square", "stripes", "cross", "ring", "triangle")


@dataclass(frozen=True, eq=False)
class ToyDataset:
    images: list
    labels: np.ndarray
    seed: int | None
    class_names: tuple[str, ...]

    def __len__(self):
        return len(self.images)

    def stack(self) -> np.ndarray:
        return np.stack([im.data for im in self.images])

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256(self.stack().tobytes())
        h.update(np.asarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


def _shape_mask(kind: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    d = np.hypot(dx, dy)
    box = (np.abs(dx) < r) & (np.abs(dy) < r)
    if kind == "disk":
        return d < r
    if kind == "square":
        return (np.abs(dx) < 0.85 * r) & (np.abs(dy) < 0.85 * r)
    if kind == "stripes":
        band = np.floor((dy + r) / (r / 2.5)).astype(int)
        return box & (band % 2 == 0)
    if kind == "cross":
        return box & ((np.abs(dx) < r / 3) | (np.abs(dy) < r / 3))
    if kind == "ring":
        return (d < r) & (d > 0.55 * r)
    if kind == "triangle":
        return (dy > -r) & (dy < r) & (np.abs(dx) < (dy + r) / 2)
    raise ValueError(kind)


def generate_toy_dataset(seed: int, count: int, size: int = 32, class_count: int = 3) -> ToyDataset:
    """Bright shapes of random hue on dark coloured backgrounds.

    The class is the shape; position, scale, both colours and pixel noise are
    jittered, so a classifier must rely on spatial structure.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if size < 8:
        raise ValueError("size must be at least 8")
    if not 2 <= class_count <= len(SHAPE_CLASSES):
        raise ValueError(f"class_count must lie in [2, {len(SHAPE_CLASSES)}]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % class_count)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    images = []
    centre = (size - 1) / 2.0
    for label in labels:
        cx, cy = centre + rng.uniform(-size / 8, size / 8, 2)
        r = rng.uniform(0.22, 0.32) * size
        fg = rng.uniform(0.55, 1.0, 3)
        bg = rng.uniform(0.0, 0.35, 3)
        inside = _shape_mask(SHAPE_CLASSES[label], xx - cx, yy - cy, r)
        planes = np.where(inside[None], fg[:, None, None], bg[:, None, None])
        planes = planes + rng.normal(0.0, 0.03, planes.shape)
        images.append(RgbImage(np.clip(planes, 0.0, 1.0)))
    return ToyDataset(images, labels.astype(np.int64), seed, SHAPE_CLASSES[:class_count])


# --- training --------------------------------------------------------------


def accuracy(m: Model, data: ToyDataset) -> float:
    z = m.forward(data.stack())[0]
    return float(np.mean(np.argmax(z, axis=1) == data.labels))


def train(
    m: Model,
    data: ToyDataset,
    epochs: int = 30,
    learning_rate: float = 0.05,
    seed: int = 0,
    batch_size: int = 32,
    momentum: float = 0.9,
) -> Model:
    """Mini-batch SGD with momentum on the mean cross-entropy."""
    x_all = data.stack()
    if x_all.shape[1:] != m.input_shape:
        raise ShapeMismatchError(f"dataset images {x_all.shape[1:]} do not match model input {m.input_shape}")
    y_all = np.asarray(data.labels)
    if epochs == 0:
        return m
    rng = np.random.default_rng(seed)
    params = [[p.copy() for p in lp] for lp in m.params]
    velocity = [[np.zeros_like(p) for p in lp] for lp in params]
    current = m
    for epoch in range(epochs):
        order = rng.permutation(len(y_all))
        total = 0.0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            x, y = x_all[idx], y_all[idx]
            z, caches = current.forward(x)
            loss = float(_ce_loss(z, y).mean())
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            _, grads = current.backward(_ce_dlogits(z, y) / len(idx), caches)
            for lp, lv, lg in zip(params, velocity, grads):
                for p, v, g in zip(lp, lv, lg):
                    v *= momentum
                    v -= learning_rate * g
                    p += v
            current = m.with_params([tuple(lp) for lp in params])
        log.debug("epoch %d loss %.4f", epoch, total / len(y_all))
    final = m.with_params([tuple(_f32(p) for p in lp) for lp in params])
    acc = accuracy(final, data)
    log.info("trained %d epochs, train accuracy %.4f", epochs, acc)
    return replace(final, train_accuracy=acc)


REFERENCE_TRAINING = {"seed": 0, "count": 600, "size": 32, "class_count": 3, "epochs": 25, "learning_rate": 0.03}


def reference_model() -> Model:
    """The pinned toy network used by the reference sweep."""
    cfg = REFERENCE_TRAINING
    data = generate_toy_dataset(cfg["seed"], cfg["count"], cfg["size"], cfg["class_count"])
    m = init_model(REFERENCE_ARCHITECTURE, (3, cfg["size"], cfg["size"]), data.class_names, seed=cfg["seed"])
    return train(m, data, epochs=cfg["epochs"], learning_rate=cfg["learning_rate"], seed=cfg["seed"])


# --- serialization ---------------------------------------------------------

MAGIC = b"CSHMODEL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHI")  # magic, version, descriptor length


def model_to_bytes(m: Model) -> bytes:
    desc = {
        "input_shape": list(m.input_shape),
        "class_names": list(m.class_names),
        "layers": [layer.descriptor() for layer in m.layers],
    }
    desc_bytes = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    weights = b"".join(np.asarray(p, dtype="<f4").tobytes() for lp in m.params for p in lp)
    body = _HEADER.pack(MAGIC, FORMAT_VERSION, len(desc_bytes)) + desc_bytes + weights
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(raw: bytes) -> Model:
    if len(raw) < _HEADER.size + 4:
        raise CorruptModelError("model file truncated")
    magic, version, desc_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptModelError("bad magic bytes")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"model format version {version} is not supported (expected {FORMAT_VERSION})")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptModelError("checksum mismatch (truncated or corrupt model file)")
    try:
        desc = json.loads(body[_HEADER.size : _HEADER.size + desc_len].decode("utf-8"))
        weights = np.frombuffer(body[_HEADER.size + desc_len :], dtype="<f4")
        offset = 0

        def take(shape):
            nonlocal offset
            n = int(np.prod(shape))
            if offset + n > weights.size:
                raise CorruptModelError("weight section too short")
            out = weights[offset : offset + n].astype(np.float64).reshape(shape)
            offset += n
            return out

        layers = []
        for spec in desc["layers"]:
            t = spec["type"]
            if t == "dense":
                w = take((spec["out"], spec["in"]))
                layers.append(Dense(w, take((spec["out"],))))
            elif t == "conv":
                w = take((spec["out"], spec["in"], spec["kernel"], spec["kernel"]))
                layers.append(Conv2D(w, take((spec["out"],)), int(spec["stride"])))
            elif t == "relu":
                layers.append(ReLU())
            elif t == "flatten":
                layers.append(Flatten())
            else:
                raise CorruptModelError(f"unknown layer type {t!r}")
        if offset != weights.size:
            raise CorruptModelError("trailing weight data")
        return Model(tuple(layers), tuple(desc["input_shape"]), tuple(desc["class_names"]))
    except (KeyError, TypeError, ValueError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"malformed model descriptor: {exc}") from exc


def save_model(m: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(m))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
