"""Network assembly, training, inference, and checkpoint persistence.

The classifier is a fixed 11-layer stack (input, three conv+maxpool pairs,
flatten, two hidden dense layers, softmax output).  Training is plain SGD
on batch-mean softmax cross-entropy; everything is deterministic given the
config seed.
"""

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import imaging, ops
from .dataset import CrackLevel
from .errors import (
    BuildError,
    CheckpointCorruptionError,
    CheckpointFormatError,
    ConfigError,
    TrainingDivergedError,
)

DEFAULT_MODEL_INPUT = (120, 160)  # (height, width); each divisible by 8


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer plan: conv(8)/pool/conv(16)/pool/conv(32)/pool/flatten/
    dense(64)/dense(32)/dense(3)+softmax over an RGB input."""

    input_shape: tuple = (3,) + DEFAULT_MODEL_INPUT  # (C, H, W)
    conv_filters: tuple = (8, 16, 32)
    dense_units: tuple = (64, 32)
    n_classes: int = 3

    def layer_names(self):
        names = ["input"]
        for i in range(len(self.conv_filters)):
            names += [f"conv{i + 1}", f"pool{i + 1}"]
        names.append("flatten")
        names += [f"dense{i + 1}" for i in range(len(self.dense_units))]
        names.append("output")
        return names

    def shape_trace(self):
        """Output shape after every layer past the input; raises BuildError
        if consecutive layers do not compose."""
        c, h, w = self.input_shape
        trace = []
        for i, f in enumerate(self.conv_filters):
            c = f
            trace.append((c, h, w))
            if h % 2 or w % 2:
                raise BuildError(f"pool{i + 1}: input {h}x{w} is not even")
            h, w = h // 2, w // 2
            trace.append((c, h, w))
        flat = c * h * w
        trace.append((flat,))
        for n in self.dense_units:
            trace.append((n,))
        trace.append((self.n_classes,))
        return trace

    @property
    def flat_width(self):
        c, h, w = self.input_shape
        return self.conv_filters[-1] * (h // 2 ** len(self.conv_filters)) * (
            w // 2 ** len(self.conv_filters))


@dataclass
class LayerParams:
    kind: str  # "conv" | "dense"
    name: str
    weights: np.ndarray
    bias: np.ndarray

    def param_count(self):
        return self.weights.size + self.bias.size


@dataclass
class ModelParams:
    spec: ArchitectureSpec
    layers: list = field(default_factory=list)

    def param_count(self):
        return sum(l.param_count() for l in self.layers)

    def all_finite(self):
        return all(np.isfinite(l.weights).all() and np.isfinite(l.bias).all()
                   for l in self.layers)


def build_network(spec=ArchitectureSpec(), seed=0):
    """Seeded Glorot-uniform initialization of every parameterized layer."""
    spec.shape_trace()  # composition check
    rng = np.random.default_rng(seed)
    layers = []
    c_in = spec.input_shape[0]
    for i, f in enumerate(spec.conv_filters):
        w = ops.glorot_uniform(rng, (f, c_in, 3, 3), fan_in=c_in * 9, fan_out=f * 9)
        layers.append(LayerParams("conv", f"conv{i + 1}", w, np.zeros(f, dtype=np.float32)))
        c_in = f
    n_in = spec.flat_width
    units = list(spec.dense_units) + [spec.n_classes]
    names = [f"dense{i + 1}" for i in range(len(spec.dense_units))] + ["output"]
    for name, n_out in zip(names, units):
        w = ops.glorot_uniform(rng, (n_out, n_in), fan_in=n_in, fan_out=n_out)
        layers.append(LayerParams("dense", name, w, np.zeros(n_out, dtype=np.float32)))
        n_in = n_out
    return ModelParams(spec=spec, layers=layers)


# ---------------------------------------------------------------------------
# Forward / backward


def forward(params, x, with_cache=False):
    """x: (N, C, H, W) float -> logits (N, n_classes)."""
    n_conv = len(params.spec.conv_filters)
    caches = []
    h = x
    for lp in params.layers[:n_conv]:
        pre = ops.conv2d_forward(h, lp.weights, lp.bias)
        act = ops.relu_forward(pre)
        if with_cache:
            caches.append((h, pre, act))
        h = ops.maxpool2d_forward(act)
    spatial = h.shape
    h = h.reshape(h.shape[0], -1)
    dense_layers = params.layers[n_conv:]
    for i, lp in enumerate(dense_layers):
        pre = ops.dense_forward(h, lp.weights, lp.bias)
        if with_cache:
            caches.append((h, pre))
        h = pre if i == len(dense_layers) - 1 else ops.relu_forward(pre)
    if with_cache:
        return h, (caches, spatial)
    return h


def backward(params, cache, d_logits):
    """Returns ((d_weights, d_bias) per layer ordered like params.layers,
    d_input)."""
    caches, spatial = cache
    n_conv = len(params.spec.conv_filters)
    dense_layers = params.layers[n_conv:]
    grads = [None] * len(params.layers)
    g = d_logits
    for i in reversed(range(len(dense_layers))):
        x_in, pre = caches[n_conv + i]
        if i != len(dense_layers) - 1:
            g = ops.relu_backward(pre, g)
        dw, db, g = ops.dense_backward(x_in, dense_layers[i].weights, g)
        grads[n_conv + i] = (dw, db)
    g = g.reshape(spatial)
    for i in reversed(range(n_conv)):
        x_in, pre, act = caches[i]
        g = ops.maxpool2d_backward(act, g)
        g = ops.relu_backward(pre, g)
        dw, db, g = ops.conv2d_backward(x_in, params.layers[i].weights, g)
        grads[i] = (dw, db)
    return grads, g


# ---------------------------------------------------------------------------
# Data plumbing and inference


def image_to_input(image, model_input):
    """uint8 (H, W, 3) -> float32 (3, h, w) scaled to [0, 1], resizing with
    align-corners bilinear sampling when dimensions differ."""
    h, w = model_input
    if image.shape[:2] != (h, w):
        image = imaging.resize_bilinear(image, out_w=w, out_h=h)
    return (image.astype(np.float32) / 255.0).transpose(2, 0, 1)


def predict_batch(params, x):
    """x: (N, C, H, W) -> (levels (N,) ints 1..3, probabilities (N, 3))."""
    logits = forward(params, x)
    probs = ops.softmax(logits)
    levels = probs.argmax(axis=1) + 1  # argmax takes the first max: ties go low
    return levels, probs


def predict(params, image):
    """Classify one uint8 RGB image; returns (CrackLevel, probabilities)."""
    model_input = params.spec.input_shape[1:]
    x = image_to_input(image, model_input)[None]
    levels, probs = predict_batch(params, x)
    return CrackLevel(int(levels[0])), probs[0]


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    model_input: tuple = DEFAULT_MODEL_INPUT  # (height, width)

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        h, w = self.model_input
        if h % 8 or w % 8:
            raise ConfigError(f"model_input {h}x{w} must be divisible by 8")


def load_split(manifest, manifest_dir, split, model_input):
    """Stack a manifest split into (x (N,3,h,w) float32, y (N,) class indices 0..2)."""
    records = [r for r in manifest.records if r.split == split]
    if not records:
        raise ConfigError(f"manifest has no records in split {split!r}")
    xs = np.stack([
        image_to_input(imaging.load_rgb_png(manifest_dir / r.image_path), model_input)
        for r in records
    ])
    ys = np.array([int(r.level) - 1 for r in records], dtype=np.int64)
    return xs, ys


def train(params, manifest, config, manifest_dir, log=None):
    """SGD over the manifest's train split; returns (params, history).

    history is a list of {"epoch", "train_loss", "val_accuracy"} dicts and
    covers every epoch.  The returned parameters are the snapshot from the
    epoch with the highest validation accuracy (earliest such epoch on
    ties), which makes the artifact robust to late-epoch oscillation at
    high fixed learning rates.  A learning rate of exactly 0 performs no
    updates (useful as a control).
    """
    model_input = params.spec.input_shape[1:]
    x_train, y_train = load_split(manifest, manifest_dir, "train", model_input)
    x_val, y_val = load_split(manifest, manifest_dir, "val", model_input)
    history = []
    best = None
    for epoch in range(config.epochs):
        rng = np.random.default_rng([int(config.seed), epoch])
        perm = rng.permutation(len(x_train))
        losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            logits, cache = forward(params, x_train[idx], with_cache=True)
            loss, d_logits = ops.softmax_xent_batch(logits, y_train[idx])
            losses.append(loss)
            if config.learning_rate > 0:
                grads, _ = backward(params, cache, d_logits)
                for lp, (dw, db) in zip(params.layers, grads):
                    lp.weights = ops.sgd_step(lp.weights, dw, config.learning_rate)
                    lp.bias = ops.sgd_step(lp.bias, db, config.learning_rate)
        if not params.all_finite():
            raise TrainingDivergedError(f"non-finite parameters after epoch {epoch}")
        val_pred, _ = predict_batch(params, x_val)
        val_acc = float((val_pred - 1 == y_val).mean())
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_accuracy": val_acc}
        history.append(entry)
        if best is None or val_acc > best[0]:
            best = (val_acc, [(lp.weights.copy(), lp.bias.copy()) for lp in params.layers])
        if log is not None:
            log(f"epoch {epoch + 1}/{config.epochs}  "
                f"loss {entry['train_loss']:.4f}  val_acc {val_acc:.4f}")
    if best is not None:
        for lp, (weights, bias) in zip(params.layers, best[1]):
            lp.weights = weights
            lp.bias = bias
    return params, history


# ---------------------------------------------------------------------------
# Checkpoint format: magic "TCK1"; u32 layer count; per layer a u8 kind tag
# (0 input, 1 conv, 2 dense), u8 name length + UTF-8 name, then for each of
# weights and bias: u32 rank, rank*u32 dims, product(dims) little-endian
# float32 values.  The kind-0 input entry carries the input shape in its
# "weights" dims and has no payload and no bias block.  Trailing u32 CRC32
# of all preceding bytes.

CHECKPOINT_MAGIC = b"TCK1"
KIND_TAGS = {"input": 0, "conv": 1, "dense": 2}
KIND_NAMES = {v: k for k, v in KIND_TAGS.items()}


def save_checkpoint(params, path):
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", len(params.layers) + 1)
    name = b"input"
    out += struct.pack("<BB", KIND_TAGS["input"], len(name)) + name
    out += struct.pack("<I", 3) + struct.pack("<3I", *params.spec.input_shape)
    for lp in params.layers:
        name = lp.name.encode("utf-8")
        out += struct.pack("<BB", KIND_TAGS[lp.kind], len(name)) + name
        for tensor in (lp.weights, lp.bias):
            out += struct.pack("<I", tensor.ndim)
            out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
            out += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CheckpointCorruptionError(f"truncated while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path):
    """Returns (ModelParams, ArchitectureSpec); validates CRC and structure."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8 or buf[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {buf[:4]!r}")
    if len(buf) < 8:
        raise CheckpointCorruptionError("file too short for CRC", len(buf))
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    actual_crc = zlib.crc32(buf[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointCorruptionError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            len(buf) - 4)
    rd = _Reader(buf[:-4])
    rd.pos = 4
    n_layers = rd.u32("layer count")
    input_shape = None
    layers = []
    for _ in range(n_layers):
        kind_tag, name_len = struct.unpack("<BB", rd.take(2, "layer header"))
        if kind_tag not in KIND_NAMES:
            raise CheckpointFormatError(f"{path}: unknown layer kind tag {kind_tag}")
        kind = KIND_NAMES[kind_tag]
        name = rd.take(name_len, "layer name").decode("utf-8")
        if kind == "input":
            rank = rd.u32("input rank")
            input_shape = struct.unpack(f"<{rank}I", rd.take(4 * rank, "input dims"))
            continue
        tensors = []
        for what in ("weights", "bias"):
            rank = rd.u32(f"{name} {what} rank")
            dims = struct.unpack(f"<{rank}I", rd.take(4 * rank, f"{name} {what} dims"))
            count = int(np.prod(dims)) if dims else 1
            raw = rd.take(4 * count, f"{name} {what} data")
            tensors.append(np.frombuffer(raw, dtype="<f4").reshape(dims).copy())
        layers.append(LayerParams(kind, name, tensors[0], tensors[1]))
    if rd.pos != len(rd.buf):
        raise CheckpointFormatError(f"{path}: {len(rd.buf) - rd.pos} trailing bytes")
    if input_shape is None or len(input_shape) != 3:
        raise CheckpointFormatError(f"{path}: missing or malformed input entry")
    conv_filters = tuple(l.weights.shape[0] for l in layers if l.kind == "conv")
    dense_shapes = [l.weights.shape[0] for l in layers if l.kind == "dense"]
    if not dense_shapes:
        raise CheckpointFormatError(f"{path}: no dense layers present")
    spec = ArchitectureSpec(input_shape=tuple(int(d) for d in input_shape),
                            conv_filters=conv_filters,
                            dense_units=tuple(dense_shapes[:-1]),
                            n_classes=dense_shapes[-1])
    return ModelParams(spec=spec, layers=layers), spec
