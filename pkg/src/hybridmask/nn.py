"""A small fixed-layer neural network toolkit with explicit backward passes.

Parameters live in a :class:`ParamStore`, separate from the layer objects,
so one architecture can be evaluated against several parameter sets (the
reward computation needs a scratch copy of the recognition network).
"""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import LoadError, NumericFailure, RejectedInputError

CHECKPOINT_MAGIC = b"FMZ1"
COS_EPS = 1e-7


class ParamStore:
    """Named parameters with paired gradient and momentum buffers."""

    def __init__(self):
        self.values: OrderedDict[str, np.ndarray] = OrderedDict()
        self.grads: dict[str, np.ndarray] = {}
        self.velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> None:
        if name in self.values:
            raise RejectedInputError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.velocity[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def names(self) -> list[str]:
        return list(self.values)

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        self.grads[name] += grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, value in self.values.items():
            out.values[name] = value.copy()
            out.grads[name] = self.grads[name].copy()
            out.velocity[name] = self.velocity[name].copy()
        return out

    def identical(self, other: "ParamStore") -> bool:
        """Bitwise equality of parameter values."""
        return self.names() == other.names() and all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.values.values(), other.values.values())
        )

    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())

    def save(self, path) -> None:
        """Write the FMZ1 checkpoint: magic, then one record per tensor.

        Record: u64 name length, utf-8 name, u64 rank, u64 dims, float32 values
        (all little-endian).
        """
        chunks = [CHECKPOINT_MAGIC]
        for name, value in self.values.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<Q", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<Q", value.ndim))
            chunks.append(struct.pack(f"<{value.ndim}Q", *value.shape))
            chunks.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "ParamStore":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise LoadError(str(exc), path) from exc
        if data[:4] != CHECKPOINT_MAGIC:
            raise LoadError("not an FMZ1 checkpoint", path)
        store = cls()
        pos = 4
        try:
            while pos < len(data):
                (n,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                name = data[pos : pos + n].decode("utf-8")
                pos += n
                (rank,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                dims = struct.unpack_from(f"<{rank}Q", data, pos)
                pos += 8 * rank
                count = math.prod(dims)
                if pos + 4 * count > len(data):
                    raise LoadError(f"truncated tensor {name!r}", path)
                arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos)
                pos += 4 * count
                store.add(name, arr.reshape(dims))
        except (struct.error, UnicodeDecodeError) as exc:
            raise LoadError(f"corrupt checkpoint: {exc}", path) from exc
        return store


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericFailure("non-finite values", where)


class Dense:
    def __init__(self, name: str, n_in: int, n_out: int):
        self.name, self.n_in, self.n_out = name, n_in, n_out

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        scale = math.sqrt(2.0 / self.n_in)
        store.add(f"{self.name}.W", rng.normal(0.0, scale, (self.n_in, self.n_out)))
        store.add(f"{self.name}.b", np.zeros(self.n_out))

    def forward(self, store, x):
        return x @ store[f"{self.name}.W"] + store[f"{self.name}.b"], x

    def backward(self, store, x, dy):
        store.accumulate(f"{self.name}.W", x.T @ dy)
        store.accumulate(f"{self.name}.b", dy.sum(axis=0))
        return dy @ store[f"{self.name}.W"].T


class LeakyReLU:
    def __init__(self, name: str, slope: float = 0.1):
        self.name, self.slope = name, slope

    def init(self, store, rng) -> None:
        pass

    def forward(self, store, x):
        return np.where(x > 0, x, self.slope * x), x

    def backward(self, store, x, dy):
        return np.where(x > 0, dy, self.slope * dy)


class Flatten:
    def __init__(self, name: str = "flatten"):
        self.name = name

    def init(self, store, rng) -> None:
        pass

    def forward(self, store, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, store, shape, dy):
        return dy.reshape(shape)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init(store, rng)

    def forward(self, store, x):
        caches = []
        # Overflow is reported as NumericFailure below, not as a warning.
        with np.errstate(over="ignore", invalid="ignore"):
            for layer in self.layers:
                x, cache = layer.forward(store, x)
                _check_finite(x, layer.name)
                caches.append(cache)
        return x, caches

    def backward(self, store, caches, dy):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(store, cache, dy)
        return dy


def mlp(name: str, sizes, slope: float = 0.1) -> Sequential:
    """Flatten, then dense layers of ``sizes`` with leaky-ReLU between them."""
    layers = [Flatten(f"{name}.flatten")]
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        if i:
            layers.append(LeakyReLU(f"{name}.act{i}", slope))
        layers.append(Dense(f"{name}.fc{i}", a, b))
    return Sequential(layers)


# --- softmax / cross-entropy -------------------------------------------------


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(logits, axis=-1):
    return np.exp(log_softmax(logits, axis=axis))


def soft_cross_entropy(logits, label) -> float:
    """``-sum_i w_i log softmax(logits)[c_i]`` for one sample."""
    logp = log_softmax(logits)
    return float(-sum(w * logp[c] for c, w in label.entries))


def soft_cross_entropy_batch(logits, targets):
    """Mean soft-label cross-entropy over a batch and its logit gradient.

    ``targets`` is a ``(batch, classes)`` matrix of label weights.
    """
    logp = log_softmax(logits)
    n = logits.shape[0]
    loss = float(-(targets * logp).sum() / n)
    grad = (np.exp(logp) * targets.sum(axis=1, keepdims=True) - targets) / n
    return loss, grad


# --- MixUp-aware ArcFace -----------------------------------------------------


@dataclass(frozen=True)
class ArcFaceConfig:
    scale: float = 64.0
    margin: float = 0.5
    class_count: int = 2

    def __post_init__(self):
        if not self.scale > 0:
            raise RejectedInputError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.margin < math.pi / 2:
            raise RejectedInputError(f"margin must be in [0, pi/2), got {self.margin}")
        if self.class_count < 1:
            raise RejectedInputError("class_count must be at least 1")


def _l2_normalize(x, axis):
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    return x / norm, norm


def _l2_normalize_backward(xn, norm, dxn, axis):
    return (dxn - xn * (xn * dxn).sum(axis=axis, keepdims=True)) / norm


def _arcface_forward(features, class_weights, targets, cfg: ArcFaceConfig):
    features = np.asarray(features, dtype=np.float64)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if np.any((features * features).sum(axis=1) == 0):
        raise RejectedInputError("zero-norm feature row")
    if np.any((class_weights * class_weights).sum(axis=0) == 0):
        raise RejectedInputError("zero-norm class weight column")
    xn, xnorm = _l2_normalize(features, 1)
    wn, wnorm = _l2_normalize(class_weights, 0)
    fc = xn @ wn
    if cfg.margin == 0.0:
        logits = cfg.scale * fc
        gprime = inside = None
    else:
        c = np.clip(fc, -1.0 + COS_EPS, 1.0 - COS_EPS)
        theta = np.arccos(c)
        delta = np.cos(theta + cfg.margin) - c
        logits = cfg.scale * (fc + targets * delta)
        gprime = np.sin(theta + cfg.margin) / np.sin(theta)
        inside = (fc == c).astype(np.float64)
    cache = (xn, xnorm, wn, wnorm, targets, gprime, inside)
    return logits, cache


def _arcface_backward(cache, dlogits, cfg: ArcFaceConfig):
    xn, xnorm, wn, wnorm, targets, gprime, inside = cache
    if gprime is None:
        dfc = cfg.scale * dlogits
    else:
        dfc = cfg.scale * dlogits * (1.0 + targets * (gprime - 1.0) * inside)
    dxn = dfc @ wn.T
    dwn = xn.T @ dfc
    return (
        _l2_normalize_backward(xn, xnorm, dxn, 1),
        _l2_normalize_backward(wn, wnorm, dwn, 0),
    )


def arcface_mix_metric(features, class_weights, labels, cfg: ArcFaceConfig) -> np.ndarray:
    """MixUp-based ArcFace logits.

    ``s * sum_i co_i * (fc + onehot(gt_i) * (cos(theta_i + m) - cos(theta_i)))``
    where ``fc`` are cosine logits of L2-normalized features (rows) and class
    weights (columns). ``labels`` is a list of :class:`SoftLabel` or an
    equivalent dense ``(batch, classes)`` weight matrix.
    """
    targets = _as_targets(labels, np.shape(class_weights)[1])
    return _arcface_forward(features, class_weights, targets, cfg)[0]


def _as_targets(labels, class_count):
    if isinstance(labels, np.ndarray):
        return labels.astype(np.float64)
    return np.stack([lab.to_dense(class_count) for lab in labels])


class ArcFaceHead:
    def __init__(self, name: str, dim: int, cfg: ArcFaceConfig):
        self.name, self.dim, self.cfg = name, dim, cfg

    @property
    def weight_name(self) -> str:
        return f"{self.name}.W"

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        store.add(self.weight_name, rng.normal(0.0, 1.0, (self.dim, self.cfg.class_count)))

    def forward(self, store, features, targets):
        return _arcface_forward(features, store[self.weight_name], targets, self.cfg)

    def backward(self, store, cache, dlogits):
        dx, dw = _arcface_backward(cache, dlogits, self.cfg)
        store.accumulate(self.weight_name, dw)
        return dx

    def cosine(self, store, features) -> np.ndarray:
        xn, _ = _l2_normalize(np.asarray(features, dtype=np.float64), 1)
        wn, _ = _l2_normalize(store[self.weight_name], 0)
        return xn @ wn


# --- training plumbing -------------------------------------------------------


def forward_backward(net, store: ParamStore, x, loss_fn) -> float:
    """Run ``net`` on ``x``, apply ``loss_fn(output) -> (loss, d_output)``, backprop.

    Gradients are accumulated into ``store``.
    """
    out, caches = net.forward(store, np.asarray(x, dtype=np.float64))
    loss, dout = loss_fn(out)
    if not math.isfinite(loss):
        raise NumericFailure(f"loss is {loss}", net.layers[-1].name)
    net.backward(store, caches, dout)
    return loss


def sgd_step(store: ParamStore, lr: float, momentum: float = 0.9, weight_decay: float = 1e-4) -> None:
    """Classical momentum SGD with L2 decay folded into the gradient; zeroes grads."""
    updates = {}
    for name, value in store.values.items():
        with np.errstate(over="ignore", invalid="ignore"):
            g = store.grads[name] + weight_decay * value
            v = momentum * store.velocity[name] + g
            new = value - lr * v
        if not np.all(np.isfinite(new)):
            raise NumericFailure("non-finite parameter update", name)
        updates[name] = (new, v)
    for name, (new, v) in updates.items():
        store.values[name] = new
        store.velocity[name] = v
    store.zero_grad()


class FaceNet:
    """Dense backbone producing an embedding, followed by the ArcFace head."""

    def __init__(self, input_dim: int, arc: ArcFaceConfig, hidden=(256, 64), slope: float = 0.1):
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.arc = arc
        self.backbone = mlp("fr", (self.input_dim, *self.hidden), slope)
        self.head = ArcFaceHead("fr.arc", self.hidden[-1], arc)

    def init(self, rng: np.random.Generator) -> ParamStore:
        store = ParamStore()
        self.backbone.init(store, rng)
        self.head.init(store, rng)
        return store

    def embed(self, store, x) -> np.ndarray:
        return self.backbone.forward(store, np.asarray(x, dtype=np.float64))[0]

    def loss(self, store, x, targets) -> float:
        logits, _ = self.head.forward(store, self.embed(store, x), targets)
        return soft_cross_entropy_batch(logits, targets)[0]

    def loss_and_grad(self, store, x, targets) -> float:
        emb, caches = self.backbone.forward(store, np.asarray(x, dtype=np.float64))
        logits, hcache = self.head.forward(store, emb, targets)
        loss, dlogits = soft_cross_entropy_batch(logits, targets)
        if not math.isfinite(loss):
            raise NumericFailure(f"loss is {loss}", self.head.name)
        demb = self.head.backward(store, hcache, dlogits)
        self.backbone.backward(store, caches, demb)
        return loss

    def predict(self, store, x) -> np.ndarray:
        return self.head.cosine(store, self.embed(store, x)).argmax(axis=1)

    def accuracy(self, store, x, labels) -> float:
        labels = np.asarray(labels)
        if labels.size == 0:
            return float("nan")
        return float(np.mean(self.predict(store, x) == labels))
